"""Command-line front end.

One subcommand per stage of the pipeline, so every piece can be driven and
inspected without writing Python:

    powermask identify  --profile sys1 --out model.json
    powermask synth     --model model.json --out controller.json
    powermask run       --condition MayaGaussianSinusoid --app 3 --out t.trace
    powermask campaign  --out campdir --runs 5
    powermask attack    --traces campdir/traces/NoisyBaseline --out mlp.npz
    powermask analyze   fft|changepoints|average --trace t.trace
    powermask report    --campaign campdir

Every failure exits nonzero after printing a single ``error: ...`` line on
stderr, so scripts can pattern-match without scraping tracebacks.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import attack as atk
from .analysis import averaging_study, change_points, detect_peaks, fft_magnitude
from .campaign import CampaignConfig, run_campaign
from .controller import ControllerMatrices, synthesize
from .harness import (CONDITIONS, MASK_FAMILY, load_trace, run_once,
                      save_trace)
from .mask import new_mask
from .plant import BUILTIN_PROFILES, load_profile
from .sysid import ArxModel, identify
from .workloads import builtin_suite


def _profile_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="sys1",
                   choices=sorted(BUILTIN_PROFILES),
                   help="built-in machine profile")


def _app(index: int):
    apps, videos = builtin_suite()
    suite = {w.app_id: w for w in apps + videos}
    if index not in suite:
        raise SystemExit(f"error: no built-in workload with app id {index}")
    return suite[index]


def _cmd_identify(args) -> int:
    profile = load_profile(args.profile)
    model, report = identify(profile, _app(args.app), length=args.length,
                             seed=args.seed)
    payload = {"model": model.to_dict(), "report": report}
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(f"holdout_fit={report['holdout_fit']:.4f} "
          f"poles_max_abs={report['poles_max_abs']:.4f}"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def _load_model(path) -> ArxModel:
    d = json.loads(Path(path).read_text())
    return ArxModel.from_dict(d.get("model", d))


def _cmd_synth(args) -> int:
    model = _load_model(args.model)
    ctrl = synthesize(model)
    if args.out:
        Path(args.out).write_text(
            json.dumps(ctrl.to_dict(), sort_keys=True, indent=2) + "\n")
    print(f"controller state_dim={ctrl.state_dim}"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def _controller_for(args, profile):
    if getattr(args, "controller", None):
        d = json.loads(Path(args.controller).read_text())
        return ControllerMatrices.from_dict(d)
    model, _ = identify(profile, _app(3), seed=args.seed + 123)
    return synthesize(model)


def _cmd_run(args) -> int:
    profile = load_profile(args.profile)
    workload = _app(args.app)
    if args.condition not in CONDITIONS:
        raise SystemExit(f"error: unknown condition {args.condition!r}; "
                         f"one of {', '.join(CONDITIONS)}")
    ctrl = mask = None
    fam = MASK_FAMILY.get(args.condition)
    if fam:
        ctrl = _controller_for(args, profile)
        mask = new_mask(fam, profile, seed=args.seed + 7)
    trace = run_once(workload, args.condition, profile, ctrl=ctrl, mask=mask,
                     seed=args.seed, length=args.length)
    out = args.out or f"app{args.app}_{args.condition}.trace"
    save_trace(trace, out)
    print(f"{len(trace)} samples, mean {trace.measured_w.mean():.2f} W "
          f"-> {out}")
    return 0


def _cmd_campaign(args) -> int:
    conditions = (tuple(args.conditions.split(","))
                  if args.conditions else CONDITIONS)
    apps = builtin_suite()[0][:args.apps] if args.apps else None
    cfg = CampaignConfig(out_dir=args.out, profile=args.profile,
                         conditions=conditions, apps=apps,
                         runs_per_app=args.runs, trace_length=args.length,
                         master_seed=args.seed,
                         segment_length=args.segment, epochs=args.epochs)
    out, summary = run_campaign(cfg)
    print(f"{summary['n_traces']} traces, {summary['n_failures']} failures "
          f"-> {out}/summary.json")
    return 0


def _gather_traces(root) -> list:
    paths = sorted(Path(root).rglob("*.trace"))
    if not paths:
        raise SystemExit(f"error: no .trace files under {root}")
    return [load_trace(p) for p in paths]


def _cmd_attack(args) -> int:
    profile = load_profile(args.profile)
    traces = _gather_traces(args.traces)
    samples = [s for tr in traces
               for s in atk.preprocess(tr, args.segment, 0.0, profile.tdp_w)]
    if args.model:
        mlp = atk.load_mlp(args.model)
        acc = atk.accuracy(mlp, samples)
        print(f"accuracy={acc:.4f} on {len(samples)} segments")
        return 0
    labels = sorted({s.label for s in samples})
    mlp = atk.init_mlp(samples[0].features.size, labels, seed=args.seed)
    _, report = atk.train(mlp, samples, epochs=args.epochs, seed=args.seed)
    if args.out:
        atk.save_mlp(mlp, args.out)
    print(f"train={report.train_accuracy:.4f} "
          f"val={report.val_accuracy:.4f} test={report.test_accuracy:.4f}"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def _cmd_analyze(args) -> int:
    if args.what == "average":
        traces = _gather_traces(args.trace)
        series: dict = {}
        cond = None
        for tr in traces:
            series.setdefault(tr.app_id, []).append(tr.measured_w)
            cond = tr.condition
        stats = averaging_study(series, cond,
                                min_runs=min(len(v) for v in series.values()))
        for app_id in sorted(stats):
            s = stats[app_id]
            print(f"app {app_id}: median {s.median:.4f} "
                  f"iqr [{s.q25:.4f}, {s.q75:.4f}] "
                  f"outliers {len(s.outliers)}")
        return 0
    trace = load_trace(args.trace)
    if args.what == "fft":
        spec = fft_magnitude(trace.measured_w)
        peaks = detect_peaks(spec, args.prominence)
        if args.out:
            rows = ["freq,magnitude\n"] + [
                f"{f:.6f},{m:.6f}\n"
                for f, m in zip(spec.freqs, spec.magnitude)]
            Path(args.out).write_text("".join(rows))
        print(f"{len(peaks)} peaks"
              + (f", top at {peaks[0].freq:.4f} cycles/sample"
                 if peaks else "")
              + (f" -> {args.out}" if args.out else ""))
    else:                                   # changepoints
        rep = change_points(trace.measured_w, penalty=args.penalty)
        print(f"{len(rep.boundaries)} boundaries: {rep.boundaries}")
    return 0


def _cmd_report(args) -> int:
    summary_path = Path(args.campaign) / "summary.json"
    if not summary_path.exists():
        raise SystemExit(f"error: {summary_path} not found; "
                         "run `powermask campaign` first")
    summary = json.loads(summary_path.read_text())
    over = summary.get("overhead")
    if over:
        print("condition              power_ratio  completion_ratio")
        for cond in CONDITIONS:
            if cond in over["power_ratio"]:
                cr = over["completion_ratio"][cond]
                print(f"{cond:22s} {over['power_ratio'][cond]:11.4f}  "
                      f"{cr if cr is None else format(cr, '16.4f')}")
    cls = summary.get("classifiers", {})
    for kind in ("noisy_trained", "adaptive"):
        rows = cls.get(kind)
        if rows:
            print(f"\n{kind} classifier accuracy")
            for cond in CONDITIONS:
                if cond in rows:
                    key = ("accuracy" if "accuracy" in rows[cond]
                           else "test_accuracy")
                    print(f"{cond:22s} {rows[cond][key]:.4f}")
    conf_dir = Path(args.campaign) / "confusion"
    names = sorted(p.name for p in conf_dir.glob("*.csv"))
    if names:
        print(f"\nconfusion matrices: {', '.join(names)}")
    print(f"\nfailures: {summary.get('n_failures', 0)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="powermask",
        description="Power-trace masking testbed: plant simulation, "
                    "controller synthesis, masked runs, and the attacks "
                    "they are scored against.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", help="excite the plant and fit its model")
    _profile_arg(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--app", type=int, default=3, help="workload app id")
    p.add_argument("--length", type=int, default=3000)
    p.add_argument("--out", help="write model JSON here")
    p.set_defaults(fn=_cmd_identify)

    p = sub.add_parser("synth", help="synthesize a controller from a model")
    p.add_argument("--model", required=True, help="model JSON from identify")
    p.add_argument("--out", help="write controller JSON here")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("run", help="simulate one run and save its trace")
    _profile_arg(p)
    p.add_argument("--condition", default="MayaGaussianSinusoid")
    p.add_argument("--app", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--controller", help="controller JSON (else fit inline)")
    p.add_argument("--out", help="trace file path")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("campaign", help="run the full experiment grid")
    _profile_arg(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=10, help="runs per app")
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--apps", type=int, default=None,
                   help="use only the first N built-in apps")
    p.add_argument("--conditions", help="comma-separated condition subset")
    p.add_argument("--segment", type=int, default=500)
    p.add_argument("--epochs", type=int, default=atk.DEFAULT_EPOCHS)
    p.set_defaults(fn=_cmd_campaign)

    p = sub.add_parser("attack", help="train or evaluate the classifier")
    _profile_arg(p)
    p.add_argument("--traces", required=True,
                   help="directory of .trace files")
    p.add_argument("--segment", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=atk.DEFAULT_EPOCHS)
    p.add_argument("--model", help="evaluate this saved model instead")
    p.add_argument("--out", help="save the trained model here (.npz)")
    p.set_defaults(fn=_cmd_attack)

    p = sub.add_parser("analyze", help="spectra, change points, averaging")
    p.add_argument("what", choices=("fft", "changepoints", "average"))
    p.add_argument("--trace", required=True,
                   help="trace file (a directory for `average`)")
    p.add_argument("--prominence", type=float, default=5.0)
    p.add_argument("--penalty", type=float, default=None)
    p.add_argument("--out", help="write columnar csv here (fft)")
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("report", help="print a campaign's tables")
    p.add_argument("--campaign", required=True, help="campaign directory")
    p.set_defaults(fn=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as exc:       # argparse or explicit one-liners
        raise exc
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
