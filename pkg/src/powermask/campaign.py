"""Campaign runner: traces, attacks, and analyses from one seeded config.

A campaign is the full experiment: generate every (condition, app, run)
trace, persist them with a hashed manifest, train the attacker both ways
(trained on noisy-baseline data, and adaptively per condition), and run the
observer-side analyses. Everything lands in one output directory whose
summary.json is byte-identical when the campaign is rerun with the same
config, which is the property the tests pin.

Seeds derive from (master_seed, condition, app, run) so adding or removing a
condition never shifts any other run's stream.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attack
from .analysis import averaging_study, change_points, detect_peaks, fft_magnitude
from .controller import ControllerDivergence, synthesize
from .harness import (BASELINE, CONDITIONS, MASK_FAMILY, NOISY_BASELINE,
                      overhead_report, phase_boundary_samples, run_once,
                      save_trace)
from .mask import new_mask
from .plant import load_profile
from .sysid import identify
from .workloads import builtin_suite

# Tolerance (samples) when matching detected change points to true phase
# boundaries, and the +-5 window's width used in the chance rate.
BOUNDARY_TOL = 5
PEAK_PROMINENCE = 5.0


@dataclass(frozen=True)
class CampaignConfig:
    """Everything a campaign needs; two configs that compare equal rerun
    identically apart from the output directory itself."""

    out_dir: str
    profile: str = "sys1"
    conditions: tuple = CONDITIONS
    apps: tuple | None = None          # None -> the built-in app suite
    runs_per_app: int = 10
    trace_length: int | None = None    # None -> each workload's own duration
    master_seed: int = 0
    segment_length: int = 500
    epochs: int = attack.DEFAULT_EPOCHS
    learn_rate: float = attack.DEFAULT_LEARN_RATE
    batch_size: int = attack.DEFAULT_BATCH
    hidden: tuple = attack.DEFAULT_HIDDEN

    def __post_init__(self):
        if self.runs_per_app < 1:
            raise ValueError("runs_per_app must be at least 1")
        unknown = [c for c in self.conditions if c not in CONDITIONS]
        if unknown:
            raise ValueError(f"unknown conditions {unknown}")

    def echo(self) -> dict:
        """Config as it appears in summary.json. out_dir is where the
        summary lives, not part of what it claims; echoing it would make
        otherwise-identical campaigns in two directories disagree."""
        return {
            "profile": self.profile if isinstance(self.profile, str)
            else "custom",
            "conditions": list(self.conditions),
            "n_apps": len(self._apps()),
            "runs_per_app": self.runs_per_app,
            "trace_length": self.trace_length,
            "master_seed": self.master_seed,
            "segment_length": self.segment_length,
            "epochs": self.epochs,
            "learn_rate": self.learn_rate,
            "batch_size": self.batch_size,
            "hidden": list(self.hidden),
        }

    def _apps(self) -> tuple:
        if self.apps is not None:
            return tuple(self.apps)
        return builtin_suite()[0]


def run_seed(master_seed: int, condition: str, app_id: int, run: int) -> int:
    """Stable per-run seed; indexed by the canonical condition list."""
    return (master_seed + 1_000_000 * (CONDITIONS.index(condition) + 1)
            + 1_000 * app_id + run)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _jsonsafe(obj):
    """NaN -> null so summary.json stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonsafe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonsafe(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def _train_eval(labels, samples, cfg: CampaignConfig, seed: int):
    mlp = attack.init_mlp(samples[0].features.size, labels, hidden=cfg.hidden,
                          seed=seed)
    _, report = attack.train(mlp, samples, epochs=cfg.epochs,
                             learn_rate=cfg.learn_rate,
                             batch_size=cfg.batch_size, seed=seed + 1)
    return mlp, report


def _confusion_csv(path: Path, labels, matrix: np.ndarray) -> None:
    rows = ["true\\predicted," + ",".join(str(l) for l in labels) + "\n"]
    for label, row in zip(labels, matrix):
        rows.append(str(label) + "," + ",".join(str(int(v)) for v in row)
                    + "\n")
    path.write_text("".join(rows))


def run_campaign(config: CampaignConfig):
    """Execute the campaign; returns (out_dir, summary dict).

    Output layout::

        manifest.tsv                 one row per run: file, ids, seed, hash
        model.json, controller.json  the identified plant and its controller
        traces/<condition>/app<A>_run<R>.trace
        confusion/*.csv              adaptive and baseline-trained matrices
        averaging/<condition>.csv    per-app box stats of averaged traces
        changepoints/<condition>.csv per-run boundary-vs-chance rows
        spectra/<condition>.csv      freq,magnitude columns (first app/run)
        summary.json                 all metrics; byte-stable across reruns

    Runs that abort (controller divergence) are recorded under
    summary["failures"] and excluded from every dataset and table.
    """
    profile = load_profile(config.profile)
    apps = config._apps()
    by_id = {a.app_id: a for a in apps}
    out = Path(config.out_dir)
    for sub in ("traces", "confusion", "averaging", "changepoints", "spectra"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    model, id_report = identify(profile, apps[len(apps) // 2],
                                seed=config.master_seed + 123)
    ctrl = synthesize(model)
    (out / "model.json").write_text(
        json.dumps(model.to_dict(), sort_keys=True, indent=2) + "\n")
    (out / "controller.json").write_text(
        json.dumps(ctrl.to_dict(), sort_keys=True, indent=2) + "\n")

    traces = {}                       # condition -> list of PowerTrace
    failures = []
    manifest = ["file\tcondition\tapp_id\trun_id\tseed\tsha256\n"]
    for cond in config.conditions:
        (out / "traces" / cond).mkdir(exist_ok=True)
        fam = MASK_FAMILY.get(cond)
        kept = []
        for app in apps:
            for r in range(config.runs_per_app):
                seed = run_seed(config.master_seed, cond, app.app_id, r)
                mask = (new_mask(fam, profile, seed=seed + 7)
                        if fam else None)
                try:
                    tr = run_once(app, cond, profile, ctrl=ctrl, mask=mask,
                                  seed=seed, length=config.trace_length,
                                  run_id=r)
                except ControllerDivergence as exc:
                    failures.append({"condition": cond, "app_id": app.app_id,
                                     "run_id": r, "seed": seed,
                                     "error": str(exc)})
                    continue
                rel = Path("traces") / cond / f"app{app.app_id}_run{r}.trace"
                save_trace(tr, out / rel)
                manifest.append(f"{rel.as_posix()}\t{cond}\t{app.app_id}\t"
                                f"{r}\t{seed}\t{_sha256(out / rel)}\n")
                kept.append(tr)
        traces[cond] = kept
    (out / "manifest.tsv").write_text("".join(manifest))

    labels = sorted(by_id)
    datasets = {
        cond: [s for tr in runs for s in attack.preprocess(
            tr, config.segment_length, 0.0, profile.tdp_w)]
        for cond, runs in traces.items()}

    def trainable(cond):
        have = {s.label for s in datasets[cond]}
        return len(labels) >= 2 and have == set(labels)

    classifiers = {"adaptive": {}, "noisy_trained": {}}
    for cond in config.conditions:
        if not trainable(cond):
            continue
        seed = config.master_seed + 37 + CONDITIONS.index(cond)
        mlp, rep = _train_eval(labels, datasets[cond], config, seed)
        classifiers["adaptive"][cond] = {
            "train_accuracy": rep.train_accuracy,
            "test_accuracy": rep.test_accuracy,
        }
        _confusion_csv(out / "confusion" / f"adaptive_{cond}.csv", labels,
                       attack.confusion(mlp, rep.test_samples))

    # The non-adaptive attacker: fit once on the undefended-but-noisy
    # condition, then try that net against every condition's full dataset.
    if NOISY_BASELINE in config.conditions and trainable(NOISY_BASELINE):
        nb_mlp, nb_rep = _train_eval(labels, datasets[NOISY_BASELINE], config,
                                     config.master_seed + 17)
        for cond in config.conditions:
            if not datasets[cond]:
                continue
            acc = attack.accuracy(nb_mlp, datasets[cond])
            classifiers["noisy_trained"][cond] = {"accuracy": acc}
            _confusion_csv(out / "confusion" / f"noisy_trained_{cond}.csv",
                           labels, attack.confusion(nb_mlp, datasets[cond]))
        classifiers["noisy_trained"][NOISY_BASELINE]["test_accuracy"] = (
            nb_rep.test_accuracy)

    averaging = {}
    for cond, runs in traces.items():
        series = {}
        for tr in runs:
            series.setdefault(tr.app_id, []).append(tr.measured_w)
        lengths = {len(s) for ss in series.values() for s in ss}
        if len(series) < 2 or len(lengths) != 1:
            continue
        stats = averaging_study(series, cond,
                                min_runs=min(len(s) for s in series.values()))
        rows = ["app_id,median,q25,q75,whisker_lo,whisker_hi,n_outliers\n"]
        for app_id in sorted(stats):
            s = stats[app_id]
            rows.append(f"{app_id},{s.median:.6f},{s.q25:.6f},{s.q75:.6f},"
                        f"{s.whisker_lo:.6f},{s.whisker_hi:.6f},"
                        f"{len(s.outliers)}\n")
        (out / "averaging" / f"{cond}.csv").write_text("".join(rows))
        pooled = np.concatenate([stats[a].averaged for a in sorted(stats)])
        q25, q75 = np.percentile(pooled, [25, 75])
        meds = [stats[a].median for a in sorted(stats)]
        averaging[cond] = {
            "max_median_diff_w": float(max(meds) - min(meds)),
            "pooled_iqr_w": float(q75 - q25),
            "median_diff_over_iqr": float((max(meds) - min(meds))
                                          / max(q75 - q25, 1e-12)),
        }

    changepoint = {}
    for cond, runs in traces.items():
        rows = ["app_id,run_id,n_detected,n_true,n_matched,frac_near_true,"
                "chance_rate\n"]
        fracs, chances = [], []
        for tr in runs:
            true_b = phase_boundary_samples(tr, by_id[tr.app_id], profile)
            rep = change_points(tr.measured_w)
            k = len(rep.boundaries)
            near = sum(any(abs(d - b) <= BOUNDARY_TOL for b in true_b)
                       for d in rep.boundaries)
            frac = near / k if k else 0.0
            chance = k * (2 * BOUNDARY_TOL + 1) / len(tr)
            fracs.append(frac)
            chances.append(chance)
            rows.append(f"{tr.app_id},{tr.run_id},{k},{len(true_b)},{near},"
                        f"{frac:.6f},{chance:.6f}\n")
        (out / "changepoints" / f"{cond}.csv").write_text("".join(rows))
        if fracs:
            changepoint[cond] = {
                "mean_frac_near_true": float(np.mean(fracs)),
                "mean_chance_rate": float(np.mean(chances)),
            }

    spectra = {}
    for cond, runs in traces.items():
        if not runs:
            continue
        tr = runs[0]
        spec = fft_magnitude(tr.measured_w)
        peaks = detect_peaks(spec, PEAK_PROMINENCE)
        cols = ["freq,magnitude\n"]
        cols += [f"{f:.6f},{m:.6f}\n"
                 for f, m in zip(spec.freqs, spec.magnitude)]
        (out / "spectra" / f"{cond}.csv").write_text("".join(cols))
        spectra[cond] = {
            "app_id": tr.app_id,
            "n_peaks": len(peaks),
            "top_peak_freq": peaks[0].freq if peaks else None,
        }

    overhead = None
    if BASELINE in config.conditions and traces.get(BASELINE):
        rep = overhead_report([tr for runs in traces.values() for tr in runs],
                              by_id, profile)
        overhead = rep.to_dict()

    summary = {
        "config": config.echo(),
        "identification": {k: id_report[k] for k in
                           ("train_fit", "holdout_fit", "poles_max_abs")},
        "n_traces": sum(len(v) for v in traces.values()),
        "failures": failures,
        "n_failures": len(failures),
        "classifiers": classifiers,
        "averaging": averaging,
        "changepoints": changepoint,
        "spectra": spectra,
        "overhead": overhead,
    }
    summary = _jsonsafe(summary)
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2, allow_nan=False) + "\n")
    return out, summary
