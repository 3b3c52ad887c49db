"""ARX system identification of the power plant.

Model structure, orders m (output lags) and n (input lags including the
current sample)::

    y(T) = sum_i a_i y(T-i) + sum_j b_j . (u(T-j+1) - u_offset) + bias

with u a 3-vector in physical units (GHz, idle %, balloon %). Inputs are
mean-centered before regression because the grids differ by two orders of
magnitude; the offsets fold back into the affine bias term, so the a/b
coefficients stay in physical units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import ActuatorSetting, MachineProfile, init_plant, step_plant
from .workloads import WorkloadSpec, demand_at

DEFAULT_ORDER = 4
DEFAULT_HOLD = (5, 20)


@dataclass(frozen=True)
class ArxModel:
    a: np.ndarray                 # (m,) output-lag coefficients
    b: np.ndarray                 # (n, 3) input-lag coefficient vectors
    input_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias: float = 0.0
    residual_rms: float = 0.0     # training residual, watts

    @property
    def m(self) -> int:
        return len(self.a)

    @property
    def n(self) -> int:
        return len(self.b)

    def poles(self) -> np.ndarray:
        """Roots of z**m - a1 z**(m-1) - ... - a_m."""
        return np.roots(np.concatenate(([1.0], -np.asarray(self.a))))

    def is_stable(self) -> bool:
        return bool(np.max(np.abs(self.poles())) < 1.0)

    def dc_gain(self) -> np.ndarray:
        """Steady-state watts per unit of each input."""
        return np.asarray(self.b).sum(axis=0) / (1.0 - np.asarray(self.a).sum())

    def to_dict(self) -> dict:
        return {
            "a": np.asarray(self.a).tolist(),
            "b": np.asarray(self.b).tolist(),
            "input_offset": np.asarray(self.input_offset).tolist(),
            "bias": self.bias,
            "residual_rms": self.residual_rms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArxModel":
        return cls(a=np.asarray(d["a"], dtype=float),
                   b=np.asarray(d["b"], dtype=float),
                   input_offset=np.asarray(d["input_offset"], dtype=float),
                   bias=float(d["bias"]),
                   residual_rms=float(d.get("residual_rms", 0.0)))


@dataclass(frozen=True)
class IdDataset:
    inputs: np.ndarray            # (N, 3) applied settings, physical units
    outputs: np.ndarray           # (N,) measured watts
    workload_id: int

    def __len__(self) -> int:
        return len(self.outputs)


def min_dataset_length(m: int, n: int) -> int:
    return 10 * (m + 3 * n)


def excite(profile: MachineProfile, workload: WorkloadSpec,
           schedule: tuple = DEFAULT_HOLD, length: int = 2000,
           seed: int = 0) -> IdDataset:
    """Drive the plant with independent per-input staircases and log (u, y).

    Each input holds a uniformly drawn grid level for a random 5..20 samples
    (per ``schedule``), which visits the whole grid and excites every lag
    the ARX fit needs. The workload keeps running underneath as unmeasured
    disturbance; it wraps around if ``length`` exceeds its duration.
    """
    if length < min_dataset_length(DEFAULT_ORDER, DEFAULT_ORDER):
        raise ValueError(f"excitation length {length} too short")
    root = np.random.default_rng(seed)
    sched_rng, demand_rng, plant_seed = (
        root.spawn(1)[0], root.spawn(1)[0], int(root.integers(2**63)))
    state = init_plant(profile, seed=plant_seed)
    grids = [np.asarray(profile.dvfs_grid, dtype=float),
             np.asarray(profile.idle_grid, dtype=float),
             np.asarray(profile.balloon_grid, dtype=float)]
    lo, hi = schedule
    level = np.array([g[0] for g in grids])
    hold = np.zeros(3, dtype=int)
    inputs = np.empty((length, 3))
    outputs = np.empty(length)
    for t in range(length):
        for k in range(3):
            if hold[k] == 0:
                level[k] = grids[k][sched_rng.integers(len(grids[k]))]
                hold[k] = int(sched_rng.integers(lo, hi + 1))
            hold[k] -= 1
        setting = ActuatorSetting(level[0], level[1], level[2])
        demand = demand_at(workload, t % workload.total_duration, demand_rng,
                           max_demand=profile.tdp_w)
        inputs[t] = level
        outputs[t] = step_plant(state, setting, demand, profile)
    return IdDataset(inputs=inputs, outputs=outputs, workload_id=workload.app_id)


def _regression_matrices(data: IdDataset, m: int, n: int):
    u = np.asarray(data.inputs, dtype=float)
    y = np.asarray(data.outputs, dtype=float)
    offset = u.mean(axis=0)
    uc = u - offset
    t0 = max(m, n - 1)
    rows = len(y) - t0
    cols = [np.column_stack([y[t0 - i:t0 - i + rows] for i in range(1, m + 1)])]
    cols.append(np.column_stack(
        [uc[t0 - j + 1:t0 - j + 1 + rows] for j in range(1, n + 1)]).reshape(rows, 3 * n))
    cols.append(np.ones((rows, 1)))
    return np.hstack(cols), y[t0:t0 + rows], offset


def fit_arx(data: IdDataset, m: int = DEFAULT_ORDER,
            n: int = DEFAULT_ORDER) -> ArxModel:
    """Least-squares ARX fit (QR factorization via lstsq).

    Raises on rank-deficient regressors (flat excitation) and on fits whose
    output polynomial is unstable; both indicate unusable excitation data.
    """
    if len(data) < min_dataset_length(m, n):
        raise ValueError(
            f"dataset length {len(data)} < {min_dataset_length(m, n)}; "
            "collect a longer excitation run")
    phi, target, offset = _regression_matrices(data, m, n)
    theta, _, rank, _ = np.linalg.lstsq(phi, target, rcond=None)
    if rank < phi.shape[1]:
        raise ValueError(
            f"singular regression (rank {rank} < {phi.shape[1]}): "
            "excitation does not move all inputs and outputs")
    a = theta[:m]
    b = theta[m:m + 3 * n].reshape(n, 3)
    bias = float(theta[-1])
    residual = target - phi @ theta
    model = ArxModel(a=a, b=b, input_offset=offset, bias=bias,
                     residual_rms=float(np.sqrt(np.mean(residual ** 2))))
    if not model.is_stable():
        raise ValueError(
            f"unstable fit (|pole| max {np.max(np.abs(model.poles())):.4f}); "
            "refit with richer excitation")
    return model


def simulate_arx(model: ArxModel, inputs, y_init=None) -> np.ndarray:
    """Free-run simulation: past outputs are the model's own predictions.

    ``y_init`` supplies y(-1)..y(-m) (defaults to zeros); input lags before
    t=0 hold the first input sample.
    """
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    if u.shape[1] != 3:
        raise ValueError("inputs must be (N, 3)")
    m, n = model.m, model.n
    a = np.asarray(model.a)
    b = np.asarray(model.b)
    uc = u - np.asarray(model.input_offset)
    hist = np.zeros(m) if y_init is None else np.asarray(y_init, dtype=float)[:m]
    out = np.empty(len(u))
    for t in range(len(u)):
        acc = model.bias + float(a @ hist)
        for j in range(n):
            acc += float(b[j] @ uc[max(t - j, 0)])
        out[t] = acc
        hist = np.roll(hist, 1)
        hist[0] = acc
    return out


def one_step_predictions(model: ArxModel, data: IdDataset) -> np.ndarray:
    """Predictions using true past outputs, aligned to outputs[t0:]."""
    phi, _, _ = _regression_matrices_for_model(model, data)
    theta = np.concatenate([model.a, np.asarray(model.b).ravel(), [model.bias]])
    return phi @ theta


def _regression_matrices_for_model(model: ArxModel, data: IdDataset):
    u = np.asarray(data.inputs, dtype=float)
    y = np.asarray(data.outputs, dtype=float)
    m, n = model.m, model.n
    uc = u - np.asarray(model.input_offset)
    t0 = max(m, n - 1)
    rows = len(y) - t0
    cols = [np.column_stack([y[t0 - i:t0 - i + rows] for i in range(1, m + 1)])]
    cols.append(np.column_stack(
        [uc[t0 - j + 1:t0 - j + 1 + rows] for j in range(1, n + 1)]).reshape(rows, 3 * n))
    cols.append(np.ones((rows, 1)))
    return np.hstack(cols), y[t0:], uc


def fit_ratio(model: ArxModel, data: IdDataset) -> float:
    """One-step-ahead 1 - |y - yhat| / |y - ybar| on the given data."""
    t0 = max(model.m, model.n - 1)
    y = np.asarray(data.outputs, dtype=float)[t0:]
    yhat = one_step_predictions(model, data)
    return 1.0 - float(np.linalg.norm(y - yhat) / np.linalg.norm(y - y.mean()))


def identify(profile: MachineProfile, workload: WorkloadSpec,
             length: int = 3000, seed: int = 0, m: int = DEFAULT_ORDER,
             n: int = DEFAULT_ORDER, holdout_frac: float = 0.3,
             schedule: tuple = DEFAULT_HOLD) -> tuple[ArxModel, dict]:
    """Excite, fit on the leading split, score on the chronological holdout."""
    data = excite(profile, workload, schedule=schedule, length=length, seed=seed)
    n_fit = int(len(data) * (1.0 - holdout_frac))
    train = IdDataset(data.inputs[:n_fit], data.outputs[:n_fit], data.workload_id)
    hold = IdDataset(data.inputs[n_fit:], data.outputs[n_fit:], data.workload_id)
    model = fit_arx(train, m=m, n=n)
    report = {
        "train_fit": fit_ratio(model, train),
        "holdout_fit": fit_ratio(model, hold),
        "residual_rms_w": model.residual_rms,
        "poles_max_abs": float(np.max(np.abs(model.poles()))),
        "length": length,
    }
    return model, report
