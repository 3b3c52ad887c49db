"""Feedback controller synthesis and stepping.

The controller is a single discrete-time linear system in the interface

    x(T+1) = A x(T) + B dy(T)
    u(T)   = C x(T) + D dy(T),        dy = target - measured

where u is the 3-vector actuator command expressed as a deviation from the
operating point. Internally it is built from three standard pieces on the
identified ARX model:

* an observable-canonical state-space realization of the ARX model with
  inputs normalized to half-grid ranges,
* a steady-state observer (predictor form) reconstructing the plant state
  from its own commands and the tracking error,
* a linear-quadratic regulator on the observer state augmented with an
  error integrator, plus a static plant-inverse term on dy for one-sample
  response.

The integrator guarantees zero steady-state error on constant targets for
any stable closed loop, which is what makes the gain perturbation corners
in :func:`robustness_check` meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .sysid import ArxModel

# LQ and observer tuning. Inputs are normalized (half grid range = 1), the
# output is in watts, so these are comparable across profiles.
OUTPUT_WEIGHT = 1.0          # at deviation_bound = 0.1; scaled by (0.1/bound)^2
INTEGRATOR_WEIGHT = 0.05
INPUT_WEIGHT_SCALE = 150.0
DIRECT_GAIN = 0.8            # fraction of dy cancelled through the feedthrough

# Relative move penalties (dvfs, idle, balloon): idle injection is cheap,
# frequency transitions are the expensive actuator.
DEFAULT_WEIGHTS = (2.0, 0.15, 1.0)
OBSERVER_STATE_NOISE = 1e-3
OBSERVER_MEAS_NOISE = 1.0
# Fallback half-ranges (GHz, idle %, balloon %) when no grid limits given.
DEFAULT_INPUT_SPAN = np.array([0.4, 24.0, 50.0])


class ControllerDivergence(RuntimeError):
    """Controller state left the finite range; reset state to zero to recover."""


@dataclass(frozen=True)
class ControllerMatrices:
    A: np.ndarray
    B: np.ndarray                # (d,)  response to dy
    C: np.ndarray                # (3, d) physical command units
    D: np.ndarray                # (3,)  physical command units
    u_op: np.ndarray             # operating-point command, physical units
    input_low: np.ndarray
    input_high: np.ndarray
    gain_sign: np.ndarray        # sign of each input's DC power gain
    state_dim: int
    weights: tuple
    deviation_bound: float

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "B": self.B.tolist(),
            "C": self.C.tolist(), "D": self.D.tolist(),
            "u_op": self.u_op.tolist(),
            "input_low": self.input_low.tolist(),
            "input_high": self.input_high.tolist(),
            "gain_sign": self.gain_sign.tolist(),
            "state_dim": self.state_dim,
            "weights": list(self.weights),
            "deviation_bound": self.deviation_bound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerMatrices":
        arr = lambda k: np.asarray(d[k], dtype=float)
        return cls(A=arr("A"), B=arr("B"), C=arr("C"), D=arr("D"),
                   u_op=arr("u_op"), input_low=arr("input_low"),
                   input_high=arr("input_high"), gain_sign=arr("gain_sign"),
                   state_dim=int(d["state_dim"]),
                   weights=tuple(d["weights"]),
                   deviation_bound=float(d["deviation_bound"]))


@dataclass
class ControllerState:
    x: np.ndarray
    last_command: np.ndarray     # absolute physical command from the last step


@dataclass(frozen=True)
class RobustnessReport:
    perturbation: float
    n_corners: int
    n_unstable: int
    max_spectral_radius: float
    max_ss_deviation_frac: float   # over stable corners, late-horizon |y-r|/r
    unstable_patterns: tuple

    @property
    def all_stable(self) -> bool:
        return self.n_unstable == 0


def _plant_realization(model: ArxModel, span: np.ndarray):
    """Observable-canonical (A_p, B_p, C_p, D_p) with normalized inputs."""
    a = np.asarray(model.a, dtype=float)
    b = np.asarray(model.b, dtype=float) * span   # watts per normalized unit
    m, n = len(a), len(b)
    if n > m + 1:
        raise ValueError("input order may exceed output order by at most 1")
    A_p = np.zeros((m, m))
    A_p[:, 0] = a
    A_p[:-1, 1:] = np.eye(m - 1)
    # y(T) uses u(T) directly, so b1 is the feedthrough row.
    D_p = b[0].copy()
    B_p = np.zeros((m, 3))
    for i in range(m):
        if i + 1 < n:
            B_p[i] = b[i + 1]
        B_p[i] += a[i] * b[0]
    C_p = np.zeros(m)
    C_p[0] = 1.0
    return A_p, B_p, C_p, D_p


def _dlqr(A, B, Q, R):
    P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def _kalman_gain(A_p, C_p, W, v):
    P = scipy.linalg.solve_discrete_are(A_p.T, C_p.reshape(-1, 1), W,
                                        np.array([[v]]))
    return (A_p @ P @ C_p) / float(C_p @ P @ C_p + v)


def synthesize(model: ArxModel, weights=DEFAULT_WEIGHTS,
               deviation_bound: float = 0.1,
               input_low=None, input_high=None) -> ControllerMatrices:
    """Build the (A, B, C, D) tracking controller for an identified model.

    ``weights`` are relative penalties on moving each input (dvfs, idle,
    balloon); raising one makes the loop reallocate effort to the others.
    The default makes idle injection the cheap knob and DVFS the stiff one,
    which is how the costs land on a real box: idle threads are a scheduler
    decision, frequency transitions stall clock domains.
    ``deviation_bound`` tightens the output weight as it shrinks.
    ``input_low``/``input_high`` bound the absolute command for anti-windup;
    they default to the operating point plus/minus the reference spans.
    """
    if not model.is_stable():
        raise ValueError("refusing to synthesize on an unstable model")
    weights = tuple(float(w) for w in weights)
    if len(weights) != 3 or min(weights) <= 0:
        raise ValueError("weights must be 3 positive numbers")
    u_op = np.asarray(model.input_offset, dtype=float).copy()
    if input_low is None or input_high is None:
        span = DEFAULT_INPUT_SPAN.copy()
        low = u_op - span
        high = u_op + span
    else:
        low = np.asarray(input_low, dtype=float)
        high = np.asarray(input_high, dtype=float)
        span = np.maximum((high - low) / 2.0, 1e-9)

    A_p, B_p, C_p, D_p = _plant_realization(model, span)
    m = A_p.shape[0]

    # LQR on [plant state; error integrator].
    q_y = OUTPUT_WEIGHT * (0.1 / deviation_bound) ** 2
    A_aug = np.zeros((m + 1, m + 1))
    A_aug[:m, :m] = A_p
    A_aug[m, :m] = -C_p
    A_aug[m, m] = 1.0
    B_aug = np.vstack([B_p, -D_p])
    Q = np.zeros((m + 1, m + 1))
    Q[:m, :m] = q_y * np.outer(C_p, C_p)
    Q[m, m] = INTEGRATOR_WEIGHT
    R = INPUT_WEIGHT_SCALE * np.diag(weights)
    K = _dlqr(A_aug, B_aug, Q, R)
    K_p, K_i = K[:, :m], K[:, m]

    W = B_p @ B_p.T + OBSERVER_STATE_NOISE * np.eye(m)
    L = _kalman_gain(A_p, C_p, W, OBSERVER_MEAS_NOISE)

    # Static decoupler: cancel DIRECT_GAIN of dy through the feedthrough row.
    D_e = DIRECT_GAIN * D_p / float(D_p @ D_p)

    M = B_p - np.outer(L, D_p)
    d = m + 1
    A = np.zeros((d, d))
    A[:m, :m] = A_p - np.outer(L, C_p) - M @ K_p
    A[:m, m] = -M @ K_i
    A[m, m] = 1.0
    B = np.zeros(d)
    B[:m] = M @ D_e + L
    B[m] = 1.0
    C_n = np.hstack([-K_p, -K_i.reshape(3, 1)])
    D_n = D_e
    S = np.diag(span)
    ctrl = ControllerMatrices(
        A=A, B=B, C=S @ C_n, D=S @ D_n, u_op=u_op,
        input_low=low, input_high=high,
        gain_sign=np.sign(model.dc_gain()),
        state_dim=d, weights=weights, deviation_bound=float(deviation_bound),
    )
    radius = closed_loop_spectral_radius(ctrl, model)
    if radius >= 1.0:
        raise ValueError(f"synthesis produced an unstable loop "
                         f"(spectral radius {radius:.4f})")
    return ctrl


def init_controller(ctrl: ControllerMatrices) -> ControllerState:
    return ControllerState(x=np.zeros(ctrl.state_dim),
                           last_command=ctrl.u_op.copy())


def _scalar_gains(ctrl: ControllerMatrices):
    """Matrices as nested float tuples, cached on the controller.

    control_step runs once per simulated sample; at 5 states the array-dispatch
    overhead of matrix ops costs more than the arithmetic, so the hot path
    works on plain floats.
    """
    cached = getattr(ctrl, "_scalar_cache", None)
    if cached is None:
        cached = (tuple(map(tuple, ctrl.A.tolist())), tuple(ctrl.B.tolist()),
                  tuple(map(tuple, ctrl.C.tolist())), tuple(ctrl.D.tolist()),
                  tuple(ctrl.u_op.tolist()), tuple(ctrl.input_low.tolist()),
                  tuple(ctrl.input_high.tolist()),
                  tuple(np.broadcast_to(ctrl.gain_sign, (3,)).tolist()))
        object.__setattr__(ctrl, "_scalar_cache", cached)
    return cached


def control_step(ctrl: ControllerMatrices, state: ControllerState,
                 target: float, measured: float) -> np.ndarray:
    """One Eq-style update; returns the absolute continuous command.

    The returned command is ``u_op + C x + D dy``; the deviation part obeys
    superposition. Anti-windup: when every axis is already commanded at the
    grid boundary the error pushes toward, the integrator component of the
    state is frozen for this step instead of accumulating.
    """
    A, B, C, D, u_op, low, high, gain_sign = _scalar_gains(ctrl)
    dy = float(target) - float(measured)
    x = state.x.tolist()
    u_abs = []
    for i in range(3):
        acc = u_op[i] + D[i] * dy
        for a, b in zip(C[i], x):
            acc += a * b
        u_abs.append(acc)
    x_next = []
    for i in range(len(x)):
        acc = B[i] * dy
        for a, b in zip(A[i], x):
            acc += a * b
        x_next.append(acc)
    if dy != 0.0:
        # An axis is exhausted when the command already sits at the boundary
        # its power gain says the error is pushing toward.
        exhausted = all(
            u_abs[i] >= high[i] if dy * gain_sign[i] > 0 else u_abs[i] <= low[i]
            for i in range(3))
        if exhausted:
            x_next[-1] = x[-1]                  # conditional integration
    if not all(map(math.isfinite, x_next)):
        raise ControllerDivergence(
            "controller state is non-finite; reset state to zero to recover")
    state.x = np.asarray(x_next)
    out = np.asarray(u_abs)
    state.last_command = out
    return out


def _closed_loop_matrix(ctrl: ControllerMatrices, model: ArxModel):
    """Loop matrix including the one-sample measurement delay of the harness.

    State z = [plant state; controller state; previous output]. Inputs to
    the controller are dy = r - y(T-1), matching run_once timing.
    """
    span = np.maximum((ctrl.input_high - ctrl.input_low) / 2.0, 1e-9)
    A_p, B_p, C_p, D_p = _plant_realization(model, span)
    # Controller outputs physical units; plant realization wants normalized.
    C_n = np.linalg.solve(np.diag(span), ctrl.C)
    D_n = np.linalg.solve(np.diag(span), ctrl.D)
    return _assemble_closed_loop(A_p, B_p, C_p, D_p, ctrl.A, ctrl.B, C_n, D_n)


def _assemble_closed_loop(A_p, B_p, C_p, D_p, A_c, B_c, C_n, D_n):
    m = A_p.shape[0]
    d = A_c.shape[0]
    dim = m + d + 1
    A = np.zeros((dim, dim))
    B = np.zeros(dim)
    A[:m, :m] = A_p
    A[:m, m:m + d] = B_p @ C_n
    A[:m, -1] = -B_p @ D_n
    A[m:m + d, m:m + d] = A_c
    A[m:m + d, -1] = -B_c
    A[-1, :m] = C_p
    A[-1, m:m + d] = D_p @ C_n
    A[-1, -1] = -float(D_p @ D_n)
    B[:m] = B_p @ D_n
    B[m:m + d] = B_c
    B[-1] = float(D_p @ D_n)
    return A, B


def closed_loop_spectral_radius(ctrl: ControllerMatrices,
                                model: ArxModel) -> float:
    A, _ = _closed_loop_matrix(ctrl, model)
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def simulate_loop(ctrl: ControllerMatrices, model: ArxModel,
                  targets) -> np.ndarray:
    """Nominal linear closed-loop output for a target sequence (deviations)."""
    A, B = _closed_loop_matrix(ctrl, model)
    r = np.asarray(targets, dtype=float)
    z = np.zeros(A.shape[0])
    y = np.empty(len(r))
    for t in range(len(r)):
        z = A @ z + B * r[t]
        y[t] = z[-1]
    return y


def robustness_check(ctrl: ControllerMatrices, model: ArxModel,
                     perturbation: float = 0.4, target: float = 30.0,
                     horizon: int = 240, tail: int = 40) -> RobustnessReport:
    """Worst-corner gain perturbation study.

    The gain from each input channel to the output (that channel's b
    coefficients, jointly) is scaled by (1 +/- perturbation) over all 2**3
    sign patterns; for each corner the delayed closed loop is checked for
    stability and simulated on a constant target, reporting the
    late-horizon deviation fraction. Unstable corners are flagged, never
    raised.
    """
    if not 0 <= perturbation < 1:
        raise ValueError("perturbation must be in [0, 1)")
    b = np.asarray(model.b, dtype=float)
    n_chan = b.shape[1]
    n_corners = 1 << n_chan
    signs = ((np.arange(n_corners)[:, None] >> np.arange(n_chan)) & 1) * 2 - 1
    factors = 1.0 + perturbation * signs[:, None, :]   # (corners, 1, 3)

    span = np.maximum((ctrl.input_high - ctrl.input_low) / 2.0, 1e-9)
    C_n = np.linalg.solve(np.diag(span), ctrl.C)
    D_n = np.linalg.solve(np.diag(span), ctrl.D)
    a = np.asarray(model.a, dtype=float)
    m, n = len(a), len(b)
    d = ctrl.A.shape[0]
    dim = m + d + 1

    b_all = (b * span) * factors                      # (corners, n, 3)
    D_p = b_all[:, 0, :]                              # (corners, 3)
    B_p = np.zeros((n_corners, m, 3))
    for i in range(m):
        if i + 1 < n:
            B_p[:, i, :] = b_all[:, i + 1, :]
        B_p[:, i, :] += a[i] * b_all[:, 0, :]

    A_cl = np.zeros((n_corners, dim, dim))
    B_cl = np.zeros((n_corners, dim))
    A_p = np.zeros((m, m))
    A_p[:, 0] = a
    A_p[:-1, 1:] = np.eye(m - 1)
    C_p = np.zeros(m)
    C_p[0] = 1.0
    A_cl[:, :m, :m] = A_p
    A_cl[:, :m, m:m + d] = B_p @ C_n
    A_cl[:, :m, -1] = -(B_p @ D_n)
    A_cl[:, m:m + d, m:m + d] = ctrl.A
    A_cl[:, m:m + d, -1] = -ctrl.B
    A_cl[:, -1, :m] = C_p
    A_cl[:, -1, m:m + d] = D_p @ C_n
    A_cl[:, -1, -1] = -(D_p @ D_n)
    B_cl[:, :m] = B_p @ D_n
    B_cl[:, m:m + d] = ctrl.B
    B_cl[:, -1] = D_p @ D_n

    radii = np.max(np.abs(np.linalg.eigvals(A_cl)), axis=1)
    stable = radii < 1.0

    z = np.zeros((n_corners, dim))
    tail_acc = np.zeros(n_corners)
    for t in range(horizon):
        z = np.einsum("cij,cj->ci", A_cl, z) + B_cl * target
        if t >= horizon - tail:
            tail_acc += np.abs(z[:, -1] - target)
    deviation = tail_acc / (tail * abs(target))
    max_dev = float(deviation[stable].max()) if stable.any() else float("inf")
    unstable_idx = np.nonzero(~stable)[0]
    patterns = tuple(
        tuple(signs[i].tolist()) for i in unstable_idx[:8])  # sample, not all
    return RobustnessReport(
        perturbation=float(perturbation),
        n_corners=int(n_corners),
        n_unstable=int((~stable).sum()),
        max_spectral_radius=float(radii.max()),
        max_ss_deviation_frac=max_dev,
        unstable_patterns=patterns,
    )
