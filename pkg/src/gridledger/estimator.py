"""Centralized weighted-least-squares state estimation (Gauss-Newton)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .powernet import MeasurementFunction, MeasurementSet, NetworkModel, StateVector

# gain matrices with a 2-norm condition number above this are treated as singular
MAX_CONDITION = 1e13


class SingularGainError(np.linalg.LinAlgError):
    """The gain matrix ``H^T W H`` is (numerically) singular."""

    def __init__(self, condition: float, where: str = "gain matrix"):
        self.condition = condition
        super().__init__(f"singular {where} (condition estimate {condition:.3e}); "
                         "the measurement set does not make the state observable")


@dataclass(frozen=True)
class EstimationOptions:
    max_iter: int = 50
    tol: float = 1e-6
    initial: StateVector | None = None  # None means flat start
    damping: bool = True
    min_step: float = 2.0 ** -6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class EstimationResult:
    state: StateVector
    iterations: int
    objective: float
    residuals: np.ndarray
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    step_trace: list[float] = field(default_factory=list)
    condition: float = float("nan")


@dataclass
class GNOutcome:
    x: np.ndarray
    iterations: int
    objective: float
    converged: bool
    objective_trace: list[float]
    step_trace: list[float]
    condition: float


def gauss_newton(model: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                 weights: np.ndarray, x0: np.ndarray, *, tol: float, max_iter: int,
                 damping: bool = True, min_step: float = 2.0 ** -6,
                 where: str = "gain matrix") -> GNOutcome:
    """Minimise ``sum(w * r(x)**2)`` where ``model(x) -> (r, dr/dx... as H)``.

    ``model`` returns the residual ``z - f(x)`` and the Jacobian of ``f``.
    Convergence is declared when the max-norm of the full Gauss-Newton step
    drops below ``tol``.  With damping on, the step is halved while the
    objective increases, down to ``min_step``.
    """
    x = np.array(x0, dtype=float)
    r, H = model(x)
    J = float(np.dot(weights, r * r))
    obj_trace = [J]
    steps: list[float] = []
    cond = float("nan")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        HW = H.T * weights
        gain = HW @ H
        cond = float(np.linalg.cond(gain))
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise SingularGainError(cond, where)
        dx = np.linalg.solve(gain, HW @ r)
        step = float(np.max(np.abs(dx))) if dx.size else 0.0
        steps.append(step)
        alpha = 1.0
        while True:
            x_new = x + alpha * dx
            r_new, H_new = model(x_new)
            J_new = float(np.dot(weights, r_new * r_new))
            if not damping or J_new <= J or alpha <= min_step or step < tol:
                break
            alpha *= 0.5
        x, r, H, J = x_new, r_new, H_new, J_new
        obj_trace.append(J)
        if step < tol:
            converged = True
            break
    return GNOutcome(x, it, J, converged, obj_trace, steps, cond)


def residuals(state: StateVector, ms: MeasurementSet, net: NetworkModel) -> np.ndarray:
    """``r_i = z_i - f_i(state)`` in measurement-set order."""
    f = MeasurementFunction(net, ms.items)
    return ms.z - f.value(state.v, state.theta)


def global_objective(state: StateVector, ms: MeasurementSet, net: NetworkModel) -> float:
    r = residuals(state, ms, net)
    return float(np.dot(ms.weights, r * r))


def solve_wls(net: NetworkModel, ms: MeasurementSet,
              opts: EstimationOptions | None = None) -> EstimationResult:
    opts = opts or EstimationOptions()
    n, slack = net.n_bus, net.slack
    if len(ms) < 2 * n - 1:
        raise SingularGainError(float("inf"))
    f = MeasurementFunction(net, ms.items)
    z, w = ms.z, ms.weights
    free_cols = np.delete(np.arange(2 * n), slack)

    def model(x):
        st = StateVector.from_free(x, slack)
        return z - f.value(st.v, st.theta), f.jacobian(st.v, st.theta)[:, free_cols]

    start = opts.initial or StateVector.flat(n, slack)
    if len(start) != n:
        raise ValueError("initial state does not match the network")
    x0 = np.concatenate([np.delete(start.theta - start.theta[slack], slack), start.v])
    out = gauss_newton(model, w, x0, tol=opts.tol, max_iter=opts.max_iter,
                       damping=opts.damping, min_step=opts.min_step)
    state = StateVector.from_free(out.x, slack)
    r = z - f.value(state.v, state.theta)
    return EstimationResult(state, out.iterations, float(np.dot(w, r * r)), r, out.converged,
                            out.objective_trace, out.step_trace, out.condition)


def write_estimates_csv(path: Path, net: NetworkModel, state: StateVector) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["bus", "v_pu", "theta_rad", "theta_deg"])
        for k, bid in enumerate(net.bus_ids):
            wr.writerow([bid, f"{state.v[k]:.10f}", f"{state.theta[k]:.10f}",
                         f"{np.rad2deg(state.theta[k]):.8f}"])


def write_trace_csv(path: Path, result: EstimationResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "objective", "max_dx"])
        wr.writerow([0, f"{result.objective_trace[0]:.12e}", ""])
        for k, (obj, dx) in enumerate(zip(result.objective_trace[1:], result.step_trace), start=1):
            wr.writerow([k, f"{obj:.12e}", f"{dx:.6e}"])


def reference_state(net: NetworkModel) -> StateVector:
    """True state for simulations: the estimate obtained from noiseless
    measurements (default plan) of the case's stored voltage solution."""
    from .powernet import default_plan, generate_measurements

    ms = generate_measurements(net.stored_state(), default_plan(net), 0.0, 0, net)
    res = solve_wls(net, ms, EstimationOptions(tol=1e-12, max_iter=50))
    if not res.converged:
        raise RuntimeError("could not reproduce the stored solution")
    return res.state
