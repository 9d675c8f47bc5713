"""Iterative synthesis for nonlinear plants and non-quadratic costs.

Each iteration linearizes the plant along a nominal trajectory, builds a
quadratic model of the objective in deviation coordinates, synthesizes
closed-loop maps for that subproblem, and rolls the resulting affine law
forward on the true plant with a backtracked feedforward to get the next
nominal.  Cross-time correlation terms survive quadratization exactly (they
are already quadratic), so the memory behavior of the synthesized controller
is preserved through the outer loop.

On a linear plant with a quadratic objective the very first subproblem is
the problem itself, so one iteration with a full step reproduces the direct
synthesis; tests pin this down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import (
    CorrelationSpec,
    CostSpec,
    StateCostFunction,
)
from .solver import extract_controller, solve_esls
from .stacked import TimeVaryingLinearSystem, build_stacked


class TrackingObjective:
    """Trajectory objective: per-step state costs, correlations, input effort.

    The state cost is an arbitrary twice-differentiable function per step;
    correlations and the input penalty stay quadratic (correlations couple
    timesteps, which the quadratic subproblem can represent directly).

    ``u_d`` holds absolute input targets (stacked), defaulting to zero so the
    input term is a plain effort penalty.
    """

    def __init__(self, horizon, state_dim, input_dim, state_cost,
                 correlations=(), control_weight=0.0, u_d=None):
        self.horizon = int(horizon)
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        if not isinstance(state_cost, StateCostFunction):
            raise TypeError("state_cost must be a StateCostFunction")
        self.state_cost = state_cost
        self.correlations = list(correlations)
        T1, n = self.horizon + 1, self.input_dim
        self.R = np.zeros((T1, n, n))
        self.R[:] = CostSpec._as_weight(control_weight, n)
        self.u_d = np.zeros(T1 * n) if u_d is None else np.asarray(u_d, float).reshape(-1).copy()
        if self.u_d.size != T1 * n:
            raise ValueError("u_d length does not match horizon and input_dim")

    @classmethod
    def from_costspec(cls, cost):
        """Wrap a builder-produced quadratic cost as an objective.

        Uses the viapoint and correlation provenance, so the true cost it
        reports equals the sum of the original terms (no shared-center
        approximation is involved).
        """
        state_cost = StateCostFunction.quadratic_viapoints(
            cost.horizon, cost.viapoints, cost.state_dim
        )
        obj = cls(cost.horizon, cost.state_dim, cost.input_dim, state_cost,
                  correlations=[CorrelationSpec(c.t1, c.t2, c.C, c.c, c.Q_c)
                                for c in cost.correlations],
                  u_d=cost.u_d)
        obj.R = cost.R.copy()
        return obj

    def true_cost(self, xs, us):
        """Exact objective value on a trajectory (blocks or stacked vectors)."""
        m, n = self.state_dim, self.input_dim
        xb = np.asarray(xs, dtype=float).reshape(self.horizon + 1, m)
        ub = np.asarray(us, dtype=float).reshape(self.horizon + 1, n)
        ud = self.u_d.reshape(self.horizon + 1, n)
        total = 0.0
        for t in range(self.horizon + 1):
            total += self.state_cost.value(t, xb[t])
            e = ub[t] - ud[t]
            total += float(e @ self.R[t] @ e)
        for corr in self.correlations:
            total += corr.evaluate(xb[corr.t1], xb[corr.t2])
        return total

    def cumulative_cost(self, xs, us):
        """Per-step cumulative objective; cross-time terms count at their later step."""
        m, n = self.state_dim, self.input_dim
        xb = np.asarray(xs, dtype=float).reshape(self.horizon + 1, m)
        ub = np.asarray(us, dtype=float).reshape(self.horizon + 1, n)
        ud = self.u_d.reshape(self.horizon + 1, n)
        inc = np.zeros(self.horizon + 1)
        for t in range(self.horizon + 1):
            e = ub[t] - ud[t]
            inc[t] = self.state_cost.value(t, xb[t]) + float(e @ self.R[t] @ e)
        for corr in self.correlations:
            inc[corr.t2] += corr.evaluate(xb[corr.t1], xb[corr.t2])
        return np.cumsum(inc)

    def quadratize(self, x_hat, u_hat, regularization=1e-6, hessian_floor=None):
        """Quadratic model of the objective in deviations around a nominal.

        Per-step state costs contribute their second-order expansion
        (C_xx = hessian + regularization, optionally eigenvalue-floored for
        indefinite costs); correlations transfer exactly with the residual
        offset r = C x_hat_{t1} + c - x_hat_{t2}; the input term becomes a
        tracking term toward u_d - u_hat.
        """
        m = self.state_dim
        xb = np.asarray(x_hat, dtype=float).reshape(self.horizon + 1, m)
        ub = np.asarray(u_hat, dtype=float).reshape(self.horizon + 1, self.input_dim)
        cost = CostSpec(self.horizon, m, self.input_dim)
        cost.R = self.R.copy()
        cost.u_d = (self.u_d.reshape(ub.shape) - ub).reshape(-1)
        for t in range(self.horizon + 1):
            H = self.state_cost.hessian(t, xb[t])
            H = (H + H.T) / 2 + regularization * np.eye(m)
            if hessian_floor is not None:
                w, V = np.linalg.eigh(H)
                H = (V * np.maximum(w, hessian_floor)) @ V.T
            g = self.state_cost.gradient(t, xb[t])
            if not np.any(H) and not np.any(g):
                continue
            # min-norm center; exact whenever the gradient lies in the range
            # of the curvature (always true for PD H, and for shifted
            # quadratics even when their weight is singular)
            x_d_local, *_ = np.linalg.lstsq(H, -g, rcond=None)
            if np.max(np.abs(H @ x_d_local + g)) > 1e-8 * max(1.0, float(np.max(np.abs(g)))):
                raise ValueError(
                    "curvature at t={} cannot represent the gradient; increase "
                    "regularization or set hessian_floor".format(t)
                )
            Qt = H / 2
            cost._add_q(t, t, Qt)
            cost._lin[t * m:(t + 1) * m] += Qt @ x_d_local
            cost.x_d[t * m:(t + 1) * m] = x_d_local
        for corr in self.correlations:
            r_hat = corr.C @ xb[corr.t1] + corr.c - xb[corr.t2]
            shifted = CorrelationSpec(corr.t1, corr.t2, corr.C, r_hat, corr.Q_c)
            Qc, C = shifted.Q_c, shifted.C
            cost._add_q(corr.t1, corr.t1, C.T @ Qc @ C)
            cost._add_q(corr.t2, corr.t2, Qc.copy())
            cost._add_q(corr.t1, corr.t2, -C.T @ Qc)
            cost._add_q(corr.t2, corr.t1, -Qc @ C)
            cost._lin[corr.t1 * m:(corr.t1 + 1) * m] += -C.T @ Qc @ r_hat
            cost._lin[corr.t2 * m:(corr.t2 + 1) * m] += Qc @ r_hat
            cost.correlations.append(shifted)
        for corr in cost.correlations:
            cost._refresh_targets(corr.t1)
        return cost


def nominal_rollout(plant, x0, us):
    """Deterministic trajectory of the plant under an input sequence."""
    us = np.asarray(us, dtype=float).reshape(-1, plant.input_dim)
    T = us.shape[0] - 1
    xs = np.zeros((T + 1, plant.state_dim))
    xs[0] = np.asarray(x0, dtype=float)
    for t in range(T):
        xs[t + 1] = plant.step(t, xs[t], us[t])
    return xs


def linearize_plant(plant, x_hat, u_hat, defect_tol=1e-8):
    """Time-varying linearization of a plant along a nominal trajectory.

    Deviation coordinates presume the nominal is dynamically consistent
    (each state the image of the previous one); an inconsistent nominal
    would carry hidden drift terms, so it is first reprojected by forward
    simulation from its initial state under the nominal inputs.
    """
    m = plant.state_dim
    xb = np.asarray(x_hat, dtype=float).reshape(-1, m)
    ub = np.asarray(u_hat, dtype=float).reshape(-1, plant.input_dim)
    T = xb.shape[0] - 1
    if ub.shape[0] != T + 1:
        raise ValueError("nominal state and input horizons differ")
    for t in range(T):
        defect = plant.step(t, xb[t], ub[t]) - xb[t + 1]
        if np.max(np.abs(defect)) > defect_tol:
            xb = nominal_rollout(plant, xb[0], ub)
            break
    A, B = [], []
    for t in range(T + 1):
        At, Bt = plant.jacobians(t, xb[t], ub[t])
        if not (np.all(np.isfinite(At)) and np.all(np.isfinite(Bt))):
            raise ValueError(f"non-finite Jacobian entries at t={t}")
        A.append(At)
        B.append(Bt)
    return TimeVaryingLinearSystem(A, B)


@dataclass
class IterationState:
    """One outer-iteration record of the iterative synthesis."""

    iteration: int
    cost: float
    delta_cost: float
    alpha: float
    step_norm: float


@dataclass
class IslsConfig:
    """Knobs of the outer loop.

    ``tolerance`` is relative: an accepted step improving the cost by less
    than tolerance * max(1, |cost|) arms the stop; the loop then terminates
    once the next subproblem's feedforward is small enough
    (``stationarity_tolerance``; None accepts any size).  A feedforward
    below ``stationarity_floor`` stops immediately: the subproblem proposes
    no move, so the nominal is already stationary.  ``alphas`` is the
    backtracking schedule for the feedforward scaling; an exhausted schedule
    (no strict decrease) also terminates the loop.
    """

    tolerance: float = 1e-6
    max_iterations: int = 100
    alphas: tuple = tuple(0.5 ** k for k in range(11))
    regularization: float = 1e-6
    hessian_floor: float = None
    stationarity_tolerance: float = None
    stationarity_floor: float = 1e-9


@dataclass
class IslsResult:
    """Outcome summary of :func:`isls_optimize`."""

    converged: bool
    reason: str           # "tolerance", "stationary", "stall", or "max_iterations"
    iterations: int
    cost: float
    stationarity: float   # max |k| of the subproblem at the final nominal
    history: list = field(default_factory=list)


def closed_loop_step(plant, controller_K, k_scaled, x_hat, u_hat, x0=None, w=None):
    """Roll the true plant under the deviation law du = K dx + alpha k.

    ``w`` optionally adds a stacked disturbance (block 0 replaces the initial
    state); the nominal update in the optimizer runs deterministically.
    """
    m = plant.state_dim
    n = plant.input_dim
    T = x_hat.shape[0] - 1
    xs = np.zeros((T + 1, m))
    us = np.zeros((T + 1, n))
    dx = np.zeros((T + 1) * m)
    Kd = controller_K.dense
    xs[0] = x_hat[0] if x0 is None else np.asarray(x0, dtype=float)
    if w is not None:
        w = np.asarray(w, dtype=float).reshape(T + 1, m)
        xs[0] = w[0]
    for t in range(T + 1):
        dx[t * m:(t + 1) * m] = xs[t] - x_hat[t]
        du = Kd[t * n:(t + 1) * n, : (t + 1) * m] @ dx[: (t + 1) * m]
        du = du + k_scaled[t * n:(t + 1) * n]
        us[t] = u_hat[t] + du
        if t < T:
            xs[t + 1] = plant.step(t, xs[t], us[t])
            if w is not None:
                xs[t + 1] += w[t + 1]
    return xs, us


def isls_optimize(plant, objective, x0, init_u=None, config=None):
    """Iteratively synthesize a memory-carrying controller on a nonlinear plant.

    Parameters
    ----------
    plant : Plant
    objective : TrackingObjective
    x0 : initial state of the nominal trajectory.
    init_u : optional initial input sequence ((T+1, n) or stacked).
    config : IslsConfig

    Returns
    -------
    (controller, result)
        ``controller`` is the deviation-form affine law wrapped around the
        final nominal trajectory; its feedback maps deviations from that
        nominal to input corrections, and the stored feedforward is the last
        subproblem's unscaled step (its size measures stationarity: at a
        local optimum the quadratic subproblem proposes no move).
    """
    cfg = config or IslsConfig()
    T, m, n = objective.horizon, objective.state_dim, objective.input_dim
    if plant.state_dim != m or plant.input_dim != n:
        raise ValueError("plant dimensions do not match the objective")
    if init_u is None:
        u_hat = np.zeros((T + 1, n))
    else:
        u_hat = np.asarray(init_u, dtype=float).reshape(T + 1, n).copy()
    x_hat = nominal_rollout(plant, x0, u_hat)
    cost_value = objective.true_cost(x_hat, u_hat)

    history = []
    pending_tol = False
    while True:
        # every pass starts by solving the subproblem at the current nominal,
        # so on any exit the controller in hand belongs to that nominal
        system = linearize_plant(plant, x_hat, u_hat)
        stacked = build_stacked(system)
        sub = objective.quadratize(x_hat, u_hat, cfg.regularization, cfg.hessian_floor)
        response = solve_esls(stacked, sub)
        ctrl = extract_controller(response)
        step_norm = float(np.max(np.abs(ctrl.k))) if ctrl.k.size else 0.0

        if step_norm <= cfg.stationarity_floor:
            reason = "stationary"
            break
        if pending_tol and (cfg.stationarity_tolerance is None
                            or step_norm <= cfg.stationarity_tolerance):
            reason = "tolerance"
            break
        if len(history) >= cfg.max_iterations:
            reason = "max_iterations"
            break

        accepted = None
        for alpha in cfg.alphas:
            xs, us = closed_loop_step(plant, ctrl.K, alpha * ctrl.k, x_hat, u_hat)
            trial = objective.true_cost(xs, us)
            if trial < cost_value:
                accepted = (alpha, xs, us, trial)
                break
        if accepted is None:
            reason = "stall"
            break
        alpha, x_hat, u_hat, new_cost = accepted
        delta = cost_value - new_cost
        cost_value = new_cost
        history.append(IterationState(len(history) + 1, cost_value, delta, alpha, step_norm))
        pending_tol = delta <= cfg.tolerance * max(1.0, abs(cost_value))

    controller = ctrl.__class__(
        ctrl.K, ctrl.k,
        nominal_x=x_hat.reshape(-1), nominal_u=u_hat.reshape(-1),
    )
    stationarity = float(np.max(np.abs(controller.k)))
    result = IslsResult(
        converged=(reason in ("tolerance", "stall", "stationary")),
        reason=reason,
        iterations=len(history),
        cost=cost_value,
        stationarity=stationarity,
        history=history,
    )
    return controller, result
