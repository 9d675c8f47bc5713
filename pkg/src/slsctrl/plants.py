"""Simulation plants, rollout machinery, and classical tracking baselines.

Two plants cover the benchmark scenarios: a point-mass double integrator
(linear) and a planar n-link arm whose state is augmented with end-effector
position, velocity, orientation and a joint-limit penalty so that task-space
objectives stay quadratic in the state while all nonlinearity lives in the
dynamics.

The baselines deliberately span the anticipation spectrum: a batch
open-loop least-squares plan, a memoryless dynamic-programming tracker
(Riccati recursion, cannot represent cross-time cost terms), and that same
tracker with a single mid-horizon re-solve that freezes realized correlated
targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .costs import (
    CostSpec,
    joint_limit_violation,
    joint_limit_violation_jacobian,
)
from .stacked import NoiseModel, TimeVaryingLinearSystem


class Plant:
    """Discrete-time dynamics x_{t+1} = f(t, x_t, u_t).

    Subclasses set ``state_dim``, ``input_dim``, ``dt`` and implement
    :meth:`step`; :meth:`jacobians` falls back to central finite differences
    when no analytic form is provided.
    """

    state_dim = None
    input_dim = None
    dt = None
    is_linear = False
    name = "plant"

    def step(self, t, x, u):
        raise NotImplementedError

    def jacobians(self, t, x, u, fd_step=1e-6):
        """(A, B) = (df/dx, df/du) at (t, x, u); default central differences."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        A = np.zeros((self.state_dim, self.state_dim))
        B = np.zeros((self.state_dim, self.input_dim))
        for i in range(self.state_dim):
            e = np.zeros(self.state_dim)
            e[i] = fd_step
            A[:, i] = (self.step(t, x + e, u) - self.step(t, x - e, u)) / (2 * fd_step)
        for i in range(self.input_dim):
            e = np.zeros(self.input_dim)
            e[i] = fd_step
            B[:, i] = (self.step(t, x, u + e) - self.step(t, x, u - e)) / (2 * fd_step)
        return A, B


class LinearPlant(Plant):
    """Constant-coefficient linear plant x_{t+1} = A x + B u."""

    is_linear = True

    def __init__(self, A, B, dt=1.0, name="linear"):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        if self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B row count must match A")
        self.state_dim = self.A.shape[0]
        self.input_dim = self.B.shape[1]
        self.dt = float(dt)
        self.name = name

    def step(self, t, x, u):
        return self.A @ np.asarray(x, float) + self.B @ np.asarray(u, float)

    def jacobians(self, t, x, u, fd_step=None):
        return self.A.copy(), self.B.copy()


def double_integrator_plant(dim, dt, exact_discretization=False):
    """Point mass in ``dim`` spatial dimensions; state [positions, velocities].

    The default discretization is the explicit-Euler form (positions see the
    input only through the velocity): A = [[I, dt I], [0, I]], B = [[0], [dt I]].
    ``exact_discretization=True`` switches B's position rows to dt^2/2 I
    (zero-order-hold on the acceleration).
    """
    dim = int(dim)
    eye = np.eye(dim)
    A = np.block([[eye, dt * eye], [np.zeros((dim, dim)), eye]])
    top = (dt**2 / 2) * eye if exact_discretization else np.zeros((dim, dim))
    B = np.vstack([top, dt * eye])
    return LinearPlant(A, B, dt=dt, name=f"double_integrator_{dim}d")


def _cumulative_angles(theta):
    return np.cumsum(np.asarray(theta, dtype=float))


def wrap_angle(a):
    """Wrap to the half-open interval (-pi, pi]."""
    r = np.mod(a + np.pi, 2 * np.pi) - np.pi
    if np.ndim(r) == 0:
        return float(np.pi) if r == -np.pi else float(r)
    r = np.asarray(r)
    r[r == -np.pi] = np.pi
    return r


@dataclass
class PlanarArmState:
    """Structured view of the augmented arm state vector."""

    theta: np.ndarray
    theta_dot: np.ndarray
    ee_pos: np.ndarray
    ee_vel: np.ndarray
    ee_angle: float
    limit_penalty: np.ndarray

    @classmethod
    def from_vector(cls, z, n_links):
        z = np.asarray(z, dtype=float)
        p = n_links
        return cls(
            theta=z[:p].copy(),
            theta_dot=z[p:2 * p].copy(),
            ee_pos=z[2 * p:2 * p + 2].copy(),
            ee_vel=z[2 * p + 2:2 * p + 4].copy(),
            ee_angle=float(z[2 * p + 4]),
            limit_penalty=z[2 * p + 5:3 * p + 5].copy(),
        )

    def to_vector(self):
        return np.concatenate([
            self.theta, self.theta_dot, self.ee_pos, self.ee_vel,
            [self.ee_angle], self.limit_penalty,
        ])


class PlanarArmPlant(Plant):
    """Kinematic planar arm with task-space quantities embedded in the state.

    State z = [theta, theta_dot, ee_pos, ee_vel, ee_angle, limit_penalty]
    (dimension 3p + 5 for p links), input u = joint accelerations.  Joints
    integrate explicitly; the remaining coordinates are outputs recomputed
    from the new joint configuration, which keeps task-space costs quadratic
    in z.  The end-effector velocity is J(theta_{t+1}) theta_dot_t, i.e. the
    fresh Jacobian contracted with the pre-update joint velocity;
    ``consistent_velocity=True`` uses theta_dot_{t+1} instead.
    """

    def __init__(self, link_lengths, dt, theta_lower, theta_upper,
                 consistent_velocity=False):
        self.link_lengths = np.asarray(link_lengths, dtype=float)
        if self.link_lengths.ndim != 1 or self.link_lengths.size < 1:
            raise ValueError("link_lengths must be a nonempty vector")
        if np.any(self.link_lengths <= 0):
            raise ValueError("link lengths must be positive")
        p = self.link_lengths.size
        self.n_links = p
        self.dt = float(dt)
        self.theta_lower = np.asarray(theta_lower, dtype=float)
        self.theta_upper = np.asarray(theta_upper, dtype=float)
        if self.theta_lower.shape != (p,) or self.theta_upper.shape != (p,):
            raise ValueError("joint limits must have one entry per link")
        if np.any(self.theta_lower > self.theta_upper):
            raise ValueError("lower joint limit exceeds upper limit")
        self.consistent_velocity = bool(consistent_velocity)
        self.state_dim = 3 * p + 5
        self.input_dim = p
        self.name = f"planar_arm_{p}link"

    # -- kinematics ---------------------------------------------------------

    def forward_kinematics(self, theta):
        c = _cumulative_angles(theta)
        return np.array([
            float(self.link_lengths @ np.cos(c)),
            float(self.link_lengths @ np.sin(c)),
        ])

    def ee_jacobian(self, theta):
        """2 x p position Jacobian d ee / d theta."""
        c = _cumulative_angles(theta)
        sx = -self.link_lengths * np.sin(c)
        sy = self.link_lengths * np.cos(c)
        # d ee_x / d theta_j = sum_{k >= j} -l_k sin(c_k): reversed cumulative sums
        return np.vstack([
            np.cumsum(sx[::-1])[::-1],
            np.cumsum(sy[::-1])[::-1],
        ])

    def ee_jacobian_rate(self, theta, v):
        """2 x p derivative of J(theta) v with respect to theta, v held fixed."""
        c = _cumulative_angles(theta)
        V = np.cumsum(np.asarray(v, dtype=float))
        gx = -self.link_lengths * np.cos(c) * V
        gy = -self.link_lengths * np.sin(c) * V
        return np.vstack([
            np.cumsum(gx[::-1])[::-1],
            np.cumsum(gy[::-1])[::-1],
        ])

    def augment(self, theta, theta_dot=None):
        """Consistent full state for a joint configuration (for initial states)."""
        p = self.n_links
        theta = np.asarray(theta, dtype=float)
        theta_dot = np.zeros(p) if theta_dot is None else np.asarray(theta_dot, float)
        return PlanarArmState(
            theta=theta.copy(),
            theta_dot=theta_dot.copy(),
            ee_pos=self.forward_kinematics(theta),
            ee_vel=self.ee_jacobian(theta) @ theta_dot,
            ee_angle=wrap_angle(float(np.sum(theta))),
            limit_penalty=joint_limit_violation(theta, self.theta_lower, self.theta_upper),
        ).to_vector()

    # -- dynamics -----------------------------------------------------------

    def step(self, t, z, u):
        p = self.n_links
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        theta, theta_dot = z[:p], z[p:2 * p]
        theta_new = theta + self.dt * theta_dot
        theta_dot_new = theta_dot + self.dt * u
        vel_source = theta_dot_new if self.consistent_velocity else theta_dot
        out = np.empty(self.state_dim)
        out[:p] = theta_new
        out[p:2 * p] = theta_dot_new
        out[2 * p:2 * p + 2] = self.forward_kinematics(theta_new)
        out[2 * p + 2:2 * p + 4] = self.ee_jacobian(theta_new) @ vel_source
        out[2 * p + 4] = wrap_angle(float(np.sum(theta_new)))
        out[2 * p + 5:] = joint_limit_violation(theta_new, self.theta_lower, self.theta_upper)
        return out

    def jacobians(self, t, z, u, fd_step=None):
        p = self.n_links
        dt = self.dt
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        theta, theta_dot = z[:p], z[p:2 * p]
        theta_new = theta + dt * theta_dot
        theta_dot_new = theta_dot + dt * u
        vel_source = theta_dot_new if self.consistent_velocity else theta_dot
        J = self.ee_jacobian(theta_new)
        D = self.ee_jacobian_rate(theta_new, vel_source)

        A = np.zeros((self.state_dim, self.state_dim))
        B = np.zeros((self.state_dim, p))
        eye = np.eye(p)
        A[:p, :p] = eye
        A[:p, p:2 * p] = dt * eye
        A[p:2 * p, p:2 * p] = eye
        B[p:2 * p, :] = dt * eye
        # end-effector position: chain through theta_new
        A[2 * p:2 * p + 2, :p] = J
        A[2 * p:2 * p + 2, p:2 * p] = dt * J
        # end-effector velocity J(theta_new) vel_source
        A[2 * p + 2:2 * p + 4, :p] = D
        A[2 * p + 2:2 * p + 4, p:2 * p] = dt * D + J
        if self.consistent_velocity:
            B[2 * p + 2:2 * p + 4, :] = dt * J
        # absolute orientation (wrap has unit slope a.e.)
        A[2 * p + 4, :p] = 1.0
        A[2 * p + 4, p:2 * p] = dt
        # joint limit penalty
        dlim = joint_limit_violation_jacobian(theta_new, self.theta_lower, self.theta_upper)
        A[2 * p + 5:, :p] = np.diag(dlim)
        A[2 * p + 5:, p:2 * p] = dt * np.diag(dlim)
        return A, B


def planar_arm_plant(link_lengths, dt, theta_lower=None, theta_upper=None,
                     consistent_velocity=False):
    """Build a :class:`PlanarArmPlant`; limits default to +-2.9 rad per joint."""
    p = len(link_lengths)
    if theta_lower is None:
        theta_lower = -2.9 * np.ones(p)
    if theta_upper is None:
        theta_upper = 2.9 * np.ones(p)
    return PlanarArmPlant(link_lengths, dt, theta_lower, theta_upper,
                          consistent_velocity=consistent_velocity)


def linear_system_from_plant(plant, horizon):
    """Time-varying system matrices of a linear plant (errors on nonlinear ones)."""
    if not plant.is_linear:
        raise ValueError(
            f"plant '{plant.name}' is nonlinear; linearize around a nominal instead"
        )
    zeros_x = np.zeros(plant.state_dim)
    zeros_u = np.zeros(plant.input_dim)
    A, B = [], []
    for t in range(horizon + 1):
        At, Bt = plant.jacobians(t, zeros_x, zeros_u)
        A.append(At)
        B.append(Bt)
    return TimeVaryingLinearSystem(A, B)


# -- trajectories and rollouts ------------------------------------------------


@dataclass
class Trajectory:
    """Realized states and inputs plus everything needed to replay them."""

    states: np.ndarray        # (T+1, m)
    inputs: np.ndarray        # (T+1, n)
    noise: np.ndarray         # (T+1, m) stacked disturbance (block 0 = initial state)
    seed: object = None
    perturbations: tuple = ()
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.states.shape[0] - 1

    @property
    def stacked_states(self):
        return self.states.reshape(-1)

    @property
    def stacked_inputs(self):
        return self.inputs.reshape(-1)


class OpenLoopController:
    """Fixed input sequence wrapped in the controller interface."""

    def __init__(self, inputs, state_dim):
        self.inputs = np.asarray(inputs, dtype=float)
        if self.inputs.ndim == 1:
            raise ValueError("inputs must be given as a (T+1, n) array")
        self.state_dim = state_dim
        self.input_dim = self.inputs.shape[1]

    @property
    def horizon(self):
        return self.inputs.shape[0] - 1

    def control(self, t, x_history):
        return self.inputs[t].copy()


class StepFeedbackController:
    """Memoryless per-step affine law u_t = K_t x_t + kappa_t."""

    def __init__(self, gains, offsets):
        self.gains = np.asarray(gains, dtype=float)
        self.offsets = np.asarray(offsets, dtype=float)
        if self.gains.ndim != 3 or self.offsets.ndim != 2:
            raise ValueError("expected gains (T+1, n, m) and offsets (T+1, n)")
        if self.gains.shape[0] != self.offsets.shape[0]:
            raise ValueError("gain and offset horizons differ")

    @property
    def horizon(self):
        return self.gains.shape[0] - 1

    @property
    def state_dim(self):
        return self.gains.shape[2]

    @property
    def input_dim(self):
        return self.gains.shape[1]

    def control(self, t, x_history):
        x_t = np.asarray(x_history, dtype=float).reshape(-1)[-self.state_dim:]
        return self.gains[t] @ x_t + self.offsets[t]


def _realize_disturbance(horizon, state_dim, noise=None, seed=None, x0=None, w=None):
    """Resolve the stacked disturbance for a rollout; explicit w wins, then x0."""
    if w is not None:
        w = np.asarray(w, dtype=float).reshape(horizon + 1, state_dim).copy()
        if x0 is not None:
            raise ValueError("pass either w or x0, not both")
        return w
    if noise is None:
        noise = NoiseModel.zero(horizon, state_dim)
    rng = np.random.default_rng(seed)
    w = noise.sample(rng).reshape(horizon + 1, state_dim)
    if x0 is not None:
        w[0] = np.asarray(x0, dtype=float)
    return w


def rollout(plant, controller, noise=None, seed=None, x0=None, w=None,
            perturbations=(), feedforward_schedule=None, metadata=None):
    """Simulate a controller on a plant.

    Parameters
    ----------
    plant : Plant
    controller : object with ``control(t, x_history)`` and ``horizon``
        Closed-loop laws see the full state history (flattened); memoryless
        ones just read the last block.
    noise, seed : NoiseModel and rng seed used to draw the disturbance.
    x0 : optional initial-state override (replaces the drawn first block).
    w : optional pre-drawn stacked disturbance (T+1, m); enables paired
        comparisons of different controllers on identical realizations.
    perturbations : sequence of (t, impulse) added to the state at step t.
    feedforward_schedule : sequence of (t, k_new); at step t the remaining
        rollout continues with the swapped feedforward (history retained).

    Returns a :class:`Trajectory`; identical arguments reproduce it
    bit-for-bit.
    """
    T = controller.horizon
    m, n = plant.state_dim, plant.input_dim
    w = _realize_disturbance(T, m, noise=noise, seed=seed, x0=x0, w=w)
    impulses = {}
    for t, vec in perturbations:
        impulses[int(t)] = impulses.get(int(t), 0) + np.asarray(vec, dtype=float)
    schedule = dict() if feedforward_schedule is None else {
        int(t): np.asarray(k, dtype=float) for t, k in feedforward_schedule
    }

    active = controller
    xs = np.zeros((T + 1, m))
    us = np.zeros((T + 1, n))
    for t in range(T + 1):
        if t == 0:
            x_t = w[0].copy()
        else:
            x_t = plant.step(t - 1, xs[t - 1], us[t - 1]) + w[t]
        if t in impulses:
            x_t = x_t + impulses[t]
        xs[t] = x_t
        if t in schedule:
            active = active.with_feedforward(schedule[t])
        us[t] = active.control(t, xs[: t + 1])
    return Trajectory(
        states=xs, inputs=us, noise=w, seed=seed,
        perturbations=tuple((int(t), np.asarray(v, float).copy()) for t, v in perturbations),
        metadata={} if metadata is None else dict(metadata),
    )


# -- baselines ----------------------------------------------------------------


def batch_lqt(stacked, cost, x0=None):
    """Open-loop least-squares plan for the deterministic tracking problem.

    Minimizes ||S_x w + S_u u - x_d||^2_Q + ||u - u_d||^2_R with
    w = [x0, 0, ...]; returns the stacked input vector.  With x0 = 0 and
    u_d = 0 this coincides with the feedforward d_u of the closed-loop
    synthesis.
    """
    T = stacked.horizon
    m = stacked.state_dim
    Su = stacked.S_u.dense
    w = np.zeros((T + 1) * m)
    if x0 is not None:
        w[:m] = np.asarray(x0, dtype=float)
    H = Su.T @ cost.q_matmat(Su) + cost.assemble_dense_r()
    rhs = Su.T @ (cost.linear_term - cost.q_matvec(stacked.S_x @ w))
    rhs += cost.assemble_dense_r() @ cost.u_d
    return scipy.linalg.solve((H + H.T) / 2, rhs, assume_a="pos")


def dp_lqt(system, cost):
    """Memoryless tracking controller via a backward Riccati recursion.

    Only block-diagonal Q is representable: a value function of the current
    state cannot carry cross-time couplings, so off-diagonal blocks raise.
    Gains are returned in the convention u_t = K_t x_t + kappa_t; the final
    input has no dynamic effect and is driven to its target (K_T = 0).
    """
    if any(i != j for (i, j) in cost.Q):
        raise ValueError(
            "dp_lqt requires block-diagonal Q; cross-time correlation terms "
            "cannot be represented by a memoryless recursion"
        )
    T = system.horizon
    m, n = system.state_dim, system.input_dim
    if cost.horizon != T or cost.state_dim != m or cost.input_dim != n:
        raise ValueError("cost dimensions do not match the system")
    gs = cost.x_d_blocks
    vs = cost.u_d_blocks

    gains = np.zeros((T + 1, n, m))
    offsets = np.zeros((T + 1, n))
    P = np.zeros((m, m))
    q = np.zeros(m)
    for t in range(T, -1, -1):
        A, B, Q, R = system.A[t], system.B[t], cost.q_block(t, t), cost.R[t]
        M = R + B.T @ P @ B
        Kt = np.linalg.solve(M, B.T @ P @ A)          # u = -Kt x + kappa
        kappa = np.linalg.solve(M, R @ vs[t] + B.T @ q)
        Abar = A - B @ Kt
        P_new = Q + Kt.T @ R @ Kt + Abar.T @ P @ Abar
        q = Q @ gs[t] + Kt.T @ R @ (kappa - vs[t]) - Abar.T @ P @ B @ kappa + Abar.T @ q
        P = (P_new + P_new.T) / 2
        gains[t] = -Kt
        offsets[t] = kappa
    return StepFeedbackController(gains, offsets)


def _accumulated_diagonal_cost(horizon, state_dim, input_dim, r_blocks, terms, u_d=None):
    """Diagonal CostSpec from possibly-overlapping (t, target, weight) terms.

    Unlike the viapoint builder this accumulates conflicting targets into a
    consistent weighted center per timestep, which is exactly what a
    re-planning baseline needs when a frozen correlated target lands on a
    timestep that already carries one.
    """
    cost = CostSpec(horizon, state_dim, input_dim)
    cost.R = np.asarray(r_blocks, dtype=float).copy()
    if u_d is not None:
        cost.u_d = np.asarray(u_d, dtype=float).copy()
    m = state_dim
    for t, target, weight in terms:
        w = CostSpec._as_weight(weight, m)
        cost._add_q(t, t, w)
        cost._lin[t * m:(t + 1) * m] += w @ np.asarray(target, dtype=float)
    for t in range(horizon + 1):
        blk = cost.q_block(t, t)
        if np.any(blk):
            sol, *_ = np.linalg.lstsq(blk, cost._lin[t * m:(t + 1) * m], rcond=None)
            cost.x_d[t * m:(t + 1) * m] = sol
    return cost


def mpc_lqt_rollout(plant, cost, recompute_time, noise=None, seed=None,
                    x0=None, w=None, perturbations=(), metadata=None):
    """Memoryless tracker with one scheduled re-solve at ``recompute_time``.

    Phase 1 runs the Riccati tracker on the diagonal projection of the cost
    (cross-time blocks dropped, derived targets kept).  At t_r every
    correlation whose earlier timestep is already realized is frozen to the
    affine image of the realized state, and the remaining horizon is
    re-solved from the realized state.  Correlations still entirely in the
    future stay projected: a memoryless plan has nothing to condition on.
    """
    T = cost.horizon
    m, n = cost.state_dim, cost.input_dim
    t_r = int(recompute_time)
    if not (0 < t_r <= T):
        raise ValueError(f"recompute time {t_r} outside (0, {T}]")
    system = linear_system_from_plant(plant, T)
    phase1 = dp_lqt(system, cost.diagonal_projection())

    w = _realize_disturbance(T, m, noise=noise, seed=seed, x0=x0, w=w)
    impulses = {}
    for t, vec in perturbations:
        impulses[int(t)] = impulses.get(int(t), 0) + np.asarray(vec, dtype=float)

    xs = np.zeros((T + 1, m))
    us = np.zeros((T + 1, n))
    phase2 = None
    for t in range(T + 1):
        x_t = w[0].copy() if t == 0 else plant.step(t - 1, xs[t - 1], us[t - 1]) + w[t]
        if t in impulses:
            x_t = x_t + impulses[t]
        xs[t] = x_t
        if t == t_r:
            phase2 = _replan_from(system, cost, t_r, xs)
        if phase2 is None:
            us[t] = phase1.control(t, xs[: t + 1])
        else:
            us[t] = phase2.control(t - t_r, xs[t])
    meta = {"recompute_time": t_r}
    if metadata:
        meta.update(metadata)
    return Trajectory(
        states=xs, inputs=us, noise=w, seed=seed,
        perturbations=tuple((int(t), np.asarray(v, float).copy()) for t, v in perturbations),
        metadata=meta,
    )


def _replan_from(system, cost, t_r, xs):
    """Riccati re-solve on [t_r, T] with realized correlated targets frozen."""
    T = cost.horizon
    m, n = cost.state_dim, cost.input_dim
    terms = []
    for t, target, weight in cost.viapoints:
        if t >= t_r:
            terms.append((t - t_r, target, weight))
    for corr in cost.correlations:
        if corr.t2 < t_r:
            continue
        if corr.t1 <= t_r:
            frozen = corr.C @ xs[corr.t1] + corr.c
            terms.append((corr.t2 - t_r, frozen, corr.Q_c))
        else:
            # still unconditioned: keep the diagonal projection's pieces
            xd = cost.x_d_blocks
            terms.append((corr.t1 - t_r, xd[corr.t1], corr.C.T @ corr.Q_c @ corr.C))
            terms.append((corr.t2 - t_r, xd[corr.t2], corr.Q_c))
    sub_cost = _accumulated_diagonal_cost(
        T - t_r, m, n, cost.R[t_r:],
        terms, u_d=cost.u_d_blocks[t_r:].reshape(-1),
    )
    sub_system = TimeVaryingLinearSystem(system.A[t_r:], system.B[t_r:])
    return dp_lqt(sub_system, sub_cost)
