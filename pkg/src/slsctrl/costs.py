"""Quadratic trajectory costs with cross-time coupling.

Costs are kept in the stacked form (x - x_d)' Q (x - x_d) + (u - u_d)' R (u - u_d)
where Q is block sparse: viapoint terms populate diagonal blocks and
cross-time correlation terms populate off-diagonal blocks.  A correlation
says "state at t2 should equal an affine image of the state at t1"; encoding
it in Q is what lets the synthesized controller remember the past instead of
tracking a fixed target.

Because several terms with different centers can touch the same timestep,
the exact linear part of the accumulated quadratic is tracked separately and
x_d is re-derived per coupled component as a consistent center (minimum-norm
solution of Q x_d = lin, which always exists for sums of PSD terms).  The
assembled quadratic then matches the sum of the underlying terms up to an
additive constant, which no minimizer or solver path ever sees.
"""

from __future__ import annotations

import copy as _copy
from dataclasses import dataclass, field

import numpy as np


@dataclass
class CorrelationSpec:
    """Cross-time cost term (C x_{t1} + c - x_{t2})' Q_c (C x_{t1} + c - x_{t2})."""

    t1: int
    t2: int
    C: np.ndarray
    c: np.ndarray
    Q_c: np.ndarray

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.Q_c = np.asarray(self.Q_c, dtype=float)
        if self.t1 >= self.t2:
            raise ValueError(f"correlation requires t1 < t2, got ({self.t1}, {self.t2})")
        m = self.C.shape[0]
        if self.C.shape != (m, m) or self.Q_c.shape != (m, m) or self.c.shape != (m,):
            raise ValueError("C, Q_c must be (m, m) and c must be (m,)")
        if not np.allclose(self.Q_c, self.Q_c.T, atol=1e-12):
            raise ValueError("Q_c must be symmetric")

    def evaluate(self, x_t1, x_t2):
        """Direct evaluation of the correlation cost on two state blocks."""
        e = self.C @ np.asarray(x_t1, float) + self.c - np.asarray(x_t2, float)
        return float(e @ self.Q_c @ e)


class CostSpec:
    """Block-sparse stacked quadratic cost over a horizon.

    Attributes
    ----------
    horizon : int
        T; vectors stack T+1 blocks.
    Q : dict
        Mapping (i, j) -> (m, m) block.  Symmetric pairs are both stored.
    R : ndarray, shape (T+1, n, n)
        Per-step input weight blocks, each symmetric positive definite.
    x_d, u_d : ndarray
        Stacked desired state / input, shapes ((T+1)m,) and ((T+1)n,).
    """

    def __init__(self, horizon, state_dim, input_dim, control_weight=None):
        self.horizon = int(horizon)
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        T1, m, n = self.horizon + 1, self.state_dim, self.input_dim
        self.Q = {}
        self.R = np.zeros((T1, n, n))
        self.R[:] = self._as_weight(control_weight if control_weight is not None else 0.0, n)
        self.x_d = np.zeros(T1 * m)
        self.u_d = np.zeros(T1 * n)
        self._lin = np.zeros(T1 * m)
        self.viapoints = []       # (t, target, weight) provenance
        self.correlations = []    # CorrelationSpec provenance

    @staticmethod
    def _as_weight(w, dim):
        w = np.asarray(w, dtype=float)
        if w.ndim == 0:
            w = np.eye(dim) * float(w)
        elif w.ndim == 1:
            if w.size != dim:
                raise ValueError(f"diagonal weight length {w.size} != {dim}")
            w = np.diag(w)
        elif w.shape != (dim, dim):
            raise ValueError(f"weight shape {w.shape} incompatible with dim {dim}")
        if not np.allclose(w, w.T, atol=1e-12):
            raise ValueError("weight matrix must be symmetric")
        return w

    # -- block views ------------------------------------------------------

    @property
    def x_d_blocks(self):
        return self.x_d.reshape(self.horizon + 1, self.state_dim)

    @property
    def u_d_blocks(self):
        return self.u_d.reshape(self.horizon + 1, self.input_dim)

    def q_block(self, i, j):
        m = self.state_dim
        return self.Q.get((i, j), np.zeros((m, m)))

    def _add_q(self, i, j, block):
        if not (0 <= i <= self.horizon and 0 <= j <= self.horizon):
            raise ValueError(f"timestep pair ({i}, {j}) outside horizon {self.horizon}")
        cur = self.Q.get((i, j))
        self.Q[(i, j)] = block.copy() if cur is None else cur + block

    def validate_input_weights(self):
        for t in range(self.horizon + 1):
            try:
                np.linalg.cholesky(self.R[t])
            except np.linalg.LinAlgError:
                raise ValueError(f"R block at t={t} is not positive definite") from None

    # -- assembly / products ----------------------------------------------

    def assemble_dense_q(self):
        """Dense (T+1)m square Q; intended for small horizons (tests, oracles)."""
        m = self.state_dim
        out = np.zeros(((self.horizon + 1) * m, (self.horizon + 1) * m))
        for (i, j), blk in self.Q.items():
            out[i * m:(i + 1) * m, j * m:(j + 1) * m] = blk
        return out

    def assemble_dense_r(self):
        n = self.input_dim
        out = np.zeros(((self.horizon + 1) * n, (self.horizon + 1) * n))
        for t in range(self.horizon + 1):
            out[t * n:(t + 1) * n, t * n:(t + 1) * n] = self.R[t]
        return out

    def q_matvec(self, x):
        """Q @ x using only the stored blocks."""
        m = self.state_dim
        xb = np.asarray(x, dtype=float).reshape(self.horizon + 1, m)
        out = np.zeros_like(xb)
        for (i, j), blk in self.Q.items():
            out[i] += blk @ xb[j]
        return out.ravel()

    def q_matmat(self, X):
        """Q @ X for a dense matrix with (T+1)m rows, exploiting block sparsity."""
        m = self.state_dim
        out = np.zeros_like(X)
        for (i, j), blk in self.Q.items():
            out[i * m:(i + 1) * m] += blk @ X[j * m:(j + 1) * m]
        return out

    @property
    def linear_term(self):
        """Exact accumulated linear vector b with the cost = x'Qx - 2 b'x + const."""
        return self._lin.copy()

    # -- construction ------------------------------------------------------

    def copy(self):
        out = CostSpec(self.horizon, self.state_dim, self.input_dim)
        out.Q = {k: v.copy() for k, v in self.Q.items()}
        out.R = self.R.copy()
        out.x_d = self.x_d.copy()
        out.u_d = self.u_d.copy()
        out._lin = self._lin.copy()
        out.viapoints = [(t, tgt.copy(), w.copy()) for t, tgt, w in self.viapoints]
        out.correlations = [_copy.deepcopy(c) for c in self.correlations]
        return out

    def _coupling_component(self, t_seed):
        """Timesteps reachable from t_seed through off-diagonal Q blocks."""
        adj = {}
        for (i, j) in self.Q:
            if i != j:
                adj.setdefault(i, set()).add(j)
        comp, frontier = {t_seed}, [t_seed]
        while frontier:
            t = frontier.pop()
            for s in adj.get(t, ()):
                if s not in comp:
                    comp.add(s)
                    frontier.append(s)
        return sorted(comp)

    def _refresh_targets(self, t_seed):
        """Re-derive x_d on the coupled component so that Q x_d = lin exactly."""
        comp = self._coupling_component(t_seed)
        m = self.state_dim
        k = len(comp)
        pos = {t: a for a, t in enumerate(comp)}
        Qc = np.zeros((k * m, k * m))
        for (i, j), blk in self.Q.items():
            if i in pos and j in pos:
                Qc[pos[i] * m:(pos[i] + 1) * m, pos[j] * m:(pos[j] + 1) * m] = blk
        b = np.concatenate([self._lin[t * m:(t + 1) * m] for t in comp])
        sol, *_ = np.linalg.lstsq(Qc, b, rcond=None)
        for t in comp:
            self.x_d[t * m:(t + 1) * m] = sol[pos[t] * m:(pos[t] + 1) * m]

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, xs, us):
        return evaluate_trajectory_cost(self, xs, us)

    def cumulative_cost(self, xs, us):
        """Per-step cumulative cost; entry t counts every term fully contained in [0, t].

        Cross-time terms are attributed to their later timestep, so the last
        entry equals :func:`evaluate_trajectory_cost` exactly.
        """
        m, n = self.state_dim, self.input_dim
        xe = np.asarray(xs, float).reshape(self.horizon + 1, m) - self.x_d_blocks
        ue = np.asarray(us, float).reshape(self.horizon + 1, n) - self.u_d_blocks
        inc = np.zeros(self.horizon + 1)
        for (i, j), blk in self.Q.items():
            inc[max(i, j)] += float(xe[i] @ blk @ xe[j])
        for t in range(self.horizon + 1):
            inc[t] += float(ue[t] @ self.R[t] @ ue[t])
        return np.cumsum(inc)

    def diagonal_projection(self):
        """Copy with off-diagonal Q blocks dropped; x_d keeps the derived targets."""
        out = self.copy()
        out.Q = {k: v for k, v in out.Q.items() if k[0] == k[1]}
        out.correlations = []
        out._lin = out.q_matvec(out.x_d)
        return out

    def ispsd(self, tol=1e-8):
        """Eigenvalue check of the assembled dense Q (small horizons only)."""
        q = self.assemble_dense_q()
        return bool(np.min(np.linalg.eigvalsh((q + q.T) / 2)) >= -tol)


def build_viapoint_cost(horizon, viapoints, control_weight, state_dim=None, input_dim=1):
    """Assemble a sparse tracking cost from keypoint terms.

    Parameters
    ----------
    horizon : int
        Number of steps T; stacked vectors hold T+1 blocks.
    viapoints : sequence of (t, target, weight)
        ``weight`` may be a scalar, a diagonal vector, or a full symmetric
        PSD matrix.  Repeated timesteps are allowed only with identical
        targets (their weights accumulate); conflicting targets are an error.
    control_weight : scalar, vector or matrix
        Per-step input weight R_t (shared across steps), must be PD.
    state_dim : int, optional
        Required when ``viapoints`` is empty.
    input_dim : int
        Input block size, used to expand scalar/diagonal control weights.
    """
    viapoints = list(viapoints)
    if state_dim is None:
        if not viapoints:
            raise ValueError("state_dim required when no viapoints are given")
        state_dim = np.asarray(viapoints[0][1], dtype=float).size
    cw = np.asarray(control_weight, dtype=float)
    if cw.ndim == 2:
        input_dim = cw.shape[0]
    elif cw.ndim == 1:
        input_dim = cw.size
    cost = CostSpec(horizon, state_dim, input_dim, control_weight=control_weight)
    cost.validate_input_weights()

    seen_targets = {}
    for t, target, weight in viapoints:
        t = int(t)
        if not (0 <= t <= horizon):
            raise ValueError(f"viapoint timestep {t} outside horizon [0, {horizon}]")
        target = np.asarray(target, dtype=float)
        if target.shape != (state_dim,):
            raise ValueError(f"viapoint target at t={t} has shape {target.shape}, "
                             f"expected ({state_dim},)")
        w = CostSpec._as_weight(weight, state_dim)
        if t in seen_targets and not np.array_equal(seen_targets[t], target):
            raise ValueError(f"conflicting targets for duplicate viapoint at t={t}")
        seen_targets[t] = target
        cost._add_q(t, t, w)
        m = state_dim
        cost._lin[t * m:(t + 1) * m] += w @ target
        cost.x_d[t * m:(t + 1) * m] = target
        cost.viapoints.append((t, target.copy(), w))
    return cost


def add_correlation(cost, corr):
    """Return a new CostSpec with a cross-time correlation term folded in.

    Expanding (C x_{t1} + c - x_{t2})' Q_c (...) in the shifted variable
    x_{t2} - c contributes C'Q_cC at (t1,t1), Q_c at (t2,t2), -C'Q_c at
    (t1,t2) plus its transpose, and linear parts -C'Q_c c / Q_c c at t1/t2.
    x_d over the touched coupled component is re-derived so the assembled
    quadratic stays consistent (exactly when the timesteps were fresh, up to
    an additive constant when earlier targets overlap).
    """
    if corr.C.shape[0] != cost.state_dim:
        raise ValueError("correlation dimension does not match the cost's state_dim")
    if corr.t2 > cost.horizon:
        raise ValueError(f"correlation t2={corr.t2} outside horizon {cost.horizon}")
    out = cost.copy()
    C, c, Qc = corr.C, corr.c, corr.Q_c
    out._add_q(corr.t1, corr.t1, C.T @ Qc @ C)
    out._add_q(corr.t2, corr.t2, Qc.copy())
    out._add_q(corr.t1, corr.t2, -C.T @ Qc)
    out._add_q(corr.t2, corr.t1, -Qc @ C)
    m = cost.state_dim
    out._lin[corr.t1 * m:(corr.t1 + 1) * m] += -C.T @ Qc @ c
    out._lin[corr.t2 * m:(corr.t2 + 1) * m] += Qc @ c
    out.correlations.append(_copy.deepcopy(corr))
    out._refresh_targets(corr.t1)
    return out


def evaluate_trajectory_cost(cost, xs, us):
    """(x - x_d)' Q (x - x_d) + (u - u_d)' R (u - u_d) on stacked trajectories."""
    m, n = cost.state_dim, cost.input_dim
    xe = np.asarray(xs, float).reshape(-1) - cost.x_d
    ue = np.asarray(us, float).reshape(-1) - cost.u_d
    if xe.size != (cost.horizon + 1) * m or ue.size != (cost.horizon + 1) * n:
        raise ValueError("trajectory length does not match the cost horizon")
    total = float(xe @ cost.q_matvec(xe))
    ueb = ue.reshape(-1, n)
    for t in range(cost.horizon + 1):
        total += float(ueb[t] @ cost.R[t] @ ueb[t])
    return total


# -- pointwise cost functions for the iterative solver -----------------------


def finite_difference_gradient(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def finite_difference_hessian(f, x, step=1e-4):
    x = np.asarray(x, dtype=float)
    d = x.size
    H = np.zeros((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / step**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * step**2)
    return H


class StateCostFunction:
    """Per-step state cost c(t, x) with first and second derivatives.

    Derivatives may be supplied analytically; missing ones fall back to
    central finite differences of the value (and of the gradient when that
    one is analytic).
    """

    def __init__(self, value, gradient=None, hessian=None, fd_step=1e-5):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.fd_step = fd_step

    def value(self, t, x):
        return float(self._value(t, np.asarray(x, dtype=float)))

    def gradient(self, t, x):
        if self._gradient is not None:
            return np.asarray(self._gradient(t, np.asarray(x, dtype=float)), dtype=float)
        return finite_difference_gradient(lambda z: self._value(t, z), x, self.fd_step)

    def hessian(self, t, x):
        if self._hessian is not None:
            return np.asarray(self._hessian(t, np.asarray(x, dtype=float)), dtype=float)
        if self._gradient is not None:
            x = np.asarray(x, dtype=float)
            H = np.zeros((x.size, x.size))
            for i in range(x.size):
                e = np.zeros(x.size)
                e[i] = self.fd_step
                H[:, i] = (
                    np.asarray(self._gradient(t, x + e), dtype=float)
                    - np.asarray(self._gradient(t, x - e), dtype=float)
                ) / (2 * self.fd_step)
            return (H + H.T) / 2
        return finite_difference_hessian(lambda z: self._value(t, z), x, step=1e-4)

    @classmethod
    def quadratic_viapoints(cls, horizon, viapoints, state_dim):
        """Sum of keypoint quadratics (x_t - g_t)' W_t (x_t - g_t) as a step cost."""
        table = {}
        for t, target, weight in viapoints:
            w = CostSpec._as_weight(weight, state_dim)
            g = np.asarray(target, dtype=float)
            if t in table:
                w0, g0 = table[t]
                if not np.array_equal(g0, g):
                    raise ValueError(f"conflicting targets for duplicate viapoint at t={t}")
                table[t] = (w0 + w, g)
            else:
                table[t] = (w, g)

        def value(t, x):
            if t not in table:
                return 0.0
            w, g = table[t]
            e = x - g
            return float(e @ w @ e)

        def gradient(t, x):
            if t not in table:
                return np.zeros(state_dim)
            w, g = table[t]
            return 2.0 * (w @ (x - g))

        def hessian(t, x):
            if t not in table:
                return np.zeros((state_dim, state_dim))
            return 2.0 * table[t][0]

        return cls(value, gradient, hessian)


def quadratize_state_cost(cost_fn, t, x_hat, regularization=1e-6):
    """Second-order expansion of a state cost around a nominal point.

    Returns ``(C_xx, x_d_local)`` with C_xx the symmetrized Hessian plus
    ``regularization`` on the diagonal and x_d_local = -C_xx^{-1} grad, so
    that c(x_hat + d) ~ 0.5 (d - x_d_local)' C_xx (d - x_d_local) + const.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    H = cost_fn.hessian(t, x_hat)
    H = (H + H.T) / 2 + regularization * np.eye(x_hat.size)
    g = cost_fn.gradient(t, x_hat)
    try:
        x_d_local = np.linalg.solve(H, -g)
    except np.linalg.LinAlgError:
        raise ValueError(
            "quadratized cost curvature is singular; increase the regularization"
        ) from None
    return H, x_d_local


def joint_limit_violation(theta, lower, upper):
    """Elementwise squared distance outside the box [lower, upper].

    Zero inside the limits (including on the boundary); (theta - bound)^2
    beyond either bound.  Embedding this in a plant's state lets a plain
    quadratic cost express soft joint limits.
    """
    theta = np.asarray(theta, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ValueError("lower limit exceeds upper limit")
    h = np.maximum(lower - theta, 0.0) + np.maximum(theta - upper, 0.0)
    return h * h


def joint_limit_violation_jacobian(theta, lower, upper):
    """Diagonal of d/d theta of :func:`joint_limit_violation` (zero on the boundary)."""
    theta = np.asarray(theta, dtype=float)
    h = np.maximum(lower - theta, 0.0) + np.maximum(theta - upper, 0.0)
    sign = np.where(theta > upper, 1.0, np.where(theta < lower, -1.0, 0.0))
    return 2.0 * h * sign


# -- Gaussian expectation helpers --------------------------------------------


def expected_quadratic(A, a, Q, mu, Sigma):
    """E[(Ax + a)' Q (Ax + a)] for x ~ N(mu, Sigma).

    Equals trace(A'QA Sigma) + (A mu + a)' Q (A mu + a); the second term is
    the non-centered correction of the zero-mean identity.
    """
    A = np.asarray(A, float)
    Q = np.asarray(Q, float)
    Sigma = np.asarray(Sigma, float)
    mean = A @ np.asarray(mu, float) + np.asarray(a, float)
    return float(np.trace(A.T @ Q @ A @ Sigma) + mean @ Q @ mean)


def expected_inner(A, a, B, b, mu, Sigma):
    """E[(Ax + a)' (Bx + b)] for x ~ N(mu, Sigma): trace(A'B Sigma) + mean term."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    Sigma = np.asarray(Sigma, float)
    ma = A @ np.asarray(mu, float) + np.asarray(a, float)
    mb = B @ np.asarray(mu, float) + np.asarray(b, float)
    return float(np.trace(A.T @ B @ Sigma) + ma @ mb)
