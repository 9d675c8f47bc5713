"""Closed-loop map synthesis for stacked tracking problems.

Instead of searching over feedback gains, the synthesis optimizes the causal
closed-loop response maps (phi_x, phi_u) that send the stacked disturbance
w = [x_0, w_0, ...] to states and inputs, subject to the achievability
constraint phi_x = S_x + S_u phi_u.  The problem separates across block
columns: column i sees only the trailing cost blocks (both timesteps >= i)
and its own disturbance, so each column is an independent regularized least
squares with a closed-form solution.  Feedforward (d_x, d_u) solves the
deterministic tracking problem once; the realized trajectory is then
x = phi_x w + d_x regardless of the disturbance scale, which is why no noise
covariance enters the synthesis.

The feedback law is recovered as K = phi_u phi_x^{-1} (phi_x has identity
diagonal blocks, so the inverse is a unit-triangular substitution) and
k = (I - K S_u) d_u.  K's sub-diagonal blocks act on past states: the
controller carries memory, which is what lets cross-time cost terms bind
future behavior to realized history.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .stacked import (
    BlockLowerTriangular,
    achievability_residual,
    feedforward_residual,
)


@dataclass
class SystemResponse:
    """Synthesized closed-loop maps and feedforward trajectories."""

    phi_x: BlockLowerTriangular
    phi_u: BlockLowerTriangular
    d_x: np.ndarray
    d_u: np.ndarray

    def residuals(self, stacked):
        """Structural residuals: achievability and feedforward consistency."""
        return {
            "achievability": achievability_residual(stacked, self.phi_x, self.phi_u),
            "feedforward": feedforward_residual(stacked, self.d_x, self.d_u),
        }


class Controller:
    """Affine causal controller u_t = sum_{s<=t} K[t,s] (x_s - nominal) + k_t.

    For controllers synthesized directly on a linear plant the nominal is
    absent and the law acts on absolute states.  The iterative solver wraps
    the same structure around a nominal trajectory.

    ``k`` is the one mutable piece: :meth:`swap_feedforward` replaces the
    whole vector by reference, so a concurrent reader that captured the
    attribute sees either the old or the new feedforward, never a mixture.
    """

    def __init__(self, K, k, nominal_x=None, nominal_u=None):
        if not isinstance(K, BlockLowerTriangular):
            raise TypeError("K must be BlockLowerTriangular")
        self.K = K
        self.k = np.asarray(k, dtype=float).copy()
        if self.k.size != K.shape[0]:
            raise ValueError("feedforward length does not match K")
        self.nominal_x = None if nominal_x is None else np.asarray(nominal_x, float).copy()
        self.nominal_u = None if nominal_u is None else np.asarray(nominal_u, float).copy()
        if (self.nominal_x is None) != (self.nominal_u is None):
            raise ValueError("nominal_x and nominal_u must be supplied together")

    @property
    def horizon(self):
        return self.K.T_blocks - 1

    @property
    def state_dim(self):
        return self.K.col_block_dim

    @property
    def input_dim(self):
        return self.K.row_block_dim

    def swap_feedforward(self, k_new):
        """Atomically replace the feedforward vector (whole-array swap)."""
        k_new = np.asarray(k_new, dtype=float).copy()
        if k_new.size != self.k.size:
            raise ValueError("feedforward length mismatch")
        self.k = k_new

    def with_feedforward(self, k_new):
        """Copy sharing K and nominals but carrying a different feedforward."""
        return Controller(self.K, k_new, self.nominal_x, self.nominal_u)

    def control(self, t, x_history):
        """Input at step t given the states observed so far (shape (t+1, m) or flat)."""
        m, n = self.state_dim, self.input_dim
        hist = np.asarray(x_history, dtype=float).reshape(-1)
        if hist.size != (t + 1) * m:
            raise ValueError(f"history at t={t} must contain t+1 state blocks")
        k = self.k  # capture once; see swap_feedforward
        dev = hist if self.nominal_x is None else hist - self.nominal_x[: (t + 1) * m]
        u = self.K.dense[t * n:(t + 1) * n, : (t + 1) * m] @ dev + k[t * n:(t + 1) * n]
        if self.nominal_u is not None:
            u = u + self.nominal_u[t * n:(t + 1) * n]
        return u

    def absolute_feedforward(self):
        """The law rewritten as u = K x + k_abs; equals k when no nominal is set."""
        if self.nominal_x is None:
            return self.k.copy()
        return self.nominal_u + self.k - self.K @ self.nominal_x


def _assemble_normal_terms(stacked, cost):
    """Shared pieces of all column problems: H = S_u'QS_u + R and G = S_u'QS_x."""
    Su = stacked.S_u.dense
    Sx = stacked.S_x.dense
    QSu = cost.q_matmat(Su)
    QSx = cost.q_matmat(Sx)
    H = Su.T @ QSu + cost.assemble_dense_r()
    H = (H + H.T) / 2
    G = Su.T @ QSx
    return H, G, QSu


def _reversed_cholesky(H):
    """Cholesky of H with block order reversed; leading slices factor trailing H."""
    try:
        return scipy.linalg.cholesky(H[::-1, ::-1], lower=True)
    except scipy.linalg.LinAlgError:
        raise ValueError(
            "normal matrix is not positive definite; check that R is PD and Q is PSD"
        ) from None


def _solve_trailing(L_rev, rhs_trailing, N):
    """Solve H[k:, k:] X = rhs via the reversed Cholesky factor (k = N - s)."""
    s = rhs_trailing.shape[0]
    rhs_rev = rhs_trailing[::-1]
    y = scipy.linalg.solve_triangular(L_rev[:s, :s], rhs_rev, lower=True)
    z = scipy.linalg.solve_triangular(L_rev[:s, :s].T, y, lower=False)
    return z[::-1]


def solve_sls_column(stacked, cost, col):
    """Solve one block column of the closed-loop map problem independently.

    Returns full-height (phi_x_col, phi_u_col) of shapes ((T+1)m, m) and
    ((T+1)n, m), zero above block ``col``.  The trailing cost blocks
    Q^{i:}, R^{i:} keep an off-diagonal correlation block exactly when both
    of its timesteps are >= i.

    This is a direct, self-contained assembly (used by tests as a
    cross-check); :func:`solve_esls` computes the same solution through a
    shared factorization.
    """
    T = stacked.horizon
    m, n = stacked.state_dim, stacked.input_dim
    if not (0 <= col <= T):
        raise ValueError(f"column {col} outside horizon [0, {T}]")
    km, kn = col * m, col * n
    Su_t = stacked.S_u.dense[km:, kn:]
    Sx_col = stacked.S_x.dense[km:, km:km + m]

    nt = T + 1 - col
    Qt = np.zeros((nt * m, nt * m))
    for (i, j), blk in cost.Q.items():
        if i >= col and j >= col:
            Qt[(i - col) * m:(i - col + 1) * m, (j - col) * m:(j - col + 1) * m] = blk
    Rt = np.zeros((nt * n, nt * n))
    for t in range(col, T + 1):
        Rt[(t - col) * n:(t - col + 1) * n, (t - col) * n:(t - col + 1) * n] = cost.R[t]

    M = Su_t.T @ Qt @ Su_t + Rt
    rhs = Su_t.T @ Qt @ Sx_col
    phi_u_t = -np.linalg.solve((M + M.T) / 2, rhs)
    phi_x_t = Sx_col + Su_t @ phi_u_t

    phi_x = np.zeros(((T + 1) * m, m))
    phi_u = np.zeros(((T + 1) * n, m))
    phi_x[km:] = phi_x_t
    phi_u[kn:] = phi_u_t
    return phi_x, phi_u


def solve_esls(stacked, cost):
    """Synthesize closed-loop maps and feedforward for a stacked tracking cost.

    Parameters
    ----------
    stacked : StackedSystem
        Response operators of the (possibly time-varying) linear dynamics.
    cost : CostSpec
        Block-sparse quadratic cost; R blocks must be positive definite.

    Returns
    -------
    SystemResponse
        phi_x with identity diagonal blocks, strictly causal phi_u lower
        blocks per column, and the deterministic plan (d_x, d_u).  By
        construction phi_x = S_x + S_u phi_u and d_x = S_u d_u hold to
        floating-point accuracy.

    Notes
    -----
    Column i solves

        min || [S_x^i + S_u^{i:} phi] ||^2_{Q^{i:}} + || phi ||^2_{R^{i:}}

    whose normal matrix is the trailing slice H[i:, i:] of the shared
    H = S_u'QS_u + R; one Cholesky of H in reversed block order then serves
    every column.  The feedforward solves the same normal equations with the
    tracking linear term: d_u = H^{-1} (S_u' b + R u_d), where b is the exact
    accumulated linear part of the cost.
    """
    T = stacked.horizon
    m, n = stacked.state_dim, stacked.input_dim
    if cost.horizon != T or cost.state_dim != m or cost.input_dim != n:
        raise ValueError("cost dimensions do not match the stacked system")
    N = (T + 1) * n
    H, G, QSu = _assemble_normal_terms(stacked, cost)
    L_rev = _reversed_cholesky(H)

    phi_u = np.zeros((N, (T + 1) * m))
    for i in range(T + 1):
        rhs = G[i * n:, i * m:(i + 1) * m]
        phi_u[i * n:, i * m:(i + 1) * m] = -_solve_trailing(L_rev, rhs, N)
    phi_u = BlockLowerTriangular(phi_u, n, m, copy=False)
    phi_x = BlockLowerTriangular(
        stacked.S_x.dense + stacked.S_u.dense @ phi_u.dense, m, m, copy=False
    )

    rhs_ff = stacked.S_u.dense.T @ cost.linear_term + cost.assemble_dense_r() @ cost.u_d
    d_u = _solve_trailing(L_rev, rhs_ff.reshape(-1, 1), N).ravel()
    d_x = stacked.S_u @ d_u
    return SystemResponse(phi_x=phi_x, phi_u=phi_u, d_x=d_x, d_u=d_u)


def extract_controller(response):
    """Recover the realizable feedback form u = K x + k from a response.

    K = phi_u phi_x^{-1} via unit-triangular substitution on phi_x (its
    diagonal blocks are identities, so at the scalar level it is unit lower
    triangular); k = d_u - K d_x = (I - K S_u) d_u.
    """
    phi_x = response.phi_x
    phi_u = response.phi_u
    Kt = scipy.linalg.solve_triangular(
        phi_x.dense.T, phi_u.dense.T, lower=False, unit_diagonal=True
    )
    K = BlockLowerTriangular(
        Kt.T, phi_u.row_block_dim, phi_x.col_block_dim, copy=False
    )
    k = response.d_u - K @ response.d_x
    return Controller(K, k)
