"""Stacked representation of finite-horizon linear time-varying systems.

The whole trajectory is treated as one linear-algebra object: states, inputs
and disturbances over a horizon of T steps are stacked into single vectors

    x = [x_0, ..., x_T],   u = [u_0, ..., u_T],   w = [x_0, w_0, ..., w_{T-1}],

and the dynamics become ``x = Z A_d x + Z B_d u + w`` where ``A_d``, ``B_d``
are block diagonal and ``Z`` is the block delay operator (identity blocks on
the first block subdiagonal).  Everything downstream works with the two
causal response operators

    S_x = (I - Z A_d)^{-1}        (maps disturbances to states),
    S_u = S_x Z B_d               (maps inputs to states),

both block lower triangular.  ``Z`` is never materialized; shifting by one
block is an index operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class BlockLowerTriangular:
    """Block lower triangular matrix with uniform block sizes.

    Stores a dense backing array whose blocks above the diagonal (strictly
    above for ``strict=True``) are structurally zero; the constructor
    enforces the zero pattern.  Blocks are addressed by block indices
    ``(i, j)`` with ``i >= j`` (``i > j`` when strict).  Instances are
    treated as immutable once built; builders use :meth:`set_block` during
    assembly only.
    """

    def __init__(self, dense, row_block_dim, col_block_dim, strict=False, copy=True):
        dense = np.array(dense, dtype=float, copy=copy)
        if dense.ndim != 2:
            raise ValueError("expected a 2-D array")
        rows, cols = dense.shape
        if rows % row_block_dim or cols % col_block_dim:
            raise ValueError(
                f"shape {dense.shape} not divisible by block dims "
                f"({row_block_dim}, {col_block_dim})"
            )
        if rows // row_block_dim != cols // col_block_dim:
            raise ValueError("row and column block counts differ")
        self.row_block_dim = int(row_block_dim)
        self.col_block_dim = int(col_block_dim)
        self.strict = bool(strict)
        self._dense = dense
        self._mask_upper()

    @property
    def T_blocks(self):
        """Number of block rows (= block columns)."""
        return self._dense.shape[0] // self.row_block_dim

    @property
    def dense(self):
        """The dense backing array. Do not mutate."""
        return self._dense

    @property
    def shape(self):
        return self._dense.shape

    def _mask_upper(self):
        nb = self.T_blocks
        br = np.repeat(np.arange(nb), self.row_block_dim)
        bc = np.repeat(np.arange(nb), self.col_block_dim)
        keep = br[:, None] > bc[None, :] if self.strict else br[:, None] >= bc[None, :]
        self._dense[~keep] = 0.0

    @classmethod
    def zeros(cls, n_blocks, row_block_dim, col_block_dim, strict=False):
        dense = np.zeros((n_blocks * row_block_dim, n_blocks * col_block_dim))
        return cls(dense, row_block_dim, col_block_dim, strict=strict, copy=False)

    @classmethod
    def identity(cls, n_blocks, block_dim):
        return cls(np.eye(n_blocks * block_dim), block_dim, block_dim, copy=False)

    @classmethod
    def from_blocks(cls, n_blocks, row_block_dim, col_block_dim, blocks, strict=False):
        """Build from a mapping ``(i, j) -> block``; missing blocks are zero."""
        out = cls.zeros(n_blocks, row_block_dim, col_block_dim, strict=strict)
        for (i, j), val in blocks.items():
            out.set_block(i, j, val)
        return out

    def _check_index(self, i, j):
        nb = self.T_blocks
        if not (0 <= i < nb and 0 <= j < nb):
            raise IndexError(f"block index ({i}, {j}) out of range for {nb} blocks")

    def block(self, i, j):
        """Return a copy of block (i, j); blocks above the diagonal are zero."""
        self._check_index(i, j)
        r, c = self.row_block_dim, self.col_block_dim
        return self._dense[i * r:(i + 1) * r, j * c:(j + 1) * c].copy()

    def set_block(self, i, j, value):
        self._check_index(i, j)
        if i < j or (self.strict and i == j):
            raise ValueError(
                f"block ({i}, {j}) is structurally zero for this "
                f"{'strictly ' if self.strict else ''}lower triangular matrix"
            )
        value = np.asarray(value, dtype=float)
        r, c = self.row_block_dim, self.col_block_dim
        if value.shape != (r, c):
            raise ValueError(f"block shape {value.shape} != ({r}, {c})")
        self._dense[i * r:(i + 1) * r, j * c:(j + 1) * c] = value

    def blocks(self):
        """Iterate over stored blocks as (i, j, copy) with i >= j (> if strict)."""
        nb = self.T_blocks
        for i in range(nb):
            stop = i if self.strict else i + 1
            for j in range(stop):
                yield i, j, self.block(i, j)

    def __matmul__(self, other):
        if isinstance(other, BlockLowerTriangular):
            if self.col_block_dim != other.row_block_dim or self.T_blocks != other.T_blocks:
                raise ValueError("incompatible block structure for product")
            return BlockLowerTriangular(
                self._dense @ other._dense,
                self.row_block_dim,
                other.col_block_dim,
                strict=self.strict or other.strict,
                copy=False,
            )
        other = np.asarray(other, dtype=float)
        return self._dense @ other

    def transpose_dense(self):
        """Dense transpose (block upper triangular, so plain ndarray)."""
        return self._dense.T.copy()

    def allclose(self, other, rtol=1e-9, atol=1e-12):
        return np.allclose(self._dense, other.dense, rtol=rtol, atol=atol)

    def __repr__(self):
        return (
            f"BlockLowerTriangular(T_blocks={self.T_blocks}, "
            f"block=({self.row_block_dim}x{self.col_block_dim}), strict={self.strict})"
        )


def apply_block_delay(v, block_dim):
    """Apply the delay operator Z to a stacked vector: shift down one block.

    The first block of the result is zero; the last block of ``v`` drops out.
    """
    v = np.asarray(v, dtype=float)
    if v.size % block_dim:
        raise ValueError("vector length not divisible by block dimension")
    out = np.zeros_like(v)
    out[block_dim:] = v[:-block_dim]
    return out


def delay_blt(M):
    """Left-multiply a block lower triangular matrix by Z (shift block rows down)."""
    r = M.row_block_dim
    dense = np.zeros_like(M.dense)
    dense[r:, :] = M.dense[:-r, :]
    return BlockLowerTriangular(dense, r, M.col_block_dim, strict=True, copy=False)


@dataclass
class TimeVaryingLinearSystem:
    """Discrete linear time-varying dynamics x_{t+1} = A_t x_t + B_t u_t + w_t.

    ``A`` and ``B`` hold T+1 blocks (t = 0..T); the final pair is carried for
    dimension bookkeeping but never propagates anything (it is shifted out).
    """

    A: list
    B: list

    def __post_init__(self):
        self.A = [np.asarray(a, dtype=float) for a in self.A]
        self.B = [np.asarray(b, dtype=float) for b in self.B]
        if len(self.A) != len(self.B):
            raise ValueError("A and B block lists must have equal length (T+1)")
        if not self.A:
            raise ValueError("need at least one block (T >= 0)")
        m = self.A[0].shape[0]
        n = self.B[0].shape[1]
        for t, (a, b) in enumerate(zip(self.A, self.B)):
            if a.shape != (m, m):
                raise ValueError(f"A[{t}] has shape {a.shape}, expected ({m}, {m})")
            if b.shape != (m, n):
                raise ValueError(f"B[{t}] has shape {b.shape}, expected ({m}, {n})")

    @property
    def horizon(self):
        return len(self.A) - 1

    @property
    def state_dim(self):
        return self.A[0].shape[0]

    @property
    def input_dim(self):
        return self.B[0].shape[1]

    @classmethod
    def constant(cls, A, B, horizon):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        return cls([A.copy() for _ in range(horizon + 1)],
                   [B.copy() for _ in range(horizon + 1)])


class NoiseModel:
    """Gaussian disturbance model for the stacked vector w = [x_0, w_0, .., w_{T-1}].

    The first block carries the initial state (mean ``mu_x0``, diagonal
    covariance ``sigma_x0``); later blocks are zero-mean process noise with
    shared per-coordinate variances ``sigma_noise``.  Only diagonal
    covariances are representable, which is all the solver ever consults:
    the deterministic synthesis does not depend on the noise scale, and the
    model exists to drive simulations.
    """

    def __init__(self, horizon, mu_x0, sigma_x0, sigma_noise):
        self.horizon = int(horizon)
        self.mu_x0 = np.asarray(mu_x0, dtype=float).copy()
        self.sigma_x0 = np.asarray(sigma_x0, dtype=float).copy()
        self.sigma_noise = np.asarray(sigma_noise, dtype=float).copy()
        m = self.mu_x0.size
        if self.sigma_x0.shape != (m,) or self.sigma_noise.shape != (m,):
            raise ValueError("variance vectors must match the state dimension")
        if np.any(self.sigma_x0 < 0) or np.any(self.sigma_noise < 0):
            raise ValueError("variances must be nonnegative")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")

    @property
    def state_dim(self):
        return self.mu_x0.size

    @property
    def mu_w(self):
        """Stacked disturbance mean: mu_x0 followed by exact zeros."""
        m = self.state_dim
        mu = np.zeros((self.horizon + 1) * m)
        mu[:m] = self.mu_x0
        return mu

    @property
    def sigma_diag(self):
        """(T+1, m) array of per-block diagonal variances."""
        out = np.tile(self.sigma_noise, (self.horizon + 1, 1))
        out[0] = self.sigma_x0
        return out

    @classmethod
    def zero(cls, horizon, state_dim):
        z = np.zeros(state_dim)
        return cls(horizon, z, z, z)

    def sample(self, rng):
        """Draw one stacked disturbance realization, shape ((T+1)*m,)."""
        sig = self.sigma_diag
        w = rng.standard_normal(sig.shape) * np.sqrt(sig)
        w[0] += self.mu_x0
        return w.ravel()


@dataclass
class StackedSystem:
    """A time-varying system together with its stacked response operators."""

    system: TimeVaryingLinearSystem
    S_x: BlockLowerTriangular
    S_u: BlockLowerTriangular

    @property
    def horizon(self):
        return self.system.horizon

    @property
    def state_dim(self):
        return self.system.state_dim

    @property
    def input_dim(self):
        return self.system.input_dim

    @property
    def A_d(self):
        return self.system.A

    @property
    def B_d(self):
        return self.system.B

    def disturbance_to_state(self, w):
        return self.S_x @ w

    def input_to_state(self, u):
        return self.S_u @ u


def blt_invert_unit_diagonal(M, atol=1e-8):
    """Invert a block lower triangular matrix whose diagonal blocks are identity.

    The inverse is obtained by forward substitution, which is exact for this
    class (the matrix is unit lower triangular at the scalar level, so the
    scalar and block recursions compute identical values).  Raises if a
    diagonal block deviates from the identity beyond ``atol``.
    """
    if M.row_block_dim != M.col_block_dim:
        raise ValueError("only square-block matrices can be inverted")
    if M.strict:
        raise ValueError("a strictly lower triangular matrix is singular")
    d = M.row_block_dim
    eye = np.eye(d)
    for i in range(M.T_blocks):
        if not np.allclose(M.block(i, i), eye, atol=atol, rtol=0.0):
            raise ValueError(f"diagonal block {i} is not the identity")
    inv = scipy.linalg.solve_triangular(
        M.dense, np.eye(M.dense.shape[0]), lower=True, unit_diagonal=True
    )
    return BlockLowerTriangular(inv, d, d, copy=False)


def build_stacked(system):
    """Assemble the stacked response operators for a time-varying system.

    S_x solves (I - Z A_d) S_x = I by forward substitution (the Neumann
    series of Z A_d terminates because (Z A_d)^{T+1} = 0); S_u = S_x Z B_d.
    """
    T = system.horizon
    m, n = system.state_dim, system.input_dim
    eye_minus_za = BlockLowerTriangular.identity(T + 1, m)
    for t in range(1, T + 1):
        eye_minus_za.set_block(t, t - 1, -system.A[t - 1])
    S_x = blt_invert_unit_diagonal(eye_minus_za)

    S_u = BlockLowerTriangular.zeros(T + 1, m, n, strict=True)
    sx = S_x.dense
    su = S_u.dense
    for j in range(T):
        su[:, j * n:(j + 1) * n] = sx[:, (j + 1) * m:(j + 2) * m] @ system.B[j]
    S_u._mask_upper()
    return StackedSystem(system=system, S_x=S_x, S_u=S_u)


def achievability_residual(stacked, phi_x, phi_u):
    """Relative Frobenius residual of the closed-loop map constraint.

    Measures ||phi_x - S_x - S_u phi_u||_F / max(1, ||phi_x||_F); any causal
    pair of response maps the dynamics can realize makes this zero.
    """
    px = phi_x.dense if isinstance(phi_x, BlockLowerTriangular) else np.asarray(phi_x)
    pu = phi_u.dense if isinstance(phi_u, BlockLowerTriangular) else np.asarray(phi_u)
    res = px - stacked.S_x.dense - stacked.S_u.dense @ pu
    return float(np.linalg.norm(res) / max(1.0, np.linalg.norm(px)))


def feedforward_residual(stacked, d_x, d_u):
    """Relative residual of the feedforward consistency constraint d_x = S_u d_u."""
    d_x = np.asarray(d_x, dtype=float)
    res = d_x - stacked.S_u @ np.asarray(d_u, dtype=float)
    return float(np.linalg.norm(res) / max(1.0, np.linalg.norm(d_x)))
