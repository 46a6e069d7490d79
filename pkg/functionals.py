"""
Functionals module for the coupled Schrodinger bound-state solver.
Discrete E, J, P and Psi = E - lambda J - P with their dual residuals and
A-preconditioned (Sobolev) gradients, for single states and stacked batches.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from model import eval_gradW, eval_hessW, eval_W

logger = logging.getLogger(__name__)


class ContextError(ValueError):
    """Raised on a dimension mismatch or when A fails to factorize ((B) violated)."""


@dataclass(frozen=True, eq=False)
class State:
    """A pair u = (u1, u2) of nodal vectors on the unknowns."""
    u1: np.ndarray
    u2: np.ndarray

    @classmethod
    def from_vector(cls, vector):
        vector = np.asarray(vector, dtype=float)
        if vector.ndim != 1 or vector.size % 2:
            raise ContextError(f"Stacked state must be a 1D vector of even length, got shape {vector.shape}")
        half = vector.size // 2
        return cls(u1=vector[:half].copy(), u2=vector[half:].copy())

    @classmethod
    def zeros(cls, n):
        return cls(u1=np.zeros(n), u2=np.zeros(n))

    def vector(self):
        return np.concatenate([np.asarray(self.u1, dtype=float), np.asarray(self.u2, dtype=float)])

    def scaled(self, t):
        return State(u1=t * np.asarray(self.u1), u2=t * np.asarray(self.u2))

    @property
    def size(self):
        return int(np.asarray(self.u1).size)


def _tridiagonal_factor(block):
    """Upper banded Cholesky factor of a symmetric tridiagonal sparse block."""
    n = block.shape[0]
    banded = np.zeros((2, n))
    banded[1] = block.diagonal()
    if n > 1:
        banded[0, 1:] = block.diagonal(1)
    return cholesky_banded(banded, lower=False)


@dataclass(frozen=True, eq=False)
class FunctionalContext:
    """
    Assembled forms for one problem instance; immutable and shared read-only.

    A = blockdiag(K + M_b1, K + M_b2) is factorized once (banded Cholesky per block).
    B = [[M_V1, M_gamma], [M_gamma, M_V2]].
    """
    grid: object
    potentials: object
    nl: object
    A: sparse.csr_matrix
    B: sparse.csr_matrix
    weights: np.ndarray
    factors: tuple

    @property
    def n(self):
        return int(self.weights.size)

    @property
    def dim(self):
        return 2 * self.n

    def solve_A(self, rhs):
        """A^{-1} rhs for a stacked vector (2n,) or a column batch (2n, k)."""
        rhs = np.asarray(rhs, dtype=float)
        top = cho_solve_banded((self.factors[0], False), rhs[: self.n])
        bottom = cho_solve_banded((self.factors[1], False), rhs[self.n:])
        return np.concatenate([top, bottom], axis=0)

    def nonlinear_force(self, vec):
        """p(u) = (w W_t, w W_s) at every node; vec may be (2n,) or a row batch (k, 2n)."""
        n = self.n
        idx = np.arange(n)
        wt, ws = eval_gradW(self.nl, idx, (vec[..., :n], vec[..., n:]))
        return np.concatenate([self.weights * wt, self.weights * ws], axis=-1)

    def nonlinear_energy(self, vec):
        n = self.n
        values = eval_W(self.nl, np.arange(n), (vec[..., :n], vec[..., n:]))
        return np.sum(self.weights * values, axis=-1)


def build_context(grid, potentials, nl):
    """
    Assemble A and B on a grid and factorize A.

    Args:
        grid: Grid
        potentials: PotentialSet sampled on grid.interior_nodes
        nl: Nonlinearity

    Returns:
        FunctionalContext

    Raises:
        ContextError: on a size mismatch or a Cholesky failure
    """
    n = grid.n_unknowns
    if potentials.size != n:
        raise ContextError(f"Potentials have {potentials.size} nodal values, grid has {n} unknowns")

    w = grid.interior_weights
    K = grid.stiffness
    block1 = (K + sparse.diags(w * potentials.b1)).tocsr()
    block2 = (K + sparse.diags(w * potentials.b2)).tocsr()

    try:
        factors = (_tridiagonal_factor(block1), _tridiagonal_factor(block2))
    except LinAlgError as e:
        raise ContextError(f"A is not positive definite, hypothesis (B) violated: {e}") from e

    A = sparse.block_diag([block1, block2], format="csr")
    wg = sparse.diags(w * potentials.gamma)
    B = sparse.bmat(
        [[sparse.diags(w * potentials.V1), wg], [wg, sparse.diags(w * potentials.V2)]],
        format="csr",
    )
    logger.debug(f"Functional context assembled: {2 * n} unknowns, nonlinearity={nl.label}")
    return FunctionalContext(grid=grid, potentials=potentials, nl=nl, A=A, B=B, weights=w, factors=factors)


def as_vector(ctx, u):
    """Stacked (2n,) vector of a State or an already stacked array."""
    vec = u.vector() if isinstance(u, State) else np.asarray(u, dtype=float)
    if vec.shape != (ctx.dim,):
        raise ContextError(f"State dimension {vec.shape} does not match the grid ({ctx.dim},)")
    return vec


def as_batch(ctx, states):
    """Row batch (k, 2n) from a sequence of States or a 2D array."""
    if isinstance(states, np.ndarray) and states.ndim == 2:
        batch = states.astype(float, copy=False)
    else:
        batch = np.array([as_vector(ctx, u) for u in states], dtype=float).reshape(-1, ctx.dim)
    if batch.shape[1] != ctx.dim:
        raise ContextError(f"Batch rows have length {batch.shape[1]}, expected {ctx.dim}")
    return batch


# ---------------------------------------------------------------------------
# Single-state functionals
# ---------------------------------------------------------------------------

def energy_E(ctx, u):
    vec = as_vector(ctx, u)
    return 0.5 * float(vec @ (ctx.A @ vec))


def functional_J(ctx, u):
    vec = as_vector(ctx, u)
    return 0.5 * float(vec @ (ctx.B @ vec))


def functional_P(ctx, u):
    return float(ctx.nonlinear_energy(as_vector(ctx, u)))


def psi(ctx, u, lam):
    """Psi(u) = E(u) - lambda J(u) - P(u)."""
    vec = as_vector(ctx, u)
    return energy_E(ctx, vec) - lam * functional_J(ctx, vec) - functional_P(ctx, vec)


def dual_residual_vector(ctx, u, lam):
    vec = as_vector(ctx, u)
    return ctx.A @ vec - lam * (ctx.B @ vec) - ctx.nonlinear_force(vec)


def dual_residual(ctx, u, lam):
    """
    Nodal dual residual r = Au - lambda Bu - p(u); r = 0 is a discrete weak solution.

    Returns:
        State
    """
    return State.from_vector(dual_residual_vector(ctx, u, lam))


def sobolev_gradient_vector(ctx, u, lam):
    return ctx.solve_A(dual_residual_vector(ctx, u, lam))


def sobolev_gradient(ctx, u, lam):
    """g = A^{-1} r, the Riesz representative of Psi'(u) in the A inner product."""
    return State.from_vector(sobolev_gradient_vector(ctx, u, lam))


def residual_norm(ctx, u, lam):
    """||Psi'(u)|| in the dual norm: sqrt(r^T A^{-1} r)."""
    r = dual_residual_vector(ctx, u, lam)
    return float(np.sqrt(max(r @ ctx.solve_A(r), 0.0)))


def a_norm(ctx, u):
    vec = as_vector(ctx, u)
    return float(np.sqrt(max(vec @ (ctx.A @ vec), 0.0)))


def component_norms(ctx, u):
    """(||u1||_1, ||u2||_2), the norms of H1 and H2."""
    vec = as_vector(ctx, u)
    Au = ctx.A @ vec
    n = ctx.n
    return (float(np.sqrt(max(vec[:n] @ Au[:n], 0.0))), float(np.sqrt(max(vec[n:] @ Au[n:], 0.0))))


def jacobian(ctx, u, lam):
    """
    Sparse Jacobian of the dual residual: A - lambda B - [w Hess W] (nodal 2x2 blocks).

    Returns:
        scipy.sparse.csc_matrix
    """
    vec = as_vector(ctx, u)
    n = ctx.n
    w_tt, w_ts, w_ss = eval_hessW(ctx.nl, np.arange(n), (vec[:n], vec[n:]))
    w = ctx.weights
    cross = sparse.diags(w * np.broadcast_to(w_ts, (n,)))
    hess = sparse.bmat(
        [[sparse.diags(w * np.broadcast_to(w_tt, (n,))), cross],
         [cross, sparse.diags(w * np.broadcast_to(w_ss, (n,)))]],
        format="csr",
    )
    return (ctx.A - lam * ctx.B - hess).tocsc()


# ---------------------------------------------------------------------------
# Batched functionals (rows are stacked states)
# ---------------------------------------------------------------------------

def batch_energy_E(ctx, states):
    U = as_batch(ctx, states)
    return 0.5 * np.einsum("ij,ij->i", U, (ctx.A @ U.T).T)


def batch_functional_J(ctx, states):
    U = as_batch(ctx, states)
    return 0.5 * np.einsum("ij,ij->i", U, (ctx.B @ U.T).T)


def batch_functional_P(ctx, states):
    return ctx.nonlinear_energy(as_batch(ctx, states))


def batch_psi(ctx, states, lam):
    U = as_batch(ctx, states)
    return batch_energy_E(ctx, U) - lam * batch_functional_J(ctx, U) - batch_functional_P(ctx, U)


def batch_dual_residual(ctx, states, lam):
    U = as_batch(ctx, states)
    return (ctx.A @ U.T).T - lam * (ctx.B @ U.T).T - ctx.nonlinear_force(U)


def batch_sobolev_gradient(ctx, states, lam):
    R = batch_dual_residual(ctx, states, lam)
    return ctx.solve_A(R.T).T
