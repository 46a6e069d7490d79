"""
Pencil module for the coupled Schrodinger bound-state solver.
Generalized eigenproblem A u = mu B u (A SPD, B indefinite), the increasing
sequence mu_n, the position of lambda in it and the cone tests built on it.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import LinAlgError, cholesky, eigh, solve_triangular
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

import config
from functionals import as_vector

logger = logging.getLogger(__name__)


class PencilError(RuntimeError):
    """Raised when the pencil cannot be reduced or an oracle is out of range."""


class ResonanceError(PencilError):
    """Raised when lambda sits on mu_{m+1} within the resonance tolerance."""


class SpectrumTooShortError(PencilError):
    """Raised when lambda lies beyond the computed eigenvalues."""


@dataclass(frozen=True, eq=False)
class EigenSeq:
    """
    Positive pencil eigenvalues mu_1 <= mu_2 <= ... with vectors scaled to J = 1.

    vectors holds one stacked state per row. Negative eigenvalues are kept for
    diagnostics with their vectors scaled to J = -1.
    """
    mus: np.ndarray
    vectors: np.ndarray
    neg_mus: np.ndarray
    neg_vectors: np.ndarray
    n_zero_modes: int
    residuals: np.ndarray
    j_values: np.ndarray
    star_failed: bool = False
    fallback_vector: Optional[np.ndarray] = None
    method: str = "dense"

    def __len__(self):
        return int(self.mus.size)

    def to_dict(self):
        return {
            "method": self.method,
            "star_failed": bool(self.star_failed),
            "n_zero_modes": int(self.n_zero_modes),
            "mus": [
                {"index": i + 1, "mu": float(mu), "J": float(j), "residual": float(res)}
                for i, (mu, j, res) in enumerate(zip(self.mus, self.j_values, self.residuals))
            ],
            "neg_mus": [float(mu) for mu in self.neg_mus],
        }


@dataclass(frozen=True, eq=False)
class ConeGeometry:
    """Position of lambda in the spectrum with the bases spanning C- and probing C+."""
    m: int
    lam: float
    mu_m: Optional[float]
    mu_m1: float
    basis_minus: np.ndarray
    e_vector: np.ndarray
    basis_plus: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    mus_plus: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self):
        return {
            "m": int(self.m),
            "lambda": float(self.lam),
            "mu_m": None if self.mu_m is None else float(self.mu_m),
            "mu_m1": float(self.mu_m1),
        }


@dataclass(frozen=True)
class ConeMembership:
    in_minus: bool
    in_plus: bool

    @property
    def label(self):
        if self.in_minus and self.in_plus:
            return "Both"
        if self.in_minus:
            return "InCminus"
        if self.in_plus:
            return "InCplus"
        return "Neither"


def _pair_residuals(ctx, mus, vectors):
    if not len(mus):
        return np.zeros(0)
    AV = (ctx.A @ vectors.T).T
    BV = (ctx.B @ vectors.T).T
    num = np.linalg.norm(AV - mus[:, None] * BV, axis=1)
    return num / np.maximum(np.linalg.norm(AV, axis=1), np.finfo(float).tiny)


def _mass_matrix(ctx):
    mass = sparse.diags(ctx.weights)
    return sparse.block_diag([mass, mass], format="csr")


def _ground_direction(ctx, A_dense=None):
    """Lowest mode of (A, M) scaled to ||u||_A = 1; seeds the m = 0 branch when mus is empty."""
    M = _mass_matrix(ctx)
    if A_dense is not None:
        _, vecs = eigh(A_dense, M.toarray(), subset_by_index=[0, 0])
        v = vecs[:, 0]
    else:
        _, vecs = eigsh(ctx.A, k=1, M=M, sigma=0.0, which="LM")
        v = vecs[:, 0]
    v = v / np.sqrt(v @ (ctx.A @ v))
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def _dense_pencil(ctx, tol):
    A = ctx.A.toarray()
    B = ctx.B.toarray()
    try:
        L = cholesky(A, lower=True)
    except LinAlgError as e:
        raise PencilError(f"Cholesky of A failed, hypothesis (B) violated: {e}") from e

    # S = L^{-1} B L^{-T}
    X = solve_triangular(L, B, lower=True)
    S = solve_triangular(L, X.T, lower=True)
    S = 0.5 * (S + S.T)
    nu, Y = eigh(S)
    U = solve_triangular(L.T, Y, lower=False)

    scale = max(float(np.max(np.abs(nu))), np.finfo(float).tiny) if nu.size else 1.0
    cut = tol * scale
    return A, nu, U, cut


def _sparse_pencil(ctx, k):
    k = min(k, ctx.dim - 1)
    try:
        # Lanczos on A^{-1} B, i.e. shift-invert of A u = mu B u at mu = 0; largest nu = 1/mu
        nu, U = eigsh(ctx.B, k=k, M=ctx.A, which="LA")
    except (ArpackError, ArpackNoConvergence) as e:
        raise PencilError(f"Sparse pencil eigensolve failed: {e}") from e
    # A-normalize so the J = 1 scaling below is exact
    U = U / np.sqrt(np.einsum("ij,ij->j", U, ctx.A @ U))
    scale = max(float(np.max(np.abs(nu))), np.finfo(float).tiny) if nu.size else 1.0
    return nu, U, scale


def solve_pencil(ctx, k_max=None):
    """
    Solve E'(u) = mu J'(u) for the smallest positive mu.

    Reduces with A = L L^T to S y = nu y, S = L^{-1} B L^{-T}, and maps
    mu = 1/nu for nu > 0. Every returned vector u satisfies J(u) = 1 and E(u) = mu.

    Args:
        ctx: FunctionalContext
        k_max: maximum number of eigenvalues kept (default PENCIL_CONFIG["k_max"])

    Returns:
        EigenSeq (empty mus with star_failed=True when every nu <= 0)

    Raises:
        PencilError: if A cannot be factorized or the sparse solve fails
    """
    k_max = k_max or config.PENCIL_CONFIG["k_max"]
    tol = config.PENCIL_CONFIG["zero_mode_tol"]
    A_dense = None

    if ctx.dim <= config.PENCIL_CONFIG["dense_cutoff"]:
        A_dense, nu, U, cut = _dense_pencil(ctx, tol)
        method = "dense"
        n_zero = int(np.sum(np.abs(nu) <= cut))
    else:
        nu, U, scale = _sparse_pencil(ctx, k_max)
        cut = tol * scale
        method = "sparse"
        n_zero = 0

    pos = np.where(nu > cut)[0]
    neg = np.where(nu < -cut)[0]

    # Largest nu first gives increasing mu
    pos = pos[np.argsort(-nu[pos], kind="stable")][:k_max]
    mus = 1.0 / nu[pos]
    vectors = (U[:, pos] * np.sqrt(2.0 / nu[pos])).T

    neg = neg[np.argsort(-nu[neg], kind="stable")]
    neg_mus = 1.0 / nu[neg]
    neg_vectors = (U[:, neg] * np.sqrt(-2.0 / nu[neg])).T

    j_values = 0.5 * np.einsum("ij,ij->i", vectors, (ctx.B @ vectors.T).T) if len(mus) else np.zeros(0)
    residuals = _pair_residuals(ctx, mus, vectors)

    star_failed = mus.size == 0
    fallback = None
    if star_failed:
        logger.warning("Pencil has no positive eigenvalue: condition (**) fails discretely")
        fallback = _ground_direction(ctx, A_dense)

    seq = EigenSeq(
        mus=mus,
        vectors=vectors.reshape(-1, ctx.dim),
        neg_mus=neg_mus,
        neg_vectors=neg_vectors.reshape(-1, ctx.dim),
        n_zero_modes=n_zero,
        residuals=residuals,
        j_values=j_values,
        star_failed=star_failed,
        fallback_vector=fallback,
        method=method,
    )
    if len(seq):
        logger.info(
            f"Pencil solved ({method}): {len(seq)} positive eigenvalues, mu_1={mus[0]:.10g}, "
            f"zero modes={n_zero}, max residual={np.max(residuals):.2e}"
        )
    return seq


def _subspace_value(ctx, basis):
    """sup of E on {u in span(basis) : J(u) = 1}; inf when that set is not compact."""
    A_u = basis.T @ (ctx.A @ basis)
    B_u = basis.T @ (ctx.B @ basis)
    try:
        nu = eigh(0.5 * (B_u + B_u.T), 0.5 * (A_u + A_u.T), eigvals_only=True)
    except LinAlgError:
        return np.inf
    if nu[0] <= config.PENCIL_CONFIG["zero_mode_tol"] * max(1.0, np.max(np.abs(nu))):
        return np.inf
    return float(1.0 / nu[0])


def _a_orthonormal(ctx, Z, rank_tol=1e-10):
    """A-orthonormal basis of span(Z) with rank truncation."""
    G = Z.T @ (ctx.A @ Z)
    G = 0.5 * (G + G.T)
    evals, evecs = eigh(G)
    keep = evals > rank_tol * max(float(evals[-1]), np.finfo(float).tiny)
    return Z @ (evecs[:, keep] / np.sqrt(evals[keep]))


def minmax_oracle(ctx, n, samples=None, refine_iters=None, rng=None):
    """
    Min over n-dimensional subspaces U of max E on U intersected with {J = 1}.

    Random subspaces give an upper bound; a block Rayleigh-Ritz refinement on
    span(U, A^{-1}BU, previous U) then drives the best subspace downhill.

    Args:
        ctx: FunctionalContext with at most PENCIL_CONFIG["oracle_max_dim"] unknowns
        n: subspace dimension (index of the eigenvalue)
        samples: number of random subspaces
        refine_iters: maximum refinement sweeps
        rng: numpy Generator

    Returns:
        float (inf when no sampled subspace has a compact J = 1 section)

    Raises:
        PencilError: if the instance is too large or n is out of range
    """
    cap = config.PENCIL_CONFIG["oracle_max_dim"]
    if ctx.dim > cap:
        raise PencilError(f"minmax_oracle limited to {cap} unknowns, got {ctx.dim}")
    if not 1 <= n <= ctx.dim:
        raise PencilError(f"Subspace dimension n={n} out of range [1, {ctx.dim}]")

    samples = samples or config.PENCIL_CONFIG["oracle_samples"]
    refine_iters = refine_iters or config.PENCIL_CONFIG["oracle_refine_iters"]
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])

    best_value = np.inf
    best_basis = None
    for _ in range(samples):
        basis = rng.standard_normal((ctx.dim, n))
        value = _subspace_value(ctx, basis)
        if value < best_value or best_basis is None:
            best_value, best_basis = value, basis

    basis = _a_orthonormal(ctx, best_basis)
    previous = np.zeros((ctx.dim, 0))
    for sweep in range(refine_iters):
        Z = np.hstack([basis, ctx.solve_A(ctx.B @ basis), previous])
        Q = _a_orthonormal(ctx, Z)
        if Q.shape[1] < n:
            break
        B_q = Q.T @ (ctx.B @ Q)
        nu, Y = eigh(0.5 * (B_q + B_q.T))
        new_basis = Q @ Y[:, -n:]
        previous, basis = basis, new_basis
        value = _subspace_value(ctx, basis)
        if value < best_value:
            improvement = best_value - value
            best_value = value
            if np.isfinite(improvement) and improvement <= 1e-15 * max(1.0, abs(value)):
                break
        elif np.isfinite(best_value) and value >= best_value:
            break

    logger.debug(f"minmax_oracle(n={n}) = {best_value:.12g} after {sweep + 1} refinement sweeps")
    return best_value


def locate_lambda(seq, lam, resonance_tol=None):
    """
    Find m with mu_m <= lambda < mu_{m+1}.

    Args:
        seq: EigenSeq
        lam: nonnegative lambda (apply sign_normalize first)
        resonance_tol: rejection distance to mu_{m+1} (default PENCIL_CONFIG["resonance_tol"])

    Returns:
        ConeGeometry

    Raises:
        PencilError: for negative lambda
        SpectrumTooShortError: when lambda >= every computed mu (increase k_max)
        ResonanceError: when lambda is within the tolerance of mu_{m+1}
    """
    if lam < 0:
        raise PencilError(f"lambda must be >= 0 (apply sign_normalize first), got {lam}")
    resonance_tol = config.PENCIL_CONFIG["resonance_tol"] if resonance_tol is None else resonance_tol
    dim = seq.vectors.shape[1] if seq.vectors.size else (seq.fallback_vector.size if seq.fallback_vector is not None else 0)

    if len(seq) == 0:
        e_vector = seq.fallback_vector if seq.fallback_vector is not None else np.zeros(dim)
        return ConeGeometry(m=0, lam=float(lam), mu_m=None, mu_m1=np.inf,
                            basis_minus=np.zeros((0, dim)), e_vector=e_vector,
                            basis_plus=seq.neg_vectors, mus_plus=np.full(len(seq.neg_vectors), np.inf))

    m = int(np.searchsorted(seq.mus, lam, side="right"))
    if m >= len(seq):
        raise SpectrumTooShortError(
            f"lambda={lam} is beyond the {len(seq)} computed eigenvalues (mu_max={seq.mus[-1]:.6g}); increase k_max"
        )
    mu_m1 = float(seq.mus[m])
    if abs(lam - mu_m1) <= resonance_tol:
        raise ResonanceError(f"lambda={lam} is resonant with mu_{m + 1}={mu_m1:.12g}")

    geom = ConeGeometry(
        m=m,
        lam=float(lam),
        mu_m=float(seq.mus[m - 1]) if m > 0 else None,
        mu_m1=mu_m1,
        basis_minus=seq.vectors[:m].copy(),
        e_vector=seq.vectors[m].copy(),
        basis_plus=np.vstack([seq.vectors[m:], seq.neg_vectors]),
        mus_plus=np.concatenate([seq.mus[m:], np.full(len(seq.neg_vectors), np.inf)]),
    )
    logger.info(f"lambda={lam:.10g} located: m={m}, mu_m1={mu_m1:.10g}")
    return geom


def sign_normalize(problem):
    """Replace (lambda, V1, V2, gamma) by (-lambda, -V1, -V2, -gamma) when lambda < 0."""
    if problem.lam >= 0:
        return problem
    logger.debug(f"Sign-normalizing lambda={problem.lam}")
    return replace(problem, potentials=problem.potentials.negated_coupling(), lam=-problem.lam)


def cone_test(geom, ctx, u):
    """
    Membership of u in C- = {E <= mu_m J} and C+ = {E >= mu_{m+1} J}.

    For m = 0, C- = {0} and C+ is the whole space.
    """
    vec = as_vector(ctx, u)
    E = 0.5 * float(vec @ (ctx.A @ vec))
    J = 0.5 * float(vec @ (ctx.B @ vec))
    tol = 1e-10 * (1.0 + E)

    if geom.m == 0:
        return ConeMembership(in_minus=bool(E <= tol), in_plus=True)
    in_minus = E <= geom.mu_m * J + tol
    in_plus = E >= geom.mu_m1 * J - tol
    return ConeMembership(in_minus=bool(in_minus), in_plus=bool(in_plus))
