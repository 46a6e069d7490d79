"""
Solver module for the coupled Schrodinger bound-state solver.
Nontrivial critical points of Psi at the linking level: mountain-pass path
deformation for m = 0, mesh deformation of Q for m >= 1, a peak-selection
minimax stage shared by both branches, damped Newton refinement and Cerami
diagnostics.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import splu

import config
from functionals import (
    State,
    a_norm,
    batch_psi,
    batch_sobolev_gradient,
    component_norms,
    dual_residual_vector,
    jacobian,
    psi,
    residual_norm,
    sobolev_gradient_vector,
)
from pencil import locate_lambda, solve_pencil

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-10
LEVEL_SLACK = 1e-2
MAX_RADIUS_GROWTHS = 3
REMARK2_FLOOR = 1e-6


class SolverError(RuntimeError):
    """Raised when no acceptable critical point is produced."""


class GeometryError(SolverError):
    """Raised when the linking radii r+ / r- cannot be established."""


class TrivialSolutionError(SolverError):
    """Raised when a search collapses onto u = 0."""


class NotConverged(SolverError):
    """Raised by Newton refinement; carries the residual trace."""

    def __init__(self, message, trace=None, sigma_min=None):
        super().__init__(message)
        self.trace = list(trace or [])
        self.sigma_min = sigma_min


@dataclass
class SolverConfig:
    """Search parameters; None radii are estimated from the sampled geometry."""
    r_plus: Optional[float] = config.SOLVER_CONFIG["r_plus"]
    r_minus: Optional[float] = config.SOLVER_CONFIG["r_minus"]
    flow_step: float = config.SOLVER_CONFIG["flow_step"]
    max_iters: int = config.SOLVER_CONFIG["max_iters"]
    residual_tol: float = config.SOLVER_CONFIG["residual_tol"]
    newton_switch_tol: float = config.SOLVER_CONFIG["newton_switch_tol"]
    multistart: int = config.SOLVER_CONFIG["multistart"]
    path_points: int = config.SOLVER_CONFIG["path_points"]
    armijo_c: float = config.SOLVER_CONFIG["armijo_c"]
    min_step: float = config.SOLVER_CONFIG["min_step"]
    newton_max_iters: int = config.SOLVER_CONFIG["newton_max_iters"]
    peak_iters: int = config.SOLVER_CONFIG["peak_iters"]
    mesh_iters: int = config.SOLVER_CONFIG["mesh_iters"]
    probe_count: int = config.SOLVER_CONFIG["probe_count"]
    probe_refine_iters: int = config.SOLVER_CONFIG["probe_refine_iters"]
    plus_radii: tuple = tuple(config.SOLVER_CONFIG["plus_radii"])
    minus_growth: float = config.SOLVER_CONFIG["minus_growth"]
    minus_cap: float = config.SOLVER_CONFIG["minus_cap"]
    trivial_norm: float = config.SOLVER_CONFIG["trivial_norm"]
    mesh_radial: int = config.SOLVER_CONFIG["mesh_radial"]
    mesh_angular: int = config.SOLVER_CONFIG["mesh_angular"]

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in fields(cls)}
        unknown = set(values or {}) - names
        if unknown:
            raise SolverError(f"Unknown solver settings: {sorted(unknown)}")
        known = dict(values or {})
        if "plus_radii" in known:
            known["plus_radii"] = tuple(known["plus_radii"])
        cfg = cls(**known)
        cfg.validate()
        return cfg

    def validate(self):
        if self.r_plus is not None and self.r_plus <= 0:
            raise SolverError(f"r_plus must be positive, got {self.r_plus}")
        if self.r_plus is not None and self.r_minus is not None and self.r_minus <= self.r_plus:
            raise SolverError(f"r_minus={self.r_minus} must exceed r_plus={self.r_plus}")
        if not 0 < self.residual_tol < self.newton_switch_tol:
            raise SolverError(
                f"Need 0 < residual_tol ({self.residual_tol}) < newton_switch_tol ({self.newton_switch_tol})"
            )
        if self.path_points < 3:
            raise SolverError(f"path_points must be >= 3, got {self.path_points}")
        if self.multistart < 1 or self.max_iters < 1:
            raise SolverError("multistart and max_iters must be >= 1")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class PlusEstimate:
    """Result of the S+ scan: radius, alpha, refined minimizer and the probes at r_plus."""
    r_plus: float
    alpha: float
    minimizer: np.ndarray
    probes: np.ndarray
    trace: list = field(default_factory=list)


@dataclass
class CriticalPoint:
    state: State
    lam: float
    level: float
    residual: float
    m: Optional[int]
    iterations: int
    component_norms: tuple
    cerami_trace: list = field(default_factory=list)
    branch: str = "newton"
    newton_iterations: int = 0
    alpha: Optional[float] = None
    r_plus: Optional[float] = None
    r_minus: Optional[float] = None
    boundary_trace: list = field(default_factory=list)
    remark2_ok: Optional[bool] = None
    plus: Optional[PlusEstimate] = field(default=None, repr=False)
    geom: Optional[object] = field(default=None, repr=False)
    flow_trace: list = field(default_factory=list, repr=False)
    cerami: Optional[object] = field(default=None, repr=False)

    @property
    def vector(self):
        return self.state.vector()

    def to_dict(self):
        return {
            "lambda": self.lam,
            "m": self.m,
            "branch": self.branch,
            "level": self.level,
            "residual": self.residual,
            "iterations": self.iterations,
            "newton_iterations": self.newton_iterations,
            "component_norms": list(self.component_norms),
            "alpha": self.alpha,
            "r_plus": self.r_plus,
            "r_minus": self.r_minus,
            "remark2_ok": self.remark2_ok,
            "boundary_max": max(self.boundary_trace) if self.boundary_trace else None,
            "cerami_trace": [list(entry) for entry in self.cerami_trace],
            "cerami": self.cerami.to_dict() if self.cerami is not None else None,
        }


@dataclass
class FlowResult:
    vector: np.ndarray
    trace: list
    iterations: int
    converged: bool


@dataclass
class CeramiReport:
    """Per-iterate Psi and (1 + ||u||) ||Psi'|| with diagnostic flags."""
    levels: list
    cerami_values: list
    norm_blowup: bool
    level_stagnation: bool
    nondecaying_residual: bool
    trivial_attractor: bool
    converged: bool

    @property
    def flags(self):
        names = ("norm_blowup", "level_stagnation", "nondecaying_residual", "trivial_attractor")
        return [name for name in names if getattr(self, name)]

    def to_dict(self):
        return {
            "flags": self.flags,
            "converged": self.converged,
            "iterates": len(self.levels),
            "final_level": self.levels[-1] if self.levels else None,
            "final_cerami": self.cerami_values[-1] if self.cerami_values else None,
        }


# ---------------------------------------------------------------------------
# Small vector helpers (stacked states, A inner product)
# ---------------------------------------------------------------------------

def _a_dot(ctx, x, y):
    return float(x @ (ctx.A @ y))


def a_normalize(ctx, x):
    norm = np.sqrt(max(_a_dot(ctx, x, x), 0.0))
    if norm <= 0:
        raise SolverError("Cannot normalize a zero direction")
    return x / norm


def a_orthonormal_rows(ctx, rows):
    """A-orthonormalize rows by modified Gram-Schmidt."""
    basis = []
    for row in np.atleast_2d(rows):
        v = np.array(row, dtype=float)
        for b in basis:
            v = v - _a_dot(ctx, b, v) * b
        norm = np.sqrt(max(_a_dot(ctx, v, v), 0.0))
        if norm > 1e-12:
            basis.append(v / norm)
    if not basis:
        return np.zeros((0, ctx.dim))
    return np.array(basis)


def project_out(ctx, phi, x):
    """A-orthogonal projection of x onto the complement of span(phi rows)."""
    if phi.shape[0] == 0:
        return x
    return x - phi.T @ (phi @ (ctx.A @ x))


def _trace_entry(ctx, vec, lam):
    return (psi(ctx, vec, lam), a_norm(ctx, vec), residual_norm(ctx, vec, lam))


def _cerami_pairs(trace):
    return [(level, (1.0 + norm) * res) for level, norm, res in trace]


# ---------------------------------------------------------------------------
# Linking radii
# ---------------------------------------------------------------------------

def _plus_directions(ctx, geom, probe_count, rng):
    """Unit A-norm directions in C+: pure eigenvectors (both signs) and random combinations."""
    plus = geom.basis_plus
    if plus.size == 0:
        plus = np.atleast_2d(geom.e_vector)
    plus = np.array([a_normalize(ctx, v) for v in plus])
    directions = [plus, -plus]
    if probe_count > 0:
        coeffs = np.abs(rng.standard_normal((probe_count, plus.shape[0])))
        combos = coeffs @ plus
        norms = np.sqrt(np.einsum("ij,ij->i", combos, (ctx.A @ combos.T).T))
        directions.append(combos / norms[:, None])
    return np.vstack(directions)


def refine_s_plus_minimizer(ctx, lam, phi, u0, radius, iters, cfg=None):
    """
    Projected Sobolev descent of Psi on {||u||_A = radius} within the
    A-orthogonal complement of span(phi), which lies inside C+.

    Returns:
        (vector, value)
    """
    cfg = cfg or SolverConfig()
    u = project_out(ctx, phi, np.asarray(u0, dtype=float))
    u = radius * a_normalize(ctx, u)
    value = psi(ctx, u, lam)
    step = cfg.flow_step

    for _ in range(iters):
        g = project_out(ctx, phi, sobolev_gradient_vector(ctx, u, lam))
        g = g - (_a_dot(ctx, u, g) / radius ** 2) * u
        gnorm2 = _a_dot(ctx, g, g)
        if gnorm2 <= 1e-24 * (1.0 + value * value):
            break
        accepted = False
        while step >= cfg.min_step:
            candidate = project_out(ctx, phi, u - step * g)
            candidate = radius * a_normalize(ctx, candidate)
            cand_value = psi(ctx, candidate, lam)
            if cand_value <= value - cfg.armijo_c * step * gnorm2:
                u, value, accepted = candidate, cand_value, True
                break
            step *= 0.5
        if not accepted:
            break
        step = min(2.0 * step, cfg.flow_step * 4.0)
    return u, value


def estimate_r_plus(ctx, geom, probe_count=None, cfg=None, rng=None, radii=None):
    """
    Scan radii for the sphere S+ = C+ intersected with {||u|| = r} maximizing the
    sampled minimum of Psi, then refine the minimizer on the chosen sphere.

    Args:
        ctx: FunctionalContext
        geom: ConeGeometry
        probe_count: number of random nonnegative eigenvector combinations
        cfg: SolverConfig
        rng: numpy Generator
        radii: explicit radii (overrides cfg.plus_radii)

    Returns:
        PlusEstimate

    Raises:
        GeometryError: if no positive alpha is found
    """
    cfg = cfg or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    probe_count = cfg.probe_count if probe_count is None else probe_count
    if radii is None:
        start, stop, num = cfg.plus_radii
        radii = np.geomspace(start, stop, int(num))

    directions = _plus_directions(ctx, geom, probe_count, rng)
    trace = []
    best = (-np.inf, None, None)
    for r in radii:
        values = batch_psi(ctx, r * directions, geom.lam)
        k = int(np.argmin(values))
        trace.append((float(r), float(values[k])))
        if values[k] > best[0]:
            best = (float(values[k]), float(r), directions[k])

    sampled_alpha, r_plus, start_direction = best
    phi = a_orthonormal_rows(ctx, geom.basis_minus) if geom.m > 0 else np.zeros((0, ctx.dim))
    minimizer, refined = refine_s_plus_minimizer(
        ctx, geom.lam, phi, r_plus * start_direction, r_plus, cfg.probe_refine_iters, cfg
    )
    alpha = min(sampled_alpha, refined)
    logger.info(f"r_plus={r_plus:.4g}: sampled inf={sampled_alpha:.6g}, refined inf={refined:.6g}")

    if not alpha > 0:
        raise GeometryError(
            f"No positive alpha on S+ (best {alpha:.3e}); lambda too close to mu_(m+1) "
            f"or the nonlinearity too strong at small scale"
        )
    probes = np.vstack([r_plus * directions, minimizer[None, :]])
    return PlusEstimate(r_plus=r_plus, alpha=alpha, minimizer=minimizer, probes=probes, trace=trace)


def _minus_samples(ctx, phi, e_hat, count, rng):
    """Unit points of span(phi) + R+ e_hat (coefficients (a, t >= 0) on the unit sphere)."""
    m = phi.shape[0]
    if m == 0:
        return e_hat[None, :]
    coeffs = [np.concatenate([np.zeros(m), [1.0]])]
    for j in range(m):
        for sign in (1.0, -1.0):
            c = np.zeros(m + 1)
            c[j] = sign
            coeffs.append(c)
    random = rng.standard_normal((count, m + 1))
    random[:, -1] = np.abs(random[:, -1])
    coeffs.extend(random / np.linalg.norm(random, axis=1)[:, None])
    coeffs = np.array(coeffs)
    return coeffs[:, :m] @ phi + coeffs[:, m:] * e_hat[None, :]


def estimate_r_minus(ctx, geom, e, r_plus, cfg=None, rng=None, samples=None):
    """
    Smallest radius (on a geometric grid above r_plus) from which Psi <= 0 on
    (C- + R+ e) at three consecutive radii.

    Raises:
        GeometryError: if no such radius exists below the cap
    """
    cfg = cfg or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    samples = cfg.probe_count if samples is None else samples
    phi = a_orthonormal_rows(ctx, geom.basis_minus) if geom.m > 0 else np.zeros((0, ctx.dim))
    e_hat = a_normalize(ctx, project_out(ctx, phi, np.asarray(e, dtype=float)))
    points = _minus_samples(ctx, phi, e_hat, samples, rng)

    r = 1.5 * r_plus
    run_start, run_length = None, 0
    while r <= cfg.minus_cap:
        worst = float(np.max(batch_psi(ctx, r * points, geom.lam)))
        if worst <= 0:
            run_start = r if run_length == 0 else run_start
            run_length += 1
            if run_length == 3:
                logger.info(f"r_minus={run_start:.4g} (r_plus={r_plus:.4g})")
                return run_start
        else:
            run_length = 0
        r *= cfg.minus_growth
    raise GeometryError(f"Psi stays positive on C- + R+e up to radius {cfg.minus_cap}; (W2) may fail")


# ---------------------------------------------------------------------------
# Newton refinement, gradient flow, Cerami diagnostics
# ---------------------------------------------------------------------------

def _sigma_min(J):
    if J.shape[0] > config.PENCIL_CONFIG["dense_cutoff"]:
        return None
    return float(np.linalg.svd(J.toarray(), compute_uv=False)[-1])


def newton_refine(ctx, u0, lam, cfg=None):
    """
    Damped Newton on F(u) = Au - lambda Bu - p(u) with Jacobian A - lambda B - [w Hess W].

    Args:
        ctx: FunctionalContext
        u0: State or stacked vector
        lam: lambda
        cfg: SolverConfig (residual_tol, newton_max_iters)

    Returns:
        CriticalPoint (m left as None for the caller to fill)

    Raises:
        NotConverged: on a singular Jacobian, failed damping or exhausted iterations
    """
    cfg = cfg or SolverConfig()
    u = _as_vec(ctx, u0).copy()
    trace = [_trace_entry(ctx, u, lam)]
    res = trace[-1][2]
    iterations = 0

    while res > cfg.residual_tol:
        if iterations >= cfg.newton_max_iters:
            raise NotConverged(f"Newton stopped after {iterations} iterations at residual {res:.3e}", trace)
        F = dual_residual_vector(ctx, u, lam)
        J = jacobian(ctx, u, lam)
        try:
            delta = splu(J).solve(F)
        except RuntimeError as e:
            sigma = _sigma_min(J)
            raise NotConverged(f"Singular Jacobian (sigma_min~{sigma}): {e}", trace, sigma) from e

        step = 1.0
        while True:
            candidate = u - step * delta
            cand_res = residual_norm(ctx, candidate, lam)
            if np.isfinite(cand_res) and cand_res < (1.0 - 1e-4 * step) * res:
                break
            step *= 0.5
            if step < cfg.min_step:
                raise NotConverged(f"Newton damping failed at residual {res:.3e}", trace)
        u = candidate
        iterations += 1
        trace.append(_trace_entry(ctx, u, lam))
        res = trace[-1][2]
        logger.debug(f"Newton {iterations}: residual={res:.3e}, step={step:.3g}")

    return _make_point(ctx, u, lam, m=None, iterations=iterations, trace=trace, branch="newton",
                       newton_iterations=iterations)


def _as_vec(ctx, u):
    vec = u.vector() if isinstance(u, State) else np.asarray(u, dtype=float)
    if vec.shape != (ctx.dim,):
        raise SolverError(f"Initial state has shape {vec.shape}, expected ({ctx.dim},)")
    return vec


def _make_point(ctx, vec, lam, m, iterations, trace, branch, newton_iterations=0):
    return CriticalPoint(
        state=State.from_vector(vec),
        lam=float(lam),
        level=psi(ctx, vec, lam),
        residual=residual_norm(ctx, vec, lam),
        m=m,
        iterations=iterations,
        component_norms=component_norms(ctx, vec),
        cerami_trace=_cerami_pairs(trace),
        branch=branch,
        newton_iterations=newton_iterations,
        flow_trace=list(trace),
    )


def gradient_flow(ctx, u0, lam, cfg=None, max_iters=None, tol=None, blowup_norm=1e12):
    """
    Armijo Sobolev-gradient descent from u0; Psi is nonincreasing along accepted steps.

    Returns:
        FlowResult with the (Psi, ||u||_A, ||Psi'||) trace
    """
    cfg = cfg or SolverConfig()
    max_iters = cfg.max_iters if max_iters is None else max_iters
    tol = cfg.residual_tol if tol is None else tol
    u = _as_vec(ctx, u0).copy()
    value = psi(ctx, u, lam)
    trace = [_trace_entry(ctx, u, lam)]

    for it in range(1, max_iters + 1):
        g = sobolev_gradient_vector(ctx, u, lam)
        gnorm2 = _a_dot(ctx, g, g)
        if np.sqrt(gnorm2) <= tol:
            return FlowResult(u, trace, it - 1, True)
        step = cfg.flow_step
        while step >= cfg.min_step:
            candidate = u - step * g
            cand_value = psi(ctx, candidate, lam)
            if cand_value <= value - cfg.armijo_c * step * gnorm2:
                break
            step *= 0.5
        else:
            return FlowResult(u, trace, it - 1, False)
        u, value = candidate, cand_value
        trace.append(_trace_entry(ctx, u, lam))
        if trace[-1][1] > blowup_norm:
            break
    return FlowResult(u, trace, len(trace) - 1, trace[-1][2] <= tol)


def cerami_monitor(trace, tol=None, window=10):
    """
    Diagnose a flow trace of (Psi, ||u||, ||Psi'||) triples.

    Flags norm blowup (norms growing by more than a decade over a monotone tail),
    level stagnation (Psi flat while the residual is not small), a nondecaying
    residual and collapse onto the trivial solution.
    """
    tol = config.SOLVER_CONFIG["residual_tol"] if tol is None else tol
    levels = [float(entry[0]) for entry in trace]
    norms = np.array([float(entry[1]) for entry in trace])
    residuals = np.array([float(entry[2]) for entry in trace])
    cerami = list((1.0 + norms) * residuals)

    converged = bool(residuals[-1] <= tol)
    tail = slice(len(trace) // 2, None)
    tail_norms = norms[tail]
    norm_blowup = bool(
        len(trace) > 2 and norms[-1] > 10.0 * max(norms[0], np.finfo(float).tiny)
        and np.all(np.diff(tail_norms) >= 0)
    )
    recent = np.array(levels[-window:])
    level_stagnation = bool(
        not converged and len(trace) >= window
        and np.ptp(recent) <= 1e-12 * (1.0 + np.max(np.abs(recent)))
    )
    nondecaying = bool(not converged and len(trace) > 2 and residuals[-1] >= 0.9 * residuals[len(trace) // 2])
    trivial = bool(norms[-1] <= 1e-6 * max(1.0, norms[0]) and abs(levels[-1]) <= 1e-10)

    report = CeramiReport(levels, cerami, norm_blowup, level_stagnation, nondecaying, trivial, converged)
    if report.flags:
        logger.warning(f"Cerami monitor flags: {report.flags}")
    return report


# ---------------------------------------------------------------------------
# Peak-selection minimax (shared by both branches)
# ---------------------------------------------------------------------------

def _peak(ctx, lam, phi, v, x0):
    """Maximize Psi(phi^T a + t v) over a in R^m, t >= 0; returns (coefficients, value)."""
    m = phi.shape[0]

    def objective(x):
        u = phi.T @ x[:m] + x[m] * v
        r = dual_residual_vector(ctx, u, lam)
        grad = np.concatenate([phi @ r, [v @ r]])
        return -psi(ctx, u, lam), -grad

    bounds = [(None, None)] * m + [(0.0, None)]
    result = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                      options={"maxiter": 1000, "ftol": 1e-15, "gtol": 1e-12})
    return result.x, -float(result.fun)


def _ray_start(ctx, lam, phi, v, t_max):
    ts = np.linspace(0.0, t_max, 65)[1:]
    values = batch_psi(ctx, ts[:, None] * v[None, :], lam)
    return np.concatenate([np.zeros(phi.shape[0]), [ts[int(np.argmax(values))]]])


def peak_selection_minimax(ctx, lam, phi, v0, cfg, t_max):
    """
    Local minimax: descend v on the unit sphere of the complement of span(phi),
    each v evaluated at the peak p(v) of Psi over the slice span(phi) + R+ v.

    Returns:
        (vector, iterations, trace) with the final peak point
    """
    v = a_normalize(ctx, project_out(ctx, phi, np.asarray(v0, dtype=float)))
    x, value = _peak(ctx, lam, phi, v, _ray_start(ctx, lam, phi, v, t_max))
    step = cfg.flow_step
    trace = []

    for it in range(1, cfg.peak_iters + 1):
        m_phi = phi.shape[0]
        t = x[m_phi]
        p = phi.T @ x[:m_phi] + t * v
        if t <= 0 or a_norm(ctx, p) < cfg.trivial_norm:
            raise TrivialSolutionError("Peak selection collapsed onto the trivial solution")
        g = sobolev_gradient_vector(ctx, p, lam)
        res = np.sqrt(max(_a_dot(ctx, g, g), 0.0))
        trace.append((value, a_norm(ctx, p), res))
        if res <= cfg.newton_switch_tol:
            return p, it, trace

        g_perp = project_out(ctx, phi, g)
        gnorm2 = _a_dot(ctx, g_perp, g_perp)
        accepted = False
        while step >= cfg.min_step:
            v_new = a_normalize(ctx, project_out(ctx, phi, t * v - step * g_perp))
            x_new, value_new = _peak(ctx, lam, phi, v_new, x)
            if value_new <= value - cfg.armijo_c * step * gnorm2:
                v, x, value, accepted = v_new, x_new, value_new, True
                break
            step *= 0.5
        if not accepted:
            logger.debug(f"Peak selection stalled at iteration {it}, residual {res:.3e}")
            return p, it, trace
        step = min(2.0 * step, cfg.flow_step)

    m_phi = phi.shape[0]
    return phi.T @ x[:m_phi] + x[m_phi] * v, cfg.peak_iters, trace


def _finish(ctx, vec, lam, m, cfg, iterations, trace, branch):
    """Newton polish plus the nontriviality and positivity guards."""
    try:
        point = newton_refine(ctx, vec, lam, cfg)
    except NotConverged as e:
        raise SolverError(f"{branch}: Newton refinement failed: {e}") from e
    if a_norm(ctx, point.vector) < cfg.trivial_norm:
        raise TrivialSolutionError(f"{branch}: converged to the trivial solution")
    point = replace(
        point,
        m=m,
        branch=branch,
        iterations=iterations + point.newton_iterations,
        cerami_trace=_cerami_pairs(trace) + point.cerami_trace,
        flow_trace=list(trace) + point.flow_trace,
    )
    if not point.level > 0:
        raise SolverError(f"{branch}: critical level {point.level:.3e} is not positive")
    return point


# ---------------------------------------------------------------------------
# Branches
# ---------------------------------------------------------------------------

def _prepare_geometry(ctx, lam, cfg, geom=None, plus=None, r_minus=None, rng=None):
    """Fill in the cone geometry and the radii not supplied by the caller."""
    if geom is None:
        geom = locate_lambda(solve_pencil(ctx), lam)
    if plus is None:
        radii = None if cfg.r_plus is None else [cfg.r_plus]
        plus = estimate_r_plus(ctx, geom, cfg=cfg, rng=rng, radii=radii)
    if r_minus is None:
        r_minus = cfg.r_minus or estimate_r_minus(ctx, geom, geom.e_vector, plus.r_plus, cfg=cfg, rng=rng)
    if r_minus <= plus.r_plus:
        raise GeometryError(f"r_minus={r_minus} does not exceed r_plus={plus.r_plus}")
    return geom, plus, r_minus


def mountain_pass(ctx, cfg, lam, geom=None, plus=None, r_minus=None, direction=None, rng=None):
    """
    Mountain-pass search for m = 0.

    A discrete path from 0 to r_minus * e_hat is deformed by Armijo Sobolev
    steps at its maximizer (lowest index on ties) with local redistribution of
    the neighbours; the endpoints stay fixed. Below newton_switch_tol the
    maximizer goes to Newton; a stalled path hands over to peak selection.

    Returns:
        CriticalPoint with level > 0

    Raises:
        TrivialSolutionError, GeometryError, SolverError
    """
    cfg = cfg or SolverConfig()
    geom, plus, r_minus = _prepare_geometry(ctx, lam, cfg, geom, plus, r_minus, rng)
    if geom.m != 0:
        raise SolverError(f"mountain_pass requires m = 0, got m={geom.m}")

    e_hat = a_normalize(ctx, np.asarray(geom.e_vector if direction is None else direction, dtype=float))
    end = r_minus * e_hat
    if psi(ctx, end, lam) > BOUNDARY_TOL:
        raise GeometryError(f"Path endpoint has Psi={psi(ctx, end, lam):.3e} > 0; r_minus too small")

    n_pts = cfg.path_points
    path = np.linspace(0.0, 1.0, n_pts)[:, None] * end[None, :]
    values = batch_psi(ctx, path, lam)
    trace = []
    iterations = 0
    handover = "stalled"

    for iterations in range(1, cfg.max_iters + 1):
        k = int(np.argmax(values))
        if k in (0, n_pts - 1) or values[k] <= 0:
            raise TrivialSolutionError("Mountain-pass path collapsed onto the trivial level")
        u = path[k]
        g = sobolev_gradient_vector(ctx, u, lam)
        res = np.sqrt(max(_a_dot(ctx, g, g), 0.0))
        trace.append((float(values[k]), a_norm(ctx, u), res))
        if res <= cfg.newton_switch_tol:
            handover = "newton"
            break

        spacing = 0.5 * (a_norm(ctx, path[k] - path[k - 1]) + a_norm(ctx, path[k + 1] - path[k]))
        step = min(cfg.flow_step, spacing / res)
        while step >= cfg.min_step:
            candidate = u - step * g
            cand_value = psi(ctx, candidate, lam)
            if cand_value <= values[k] - cfg.armijo_c * step * res * res:
                break
            step *= 0.5
        else:
            break

        path[k], values[k] = candidate, cand_value
        for j, outer in ((k - 1, k - 2), (k + 1, k + 2)):
            if 0 < j < n_pts - 1:
                path[j] = 0.5 * (path[outer] + path[k])
                values[j] = psi(ctx, path[j], lam)
    else:
        handover = "budget"

    k = int(np.argmax(values))
    peak = path[k]
    logger.info(f"Mountain-pass path stage: {iterations} iterations, max Psi={values[k]:.10g}, handover={handover}")

    phi = np.zeros((0, ctx.dim))
    if handover != "newton":
        peak, extra, peak_trace = peak_selection_minimax(ctx, lam, phi, peak, cfg, r_minus)
        iterations += extra
        trace += peak_trace

    point = _finish(ctx, peak, lam, 0, cfg, iterations, trace, "mountain_pass")
    return replace(point, alpha=plus.alpha, r_plus=plus.r_plus, r_minus=r_minus, plus=plus, geom=geom)


def _coefficient_mesh(m, cfg, rng):
    """
    Mesh of the half ball {(a, t) : |a|^2 + t^2 <= 1, t >= 0} in R^(m+1).

    Returns:
        (coefficients, frozen mask); frozen points lie on D- (t = 0) or H (|.| = 1)
    """
    if m == 1:
        angles = np.linspace(0.0, np.pi, cfg.mesh_angular)
        directions = np.column_stack([np.cos(angles), np.sin(angles)])
        directions[np.abs(directions) < 1e-15] = 0.0
    else:
        axes = [np.eye(m + 1)[-1]]
        for j in range(m):
            axes += [np.eye(m + 1)[j], -np.eye(m + 1)[j]]
        random = rng.standard_normal((cfg.mesh_angular * m * 2, m + 1))
        random[:, -1] = np.abs(random[:, -1])
        random /= np.linalg.norm(random, axis=1)[:, None]
        directions = np.vstack([axes, random])

    levels = np.linspace(0.0, 1.0, cfg.mesh_radial + 1)[1:]
    coeffs = [np.zeros(m + 1)]
    for rho in levels:
        coeffs.extend(rho * directions)
    coeffs = np.array(coeffs)
    radius = np.linalg.norm(coeffs, axis=1)
    frozen = (coeffs[:, -1] <= 0.0) | (radius >= 1.0 - 1e-12)
    return coeffs, frozen


def linking_flow(ctx, cfg, geom, lam, plus=None, r_minus=None, direction=None, rng=None):
    """
    Linking search for m >= 1.

    Q = {w + t e : w in span(C- basis), t >= 0, ||w + t e|| <= r_minus} is meshed
    in coefficient space; mesh points above alpha/2 are deformed by Armijo
    Sobolev steps while the D- and H boundary stays frozen with Psi <= 0 checked
    every iteration (r_minus grows when it fails). The mesh maximizer seeds the
    peak-selection minimax, then Newton.

    Returns:
        CriticalPoint with level >= alpha (1 - 1e-2)

    Raises:
        GeometryError: when the frozen boundary cannot be made nonpositive
        SolverError: on non-convergence or a level below alpha
    """
    cfg = cfg or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    geom, plus, r_minus = _prepare_geometry(ctx, lam, cfg, geom, plus, r_minus, rng)
    m = geom.m
    if m < 1:
        raise SolverError("linking_flow requires m >= 1")

    phi = a_orthonormal_rows(ctx, geom.basis_minus)
    seed = geom.e_vector if direction is None else direction
    e_hat = a_normalize(ctx, project_out(ctx, phi, np.asarray(seed, dtype=float)))
    frame = np.vstack([phi, e_hat[None, :]])
    coeffs, frozen = _coefficient_mesh(m, cfg, rng)

    for attempt in range(MAX_RADIUS_GROWTHS + 1):
        mesh = r_minus * (coeffs @ frame)
        values = batch_psi(ctx, mesh, lam)
        boundary_max = float(np.max(values[frozen]))
        if boundary_max <= BOUNDARY_TOL:
            break
        if attempt == MAX_RADIUS_GROWTHS:
            raise GeometryError(f"Frozen boundary has Psi={boundary_max:.3e} > 0 after {attempt} radius growths")
        r_minus *= cfg.minus_growth
        logger.warning(f"Linking boundary positive ({boundary_max:.3e}); growing r_minus to {r_minus:.4g}")

    boundary_trace = []
    history = []
    iterations = 0
    handover = "stalled"
    threshold = 0.5 * plus.alpha
    for iterations in range(1, cfg.mesh_iters + 1):
        boundary_trace.append(float(np.max(values[frozen])))
        if boundary_trace[-1] > BOUNDARY_TOL:
            raise GeometryError(f"Frozen boundary rose to Psi={boundary_trace[-1]:.3e}")

        k = int(np.argmax(values))
        history.append(float(values[k]))
        res = residual_norm(ctx, mesh[k], lam)
        if res <= cfg.newton_switch_tol:
            handover = "newton"
            break
        if len(history) > 5 and abs(history[-6] - history[-1]) <= 1e-8 * (1.0 + abs(history[-1])):
            break

        active = np.where(~frozen & (values > threshold))[0]
        if active.size == 0:
            break
        G = batch_sobolev_gradient(ctx, mesh[active], lam)
        gnorm2 = np.einsum("ij,ij->i", G, (ctx.A @ G.T).T)
        steps = np.full(active.size, cfg.flow_step)
        pending = np.ones(active.size, dtype=bool)
        new_values = values[active].copy()
        while np.any(pending) and np.max(steps[pending]) >= cfg.min_step:
            idx = np.where(pending)[0]
            trial = mesh[active[idx]] - steps[idx, None] * G[idx]
            trial_values = batch_psi(ctx, trial, lam)
            ok = trial_values <= values[active[idx]] - cfg.armijo_c * steps[idx] * gnorm2[idx]
            mesh[active[idx[ok]]] = trial[ok]
            new_values[idx[ok]] = trial_values[ok]
            pending[idx[ok]] = False
            steps[idx[~ok]] *= 0.5
        values[active] = new_values

    k = int(np.argmax(values))
    logger.info(f"Linking mesh stage: {iterations} iterations, max Psi={values[k]:.10g}, handover={handover}")

    trace = []
    peak = mesh[k]
    if handover != "newton":
        v0 = project_out(ctx, phi, peak)
        if a_norm(ctx, v0) <= 1e-8 * max(1.0, a_norm(ctx, peak)):
            v0 = e_hat
        peak, extra, trace = peak_selection_minimax(ctx, lam, phi, v0, cfg, r_minus)
        iterations += extra

    point = _finish(ctx, peak, lam, m, cfg, iterations, trace, "linking_flow")
    if point.level < plus.alpha * (1.0 - LEVEL_SLACK):
        raise SolverError(f"Linking level {point.level:.6g} below alpha={plus.alpha:.6g}")
    return replace(point, alpha=plus.alpha, r_plus=plus.r_plus, r_minus=r_minus,
                   boundary_trace=boundary_trace, plus=plus, geom=geom)


def multistart_seeds(ctx, geom, count, rng):
    """cos(theta) v_(m+1) + sin(theta) v_(m+2) over a theta grid, then random B-positive combinations."""
    plus = geom.basis_plus if geom.basis_plus.size else np.atleast_2d(geom.e_vector)
    positive = plus[np.isfinite(geom.mus_plus)] if geom.mus_plus.size == plus.shape[0] else plus
    if positive.shape[0] == 0:
        positive = np.atleast_2d(geom.e_vector)
    seeds = [geom.e_vector]
    if positive.shape[0] > 1:
        for theta in np.linspace(0.0, 0.5 * np.pi, max(count, 2))[1:]:
            seeds.append(np.cos(theta) * positive[0] + np.sin(theta) * positive[1])
    while len(seeds) < count:
        seeds.append(np.abs(rng.standard_normal(positive.shape[0])) @ positive)
    return seeds[:count]


def find_critical_point(ctx, lam, cfg=None, seq=None, rng=None):
    """
    Solve one (already sign-normalized) lambda: locate m, estimate the linking
    radii, run the branch for m, retrying from multistart seeds.

    Returns:
        CriticalPoint

    Raises:
        PencilError (resonance, short spectrum), GeometryError, SolverError
    """
    cfg = cfg or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    seq = seq if seq is not None else solve_pencil(ctx)
    geom = locate_lambda(seq, lam)
    geom, plus, r_minus = _prepare_geometry(ctx, lam, cfg, geom, None, None, rng)
    logger.info(f"lambda={lam:.10g}: m={geom.m}, alpha={plus.alpha:.6g}, r_plus={plus.r_plus:.4g}, r_minus={r_minus:.4g}")

    last_error = None
    for attempt, seed in enumerate(multistart_seeds(ctx, geom, cfg.multistart, rng)):
        try:
            if geom.m == 0:
                point = mountain_pass(ctx, cfg, lam, geom, plus, r_minus, direction=seed, rng=rng)
            else:
                point = linking_flow(ctx, cfg, geom, lam, plus, r_minus, direction=seed, rng=rng)
        except (TrivialSolutionError, NotConverged, GeometryError, SolverError) as e:
            logger.warning(f"Multistart seed {attempt} failed: {e}")
            last_error = e
            continue

        potentials = ctx.potentials
        coupled = lam != 0 and np.any(potentials.gamma != 0)
        remark2 = (min(point.component_norms) > REMARK2_FLOOR) if coupled else None
        if remark2 is False:
            # lambda * gamma != 0 admits no semitrivial solution
            last_error = SolverError(f"semitrivial point on a coupled problem: norms={point.component_norms}")
            logger.warning(f"Multistart seed {attempt} rejected: {last_error}")
            continue
        cerami = cerami_monitor(point.flow_trace, tol=cfg.residual_tol)
        logger.info(
            f"Accepted critical point: branch={point.branch}, level={point.level:.12g}, "
            f"residual={point.residual:.3e}, norms=({point.component_norms[0]:.4g}, {point.component_norms[1]:.4g})"
        )
        return replace(point, remark2_ok=remark2, cerami=cerami)

    # Descent from r_plus * e shows where the energy landscape sends a failed run
    flow = gradient_flow(ctx, plus.r_plus * geom.e_vector, lam, cfg, max_iters=min(cfg.max_iters, 100))
    report = cerami_monitor(flow.trace, tol=cfg.residual_tol)
    raise SolverError(
        f"No nontrivial critical point after {cfg.multistart} seeds: {last_error}; "
        f"descent flow flags: {', '.join(report.flags) or 'none'}"
    )
