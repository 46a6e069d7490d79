"""
Verification module for the coupled Schrodinger bound-state solver.
Independent oracles and invariant suites: strong-form residuals, assembly
consistency, finite-difference gradients, the energy monotonicity inequality,
the calW floor, pencil oracles, small-grid brute force and the linking sandwich.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.special import gamma as gamma_fn

import config
from functionals import (
    a_norm,
    as_vector,
    batch_psi,
    build_context,
    component_norms,
    dual_residual_vector,
    energy_E,
    functional_J,
    functional_P,
    jacobian,
    psi,
    residual_norm,
)
from grid import RADIAL, FULL_LINE_1D, GridSpec, build_grid
from model import PotentialSet, eval_W, eval_calW, eval_gradW, zero_nonlinearity
from pencil import minmax_oracle, solve_pencil
from solver import a_normalize, a_orthonormal_rows, find_critical_point, project_out

logger = logging.getLogger(__name__)


class VerificationError(RuntimeError):
    """Raised when a suite is asked to run outside its admissible range."""


# ---------------------------------------------------------------------------
# Strong-form residual (separate code path from the assembled forms)
# ---------------------------------------------------------------------------

def _strong_operator(spec):
    """Return (minus_laplacian(v), cell volumes) built from the raw mesh description."""
    n = spec.n_nodes
    h = spec.radius / n

    if spec.mode == RADIAL:
        dim = spec.dimension
        omega = 2.0 * np.pi ** (dim / 2.0) / gamma_fn(dim / 2.0)
        r = h * np.arange(n + 1)
        faces = r[:-1] + 0.5 * h
        conductance = omega * faces ** (dim - 1) / h
        outer = np.minimum(r[:-1] + 0.5 * h, spec.radius)
        inner = np.maximum(r[:-1] - 0.5 * h, 0.0)
        volumes = omega * (outer ** dim - inner ** dim) / dim

        def minus_laplacian(v):
            flux = conductance * np.diff(np.append(v, 0.0))
            div = flux.copy()
            div[1:] -= flux[:-1]
            return -div / volumes

        return minus_laplacian, volumes

    if spec.mode == FULL_LINE_1D:
        volumes = np.full(2 * n - 1, h)

        def minus_laplacian(v):
            flux = np.diff(np.concatenate([[0.0], v, [0.0]])) / h
            return -(flux[1:] - flux[:-1]) / h

        return minus_laplacian, volumes

    raise VerificationError(f"Unknown grid mode '{spec.mode}'")


def strong_residual(ctx, u, lam):
    """
    Nodal strong-form residuals of both equations:

        -Lap u1 + (b1 - lam V1) u1 - W_t - lam gamma u2
        -Lap u2 + (b2 - lam V2) u2 - W_s - lam gamma u1

    Returns:
        (res1, res2, cell volumes)
    """
    vec = as_vector(ctx, u)
    n = ctx.n
    u1, u2 = vec[:n], vec[n:]
    pot = ctx.potentials
    minus_laplacian, volumes = _strong_operator(ctx.grid.spec)
    wt, ws = eval_gradW(ctx.nl, np.arange(n), (u1, u2))

    res1 = minus_laplacian(u1) + (pot.b1 - lam * pot.V1) * u1 - wt - lam * pot.gamma * u2
    res2 = minus_laplacian(u2) + (pot.b2 - lam * pot.V2) * u2 - ws - lam * pot.gamma * u1
    return res1, res2, volumes


def residual_check(ctx, u, lam):
    """Quadrature-weighted L2 norms (res1, res2) of the strong-form residuals."""
    res1, res2, volumes = strong_residual(ctx, u, lam)
    return float(np.sqrt(np.sum(volumes * res1 ** 2))), float(np.sqrt(np.sum(volumes * res2 ** 2)))


@dataclass
class ConsistencyReport:
    max_rel_diff: float
    magnitude_ratio: float
    passed: bool


def assembly_consistency(ctx, u, lam, tol=None):
    """
    Compare volume-weighted strong residuals with the assembled dual residual.

    magnitude_ratio compares the weighted L2 strong norm with sqrt(sum r_i^2 / w_i)
    and is 1 for a consistent assembly.
    """
    tol = config.VERIFY_CONFIG["consistency_tol"] if tol is None else tol
    vec = as_vector(ctx, u)
    res1, res2, volumes = strong_residual(ctx, vec, lam)
    strong = np.concatenate([volumes * res1, volumes * res2])
    dual = dual_residual_vector(ctx, vec, lam)

    scale = np.max(np.abs(ctx.A @ vec)) + abs(lam) * np.max(np.abs(ctx.B @ vec)) + np.max(np.abs(ctx.nonlinear_force(vec)))
    diff = float(np.max(np.abs(strong - dual)) / max(scale, np.finfo(float).tiny))

    vol2 = np.concatenate([volumes, volumes])
    strong_norm = np.sqrt(np.sum(strong ** 2 / vol2))
    dual_norm = np.sqrt(np.sum(dual ** 2 / vol2))
    ratio = float(strong_norm / dual_norm) if dual_norm > 0 else 1.0
    passed = diff <= tol and 0.1 <= ratio <= 10.0
    logger.info(f"Assembly consistency: max rel diff={diff:.3e}, magnitude ratio={ratio:.6g}")
    return ConsistencyReport(max_rel_diff=diff, magnitude_ratio=ratio, passed=bool(passed))


# ---------------------------------------------------------------------------
# Derivative and inequality suites
# ---------------------------------------------------------------------------

def _random_state(ctx, rng, scale):
    x = rng.standard_normal(ctx.dim)
    return scale * rng.uniform(0.5, 2.0) * x / a_norm(ctx, x)


def fd_gradient_check(ctx, count=None, scale=1.0, lam=0.0, rng=None):
    """
    Worst relative error between central differences of E, J, P, Psi and their
    analytic pairings on random (u, v); errors are scaled by ||F'(u)||_* ||v||_A.
    """
    count = config.VERIFY_CONFIG["fd_samples"] if count is None else count
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    worst = {"E": 0.0, "J": 0.0, "P": 0.0, "Psi": 0.0}

    def dual_norm(x):
        return float(np.sqrt(max(x @ ctx.solve_A(x), 0.0)))

    for _ in range(count):
        u = _random_state(ctx, rng, scale)
        v = _random_state(ctx, rng, 1.0)
        v /= a_norm(ctx, v)
        eps = 1e-5 * max(1.0, a_norm(ctx, u))
        gradients = {
            "E": (lambda x: energy_E(ctx, x), ctx.A @ u),
            "J": (lambda x: functional_J(ctx, x), ctx.B @ u),
            "P": (lambda x: functional_P(ctx, x), ctx.nonlinear_force(u)),
            "Psi": (lambda x: psi(ctx, x, lam), dual_residual_vector(ctx, u, lam)),
        }
        for name, (func, grad) in gradients.items():
            fd = (func(u + eps * v) - func(u - eps * v)) / (2.0 * eps)
            err = abs(fd - float(v @ grad))
            if err > 0:
                err /= max(dual_norm(grad), np.finfo(float).tiny)
            worst[name] = max(worst[name], err)

    logger.info(f"FD gradient check ({count} samples): " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    return max(worst.values())


def lemma31_suite(ctx, count=None, rng=None, scale=1.0):
    """Minimal slack of <E'(u) - E'(v), u - v> - sum_i (||u_i|| - ||v_i||)^2 over random pairs."""
    count = config.VERIFY_CONFIG["lemma_samples"] if count is None else count
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    min_slack = np.inf
    for _ in range(count):
        u = _random_state(ctx, rng, scale)
        v = _random_state(ctx, rng, scale)
        d = u - v
        lhs = float(d @ (ctx.A @ d))
        nu, nv = component_norms(ctx, u), component_norms(ctx, v)
        rhs = (nu[0] - nv[0]) ** 2 + (nu[1] - nv[1]) ** 2
        min_slack = min(min_slack, lhs - rhs)
    logger.info(f"Monotonicity inequality: min slack over {count} pairs = {min_slack:.3e}")
    return float(min_slack)


def remark1_floor(nl, n_nodes, count=None, rng=None, radii=(1e-3, 1e2)):
    """Minimum of calW(x, z) = grad W . z - 2W over random nodes and log-uniform |z|."""
    count = config.VERIFY_CONFIG["remark1_samples"] if count is None else count
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    x = rng.integers(0, n_nodes, size=count)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=count)
    radius = np.exp(rng.uniform(np.log(radii[0]), np.log(radii[1]), size=count))
    floor = float(np.min(eval_calW(nl, x, (radius * np.cos(angle), radius * np.sin(angle)))))
    logger.info(f"calW floor over {count} samples = {floor:.3e}")
    return floor


# ---------------------------------------------------------------------------
# Pencil oracles
# ---------------------------------------------------------------------------

@dataclass
class OracleReport:
    instances: int
    max_oracle_err: float
    max_dense_err: float
    passed: bool
    rows: list = field(default_factory=list)


def _random_instance(rng):
    """Tiny random problem (<= 12 unknowns) with W = 0 and at least one V > 0."""
    if rng.random() < 0.5:
        spec = GridSpec(dimension=int(rng.integers(1, 4)), radius=float(rng.uniform(1.0, 4.0)),
                        n_nodes=int(rng.integers(3, 7)), mode=RADIAL)
    else:
        spec = GridSpec(dimension=1, radius=float(rng.uniform(1.0, 4.0)), n_nodes=int(rng.integers(2, 4)),
                        mode=FULL_LINE_1D)
    grid = build_grid(spec, allow_coarse=True)
    n = grid.n_unknowns
    V1 = rng.uniform(-1.0, 2.0, n)
    V1[int(rng.integers(0, n))] = rng.uniform(0.5, 2.0)
    potentials = PotentialSet(
        b1=rng.uniform(1.0, 3.0, n), b2=rng.uniform(1.0, 3.0, n),
        V1=V1, V2=rng.uniform(-1.0, 2.0, n), gamma=rng.uniform(-0.5, 0.5, n),
        b1_floor=1.0, b2_floor=1.0,
    )
    return build_context(grid, potentials, zero_nonlinearity())


def _dense_mus(ctx):
    nu = eigh(ctx.B.toarray(), ctx.A.toarray(), eigvals_only=True)
    tol = config.PENCIL_CONFIG["zero_mode_tol"] * max(np.max(np.abs(nu)), np.finfo(float).tiny)
    return np.sort(1.0 / nu[nu > tol])


def pencil_oracle_suite(instances=None, n_max=3, rng=None, oracle_tol=1e-6, dense_tol=1e-10):
    """
    solve_pencil against minmax_oracle and an independent dense generalized
    eigensolver on random instances with at most 12 unknowns.
    """
    instances = config.VERIFY_CONFIG["oracle_instances"] if instances is None else instances
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    worst_oracle = worst_dense = 0.0
    rows = []
    for i in range(instances):
        ctx = _random_instance(rng)
        seq = solve_pencil(ctx)
        dense = _dense_mus(ctx)
        count = min(n_max, len(seq), dense.size)
        for k in range(count):
            mu = float(seq.mus[k])
            oracle = minmax_oracle(ctx, k + 1, rng=rng)
            oracle_err = abs(oracle - mu) / max(1.0, abs(mu))
            dense_err = abs(dense[k] - mu) / abs(mu)
            worst_oracle = max(worst_oracle, oracle_err)
            worst_dense = max(worst_dense, dense_err)
            rows.append({"instance": i, "n": k + 1, "mu": mu, "oracle": oracle, "dense": float(dense[k])})

    passed = worst_oracle <= oracle_tol and worst_dense <= dense_tol
    logger.info(f"Pencil oracles on {instances} instances: oracle err={worst_oracle:.2e}, dense err={worst_dense:.2e}")
    return OracleReport(instances, worst_oracle, worst_dense, bool(passed), rows)


# ---------------------------------------------------------------------------
# Small-grid brute force
# ---------------------------------------------------------------------------

@dataclass
class BruteForceReport:
    points: np.ndarray
    levels: np.ndarray
    matched: bool
    distance: float
    level_gap: float
    rotation_orbit: bool = False


def _dense_newton(ctx, u, lam, max_iters=100, tol=1e-11):
    for _ in range(max_iters):
        F = dual_residual_vector(ctx, u, lam)
        res = residual_norm(ctx, u, lam)
        if not np.isfinite(res) or res > 1e8:
            return None
        if res <= tol:
            return u
        try:
            delta = np.linalg.solve(jacobian(ctx, u, lam).toarray(), F)
        except np.linalg.LinAlgError:
            return None
        step = 1.0
        while step >= 1e-10:
            candidate = u - step * delta
            if residual_norm(ctx, candidate, lam) < res:
                break
            step *= 0.5
        else:
            return None
        u = candidate
    return u if residual_norm(ctx, u, lam) <= tol else None


def _seed_lattice(ctx, count, rng):
    seeds = []
    seq = solve_pencil(ctx)
    scales = (0.25, 0.5, 1.0, 2.0, 4.0)
    for v in np.vstack([seq.vectors, seq.neg_vectors]):
        for s in scales:
            seeds += [s * v, -s * v]
    for j in range(ctx.dim):
        for s in scales:
            e = np.zeros(ctx.dim)
            e[j] = s
            seeds += [e, -e]
    while len(seeds) < count:
        seeds.append(_random_state(ctx, rng, rng.uniform(0.1, 5.0)))
    return seeds


def enumerate_critical_points(ctx, lam, seeds=None, rng=None, dedup_tol=1e-6):
    """Critical points reached by dense damped Newton from a seed lattice (deduplicated)."""
    if ctx.dim > config.PENCIL_CONFIG["oracle_max_dim"]:
        raise VerificationError(f"Brute force limited to {config.PENCIL_CONFIG['oracle_max_dim']} unknowns, got {ctx.dim}")
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    seeds = config.VERIFY_CONFIG["brute_force_seeds"] if seeds is None else seeds
    found = []
    for seed in _seed_lattice(ctx, seeds, rng):
        u = _dense_newton(ctx, np.array(seed, dtype=float), lam)
        if u is None:
            continue
        if all(a_norm(ctx, u - p) > dedup_tol * max(1.0, a_norm(ctx, p)) for p in found):
            found.append(u)
    points = np.array(found).reshape(-1, ctx.dim)
    levels = batch_psi(ctx, points, lam) if len(found) else np.zeros(0)
    logger.info(f"Brute force: {len(found)} distinct critical points")
    return points, levels


def _rotation_symmetric(ctx, lam, rng=None, samples=64, tol=1e-10):
    """
    True when Psi(., lam) is invariant under (u1, u2) -> R_theta (u1, u2) and the
    reflection u2 -> -u2: equal A blocks, an O(2)-invariant W and, for lam != 0,
    equal V blocks with gamma = 0.
    """
    n = ctx.n
    A = ctx.A.toarray()
    B = ctx.B.toarray()
    scale_A = max(float(np.max(np.abs(A))), np.finfo(float).tiny)
    scale_B = max(float(np.max(np.abs(B))), np.finfo(float).tiny)
    if np.max(np.abs(A[:n, :n] - A[n:, n:])) > tol * scale_A:
        return False
    if lam != 0 and (np.max(np.abs(B[:n, :n] - B[n:, n:])) > tol * scale_B
                     or np.max(np.abs(B[:n, n:])) > tol * scale_B):
        return False

    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    idx = rng.integers(0, n, size=samples)
    t, s = rng.standard_normal((2, samples)) * rng.uniform(0.1, 5.0, size=(2, samples))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=samples)
    base = eval_W(ctx.nl, idx, (t, s))
    rotated = eval_W(ctx.nl, idx, (np.cos(theta) * t - np.sin(theta) * s, np.sin(theta) * t + np.cos(theta) * s))
    reflected = eval_W(ctx.nl, idx, (t, -s))
    bound = tol * np.maximum(1.0, np.abs(base))
    return bool(np.all(np.abs(rotated - base) <= bound) and np.all(np.abs(reflected - base) <= bound))


def _orbit_distance(ctx, vec, p):
    """min over theta and the reflection of ||vec - R p||_A (A has equal diagonal blocks)."""
    n = ctx.n
    A1 = ctx.A[:n, :n]
    u1, u2 = vec[:n], vec[n:]
    best = np.inf
    for sign in (1.0, -1.0):
        p1, p2 = p[:n], sign * p[n:]
        # <vec, R_theta p>_A = a cos(theta) + b sin(theta)
        a = u1 @ (A1 @ p1) + u2 @ (A1 @ p2)
        b = u2 @ (A1 @ p1) - u1 @ (A1 @ p2)
        theta = np.arctan2(b, a)
        c, s = np.cos(theta), np.sin(theta)
        rotated = np.concatenate([c * p1 - s * p2, s * p1 + c * p2])
        best = min(best, a_norm(ctx, vec - rotated))
    return best


def brute_force_solution_check(small_ctx, lam, point=None, seeds=None, rng=None, match_tol=None):
    """
    Confirm that the solver's point on a tiny grid (<= 12 unknowns) is one of
    the enumerated critical points, with matching level.

    Args:
        small_ctx: FunctionalContext of the coarse instance
        lam: lambda (sign-normalized)
        point: CriticalPoint or stacked vector; solved with find_critical_point when None
        seeds: number of Newton seeds
        rng: numpy Generator
        match_tol: state distance tolerance

    Returns:
        BruteForceReport
    """

    match_tol = config.VERIFY_CONFIG["match_tol"] if match_tol is None else match_tol
    points, levels = enumerate_critical_points(small_ctx, lam, seeds, rng)
    if point is None:
        point = find_critical_point(small_ctx, lam)
    vec = point.vector if hasattr(point, "vector") else as_vector(small_ctx, point)
    symmetric = _rotation_symmetric(small_ctx, lam)

    if not len(points):
        return BruteForceReport(points, levels, False, np.inf, np.inf, symmetric)
    # Critical points of an O(2)-invariant Psi form circles; match up to the orbit
    if symmetric:
        distances = np.array([_orbit_distance(small_ctx, vec, p) for p in points])
    else:
        distances = np.array([a_norm(small_ctx, vec - p) for p in points])
    k = int(np.argmin(distances))
    gap = abs(float(levels[k]) - psi(small_ctx, vec, lam))
    matched = distances[k] <= match_tol * max(1.0, a_norm(small_ctx, vec)) and gap <= 1e-8 * max(1.0, abs(levels[k]))
    logger.info(f"Brute-force match: distance={distances[k]:.3e}, level gap={gap:.3e}, "
                f"rotation orbit={symmetric}, matched={matched}")
    return BruteForceReport(points, levels, bool(matched), float(distances[k]), float(gap), symmetric)


# ---------------------------------------------------------------------------
# Linking sandwich
# ---------------------------------------------------------------------------

@dataclass
class SandwichReport:
    sup_boundary: float
    inf_splus: float
    level: float
    n_boundary: int
    n_plus: int
    holds: bool


def linking_sandwich(ctx, point, probes=None, rng=None):
    """
    Check sup over D- and H of Psi < inf over S+ probes of Psi <= level (+1e-8)
    for an accepted critical point carrying its geometry.
    """

    probes = config.VERIFY_CONFIG["sandwich_probes"] if probes is None else probes
    rng = rng if rng is not None else np.random.default_rng(config.SAMPLING_CONFIG["seed"])
    geom, plus, r_minus, lam = point.geom, point.plus, point.r_minus, point.lam
    if geom is None or plus is None or r_minus is None:
        raise VerificationError("Critical point carries no linking geometry")

    m = geom.m
    phi = a_orthonormal_rows(ctx, geom.basis_minus) if m > 0 else np.zeros((0, ctx.dim))
    e_hat = a_normalize(ctx, project_out(ctx, phi, geom.e_vector))

    # D- (t = 0, inside the ball) and H (t >= 0 on the sphere of radius r_minus)
    if m == 0:
        boundary = np.vstack([np.zeros(ctx.dim), r_minus * e_hat])
    else:
        a = rng.standard_normal((probes, m))
        a /= np.linalg.norm(a, axis=1)[:, None]
        d_minus = (rng.uniform(0.0, 1.0, probes)[:, None] * a) @ phi
        c = rng.standard_normal((probes, m + 1))
        c[:, -1] = np.abs(c[:, -1])
        c /= np.linalg.norm(c, axis=1)[:, None]
        h_set = c[:, :m] @ phi + c[:, m:] * e_hat[None, :]
        boundary = np.vstack([r_minus * d_minus, r_minus * h_set])
    sup_boundary = float(np.max(batch_psi(ctx, boundary, lam)))

    # S+ probes: scan probes, refined minimizer, extra combinations and the projected critical point
    plus_basis = geom.basis_plus if geom.basis_plus.size else np.atleast_2d(geom.e_vector)
    extra = np.abs(rng.standard_normal((max(probes - len(plus.probes), 0), plus_basis.shape[0]))) @ plus_basis
    candidates = [plus.probes]
    if len(extra):
        norms = np.sqrt(np.einsum("ij,ij->i", extra, (ctx.A @ extra.T).T))
        candidates.append(plus.r_plus * extra / norms[:, None])
    projected = project_out(ctx, phi, point.vector)
    if a_norm(ctx, projected) > 0:
        candidates.append(plus.r_plus * a_normalize(ctx, projected)[None, :])
    s_plus = np.vstack(candidates)
    inf_plus = float(np.min(batch_psi(ctx, s_plus, lam)))

    holds = sup_boundary < inf_plus <= point.level + 1e-8
    logger.info(f"Linking sandwich: sup(D-uH)={sup_boundary:.6g} < inf(S+)={inf_plus:.6g} <= d={point.level:.6g}: {holds}")
    return SandwichReport(sup_boundary, inf_plus, float(point.level), len(boundary), len(s_plus), bool(holds))


# ---------------------------------------------------------------------------
# Aggregate report
# ---------------------------------------------------------------------------

@dataclass
class VerificationReport:
    suites: dict = field(default_factory=dict)

    def add(self, name, passed, **metrics):
        self.suites[name] = {"passed": bool(passed), **metrics}
        symbol = "✓" if passed else "✗"
        logger.info(f"{symbol} {name}: {'PASSED' if passed else 'FAILED'}")

    @property
    def passed(self):
        return all(entry["passed"] for entry in self.suites.values())

    def to_dict(self):
        return {"passed": self.passed, "suites": self.suites}


def run_verification(ctx, lam, point=None, small_ctx=None, hypotheses=None, settings=None, seed=None):
    """
    Run every suite on one problem.

    Args:
        ctx: FunctionalContext of the configured problem (sign-normalized)
        lam: lambda used for Psi-based suites
        point: accepted CriticalPoint (enables residual, sandwich suites)
        small_ctx: coarse instance for the brute-force oracle
        hypotheses: HypothesisReport from model.check_hypotheses
        settings: overrides for config.VERIFY_CONFIG
        seed: RNG seed

    Returns:
        VerificationReport
    """
    opts = {**config.VERIFY_CONFIG, **(settings or {})}
    seed = config.SAMPLING_CONFIG["seed"] if seed is None else seed
    rng = np.random.default_rng(seed)
    report = VerificationReport()

    if hypotheses is not None:
        report.add("hypotheses", hypotheses.all_passed, failures=hypotheses.failures, checks=hypotheses.to_dict())

    probe = point.vector if point is not None else _random_state(ctx, rng, 1.0)
    consistency = assembly_consistency(ctx, probe, lam, opts["consistency_tol"])
    report.add("assembly_consistency", consistency.passed,
               max_rel_diff=consistency.max_rel_diff, magnitude_ratio=consistency.magnitude_ratio)

    fd_err = fd_gradient_check(ctx, opts["fd_samples"], lam=lam, rng=rng)
    report.add("fd_gradient", fd_err <= opts["fd_tol"], max_rel_err=fd_err)

    slack = lemma31_suite(ctx, opts["lemma_samples"], rng=rng)
    report.add("monotonicity_inequality", slack >= opts["lemma_tol"], min_slack=slack)

    floor = remark1_floor(ctx.nl, ctx.n, opts["remark1_samples"], rng=rng)
    report.add("calW_floor", floor >= -config.SAMPLING_CONFIG["floor_tol"], min_calW=floor)

    oracle = pencil_oracle_suite(opts["oracle_instances"], rng=rng)
    report.add("pencil_oracle", oracle.passed, max_oracle_err=oracle.max_oracle_err,
               max_dense_err=oracle.max_dense_err)

    if point is not None:
        res1, res2 = residual_check(ctx, point.vector, lam)
        report.add("strong_residual", max(res1, res2) <= 1e-6, res1=res1, res2=res2)
        try:
            sandwich = linking_sandwich(ctx, point, opts["sandwich_probes"], rng=rng)
            report.add("linking_sandwich", sandwich.holds, sup_boundary=sandwich.sup_boundary,
                       inf_splus=sandwich.inf_splus, level=sandwich.level,
                       n_boundary=sandwich.n_boundary, n_plus=sandwich.n_plus)
        except VerificationError as e:
            logger.error(f"Linking sandwich skipped: {e}")
            report.add("linking_sandwich", False, error=str(e))

    if small_ctx is not None:
        try:
            brute = brute_force_solution_check(small_ctx, lam, seeds=opts["brute_force_seeds"], rng=rng,
                                               match_tol=opts["match_tol"])
            report.add("brute_force", brute.matched, n_points=int(len(brute.points)),
                       distance=brute.distance, level_gap=brute.level_gap, rotation_orbit=brute.rotation_orbit)
        except Exception as e:
            logger.error(f"Brute-force check failed: {e}")
            report.add("brute_force", False, error=str(e))

    return report
