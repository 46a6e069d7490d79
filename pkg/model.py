"""
Model module for the coupled Schrodinger bound-state solver.
Potentials, the coupling gamma, the nonlinearity W (value, gradient, Hessian)
and sampling-based certificates for the structural hypotheses.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

import config
from grid import RADIAL, GridSpec

logger = logging.getLogger(__name__)

POWER_SUM = "power_sum"
QUARTIC_COUPLED = "quartic_coupled"
CUSTOM = "custom"
KINDS = (POWER_SUM, QUARTIC_COUPLED, CUSTOM)

FD_STEP = 1e-6


class ModelError(ValueError):
    """Raised for an inadmissible potential set, nonlinearity or problem."""


def critical_exponent(dimension):
    """Sobolev exponent 2* = 2N/(N-2) for N > 2, +inf otherwise."""
    if dimension > 2:
        return 2.0 * dimension / (dimension - 2.0)
    return np.inf


# ---------------------------------------------------------------------------
# Potential families
# ---------------------------------------------------------------------------

def _constant(r, value=1.0):
    return np.full_like(r, float(value))


def _harmonic(r, offset=1.0, curvature=1.0):
    return offset + curvature * r ** 2


def _gaussian_well(r, offset=1.0, depth=0.5, width=1.0, center=0.0):
    return offset - depth * np.exp(-((r - center) / width) ** 2)


def _step(r, inner=1.0, outer=0.0, radius=1.0):
    return np.where(np.abs(r) <= radius, float(inner), float(outer))


POTENTIAL_FAMILIES = {
    "constant": _constant,
    "harmonic": _harmonic,
    "gaussian_well": _gaussian_well,
    "step": _step,
}


def sample_potential(family_spec, coordinates):
    """
    Sample a named analytic family on the given coordinates.

    Args:
        family_spec: dict such as {"family": "harmonic", "offset": 1, "curvature": 1},
            or a plain number (constant family)
        coordinates: node coordinates (r in radial mode, x on the full line)

    Returns:
        numpy array of nodal values
    """
    r = np.asarray(coordinates, dtype=float)
    if isinstance(family_spec, (int, float)):
        return _constant(r, family_spec)

    params = dict(family_spec)
    name = params.pop("family", None)
    if name not in POTENTIAL_FAMILIES:
        raise ModelError(f"Unknown potential family '{name}' (expected one of {sorted(POTENTIAL_FAMILIES)})")
    try:
        return POTENTIAL_FAMILIES[name](r, **params)
    except TypeError as e:
        raise ModelError(f"Bad parameters for potential family '{name}': {e}") from e


@dataclass(frozen=True, eq=False)
class PotentialSet:
    """Nodal values of b1, b2, V1, V2, gamma on the unknowns plus the floors b_i^0."""
    b1: np.ndarray
    b2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    gamma: np.ndarray
    b1_floor: float
    b2_floor: float

    def validate(self):
        arrays = {"b1": self.b1, "b2": self.b2, "V1": self.V1, "V2": self.V2, "gamma": self.gamma}
        sizes = {name: np.asarray(a).size for name, a in arrays.items()}
        if len(set(sizes.values())) != 1:
            raise ModelError(f"Potential arrays have inconsistent lengths: {sizes}")
        for name, values in arrays.items():
            if not np.all(np.isfinite(values)):
                raise ModelError(f"Potential {name} has non-finite nodal values")
        if self.b1_floor <= 0 or self.b2_floor <= 0:
            raise ModelError(f"Floors must be positive, got b1^0={self.b1_floor}, b2^0={self.b2_floor}")

    def negated_coupling(self):
        """Copy with (V1, V2, gamma) replaced by their negatives."""
        return replace(self, V1=-self.V1, V2=-self.V2, gamma=-self.gamma)

    @property
    def size(self):
        return int(np.asarray(self.b1).size)


def build_potentials(grid, spec):
    """
    Sample a declarative potential block onto the unknowns of a grid.

    Args:
        grid: Grid
        spec: dict with keys b1, b2, V1, V2, gamma (family specs) and b1_floor, b2_floor

    Returns:
        PotentialSet
    """
    r = grid.interior_nodes
    potentials = PotentialSet(
        b1=sample_potential(spec["b1"], r),
        b2=sample_potential(spec["b2"], r),
        V1=sample_potential(spec["V1"], r),
        V2=sample_potential(spec["V2"], r),
        gamma=sample_potential(spec["gamma"], r),
        b1_floor=float(spec.get("b1_floor", 1.0)),
        b2_floor=float(spec.get("b2_floor", 1.0)),
    )
    potentials.validate()
    return potentials


# ---------------------------------------------------------------------------
# Nonlinearity
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """
    The potential W(x, t, s) of the right-hand side.

    PowerSum:       W = c1(x)|t|^p1/p1 + c2(x)|s|^p2/p2
    QuarticCoupled: W = t^4/4 + t^2 s^2/2 + s^4/4
    Custom:         user callbacks value(x_index, t, s), gradient(x_index, t, s) -> (W_t, W_s),
                    optionally hessian(x_index, t, s) -> (W_tt, W_ts, W_ss)
    """
    kind: str
    theta: float = 1.0
    p_growth: float = 4.0
    c1: Optional[np.ndarray] = None
    c2: Optional[np.ndarray] = None
    p1: float = 4.0
    p2: float = 4.0
    value_fn: Optional[Callable] = None
    gradient_fn: Optional[Callable] = None
    hessian_fn: Optional[Callable] = None
    label: str = ""

    @property
    def separable(self):
        return self.kind == POWER_SUM

    @property
    def has_analytic_hessian(self):
        return self.kind != CUSTOM or self.hessian_fn is not None

    def validate(self, dimension):
        """
        Check admissibility for a spatial dimension.

        Raises:
            ModelError: when the growth exponent is not subcritical or parameters are missing
        """
        if self.kind not in KINDS:
            raise ModelError(f"Unknown nonlinearity kind '{self.kind}'")
        if self.theta < 1:
            raise ModelError(f"theta must be >= 1, got {self.theta}")
        p_star = critical_exponent(dimension)
        if self.kind == POWER_SUM:
            if self.c1 is None or self.c2 is None:
                raise ModelError("PowerSum requires coefficient vectors c1 and c2")
            if np.min(self.c1) <= 0 or np.min(self.c2) <= 0:
                raise ModelError("PowerSum requires min(c1) > 0 and min(c2) > 0")
            for name, p in (("p1", self.p1), ("p2", self.p2)):
                if not 2.0 < p < p_star:
                    raise ModelError(f"PowerSum exponent {name}={p} must lie in (2, {p_star})")
        elif self.kind == QUARTIC_COUPLED:
            if not 4.0 < p_star:
                raise ModelError(f"QuarticCoupled is only admissible for N <= 3, got N={dimension}")
        else:
            if self.value_fn is None or self.gradient_fn is None:
                raise ModelError("Custom nonlinearity requires value and gradient callbacks")


def power_sum(c1, c2, p1, p2, theta=1.0):
    """PowerSum family with nodal coefficient vectors."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    return Nonlinearity(kind=POWER_SUM, theta=theta, p_growth=max(p1, p2), c1=c1, c2=c2, p1=p1, p2=p2,
                        label=f"power_sum(p1={p1}, p2={p2})")


def quartic_coupled(theta=1.0):
    return Nonlinearity(kind=QUARTIC_COUPLED, theta=theta, p_growth=4.0, label="quartic_coupled")


def custom(value_fn, gradient_fn, theta, p_growth, hessian_fn=None, label="custom"):
    """Custom nonlinearity; theta has no constructive recipe and must be supplied."""
    if theta is None:
        raise ModelError("Custom nonlinearity requires an explicit theta")
    return Nonlinearity(kind=CUSTOM, theta=theta, p_growth=p_growth, value_fn=value_fn,
                        gradient_fn=gradient_fn, hessian_fn=hessian_fn, label=label)


def zero_nonlinearity():
    """W = 0 (linear problems and sanity checks)."""
    def value(x_index, t, s):
        return np.zeros(np.broadcast(t, s).shape)

    def gradient(x_index, t, s):
        shape = np.broadcast(t, s).shape
        return np.zeros(shape), np.zeros(shape)

    def hessian(x_index, t, s):
        shape = np.broadcast(t, s).shape
        return np.zeros(shape), np.zeros(shape), np.zeros(shape)

    return custom(value, gradient, theta=1.0, p_growth=3.0, hessian_fn=hessian, label="zero")


def quadratic_nonlinearity():
    """W = |z|^2: violates superquadratic growth (negative control)."""
    def value(x_index, t, s):
        return t ** 2 + s ** 2

    def gradient(x_index, t, s):
        return 2.0 * t, 2.0 * s

    def hessian(x_index, t, s):
        shape = np.broadcast(t, s).shape
        return np.full(shape, 2.0), np.zeros(shape), np.full(shape, 2.0)

    return custom(value, gradient, theta=1.0, p_growth=3.0, hessian_fn=hessian, label="quadratic")


def _coefficient(values, x_index):
    return np.asarray(values)[x_index]


def eval_W(nl, x_index, z):
    """
    Evaluate W(x, t, s).

    Args:
        nl: Nonlinearity
        x_index: node index (int or index array) selecting the nodal coefficients
        z: pair (t, s) of scalars or arrays broadcastable with x_index

    Returns:
        W values (>= 0)
    """
    t, s = (np.asarray(v, dtype=float) for v in z)
    if nl.kind == QUARTIC_COUPLED:
        t2 = t * t
        s2 = s * s
        return 0.25 * t2 * t2 + 0.5 * t2 * s2 + 0.25 * s2 * s2
    if nl.kind == POWER_SUM:
        c1 = _coefficient(nl.c1, x_index)
        c2 = _coefficient(nl.c2, x_index)
        return c1 * np.abs(t) ** nl.p1 / nl.p1 + c2 * np.abs(s) ** nl.p2 / nl.p2
    return np.asarray(nl.value_fn(x_index, t, s), dtype=float)


def eval_gradW(nl, x_index, z):
    """
    Evaluate the gradient (W_t, W_s).

    Returns:
        tuple of arrays (W_t, W_s)
    """
    t, s = (np.asarray(v, dtype=float) for v in z)
    if nl.kind == QUARTIC_COUPLED:
        t2 = t * t
        s2 = s * s
        return t * (t2 + s2), s * (s2 + t2)
    if nl.kind == POWER_SUM:
        c1 = _coefficient(nl.c1, x_index)
        c2 = _coefficient(nl.c2, x_index)
        return c1 * np.abs(t) ** (nl.p1 - 2.0) * t, c2 * np.abs(s) ** (nl.p2 - 2.0) * s
    wt, ws = nl.gradient_fn(x_index, t, s)
    return np.asarray(wt, dtype=float), np.asarray(ws, dtype=float)


def eval_hessW(nl, x_index, z):
    """
    Evaluate the second derivatives (W_tt, W_ts, W_ss).

    Builtin families are analytic; Custom without a Hessian callback falls back
    to central differences of the gradient.
    """
    t, s = (np.asarray(v, dtype=float) for v in z)
    if nl.kind == QUARTIC_COUPLED:
        return 3.0 * t * t + s * s, 2.0 * t * s, 3.0 * s * s + t * t
    if nl.kind == POWER_SUM:
        c1 = _coefficient(nl.c1, x_index)
        c2 = _coefficient(nl.c2, x_index)
        w_tt = c1 * (nl.p1 - 1.0) * np.abs(t) ** (nl.p1 - 2.0)
        w_ss = c2 * (nl.p2 - 1.0) * np.abs(s) ** (nl.p2 - 2.0)
        return w_tt, np.zeros(np.broadcast(t, s).shape), w_ss
    if nl.hessian_fn is not None:
        return tuple(np.asarray(v, dtype=float) for v in nl.hessian_fn(x_index, t, s))

    step_t = FD_STEP * np.maximum(1.0, np.abs(t))
    step_s = FD_STEP * np.maximum(1.0, np.abs(s))
    wt_p, ws_p = eval_gradW(nl, x_index, (t + step_t, s))
    wt_m, ws_m = eval_gradW(nl, x_index, (t - step_t, s))
    w_tt = (wt_p - wt_m) / (2.0 * step_t)
    w_st = (ws_p - ws_m) / (2.0 * step_t)
    wt_p, ws_p = eval_gradW(nl, x_index, (t, s + step_s))
    wt_m, ws_m = eval_gradW(nl, x_index, (t, s - step_s))
    w_ss = (ws_p - ws_m) / (2.0 * step_s)
    w_ts = (wt_p - wt_m) / (2.0 * step_s)
    return w_tt, 0.5 * (w_ts + w_st), w_ss


def eval_calW(nl, x_index, z):
    """Evaluate calW(x, z) = grad W(x, z) . z - 2 W(x, z) (nonnegative under the growth hypotheses)."""
    t, s = (np.asarray(v, dtype=float) for v in z)
    wt, ws = eval_gradW(nl, x_index, (t, s))
    return wt * t + ws * s - 2.0 * eval_W(nl, x_index, (t, s))


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One instance of the coupled system: grid, potentials, nonlinearity and lambda."""
    grid_spec: GridSpec
    potentials: PotentialSet
    nonlinearity: Nonlinearity
    lam: float = 0.0

    def validate(self):
        self.grid_spec.validate(min_nodes=config.GRID_CONFIG["coarse_min_nodes"])
        self.potentials.validate()
        self.nonlinearity.validate(self.grid_spec.dimension)

    @property
    def radial(self):
        return self.grid_spec.mode == RADIAL

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


# ---------------------------------------------------------------------------
# Hypothesis certificates
# ---------------------------------------------------------------------------

def _geometric(bounds):
    start, stop, num = bounds
    return np.geomspace(float(start), float(stop), int(num))


@dataclass(frozen=True)
class SamplingPlan:
    """Sampling plan for the hypothesis certificates (defaults from config.SAMPLING_CONFIG)."""
    n_directions: int = config.SAMPLING_CONFIG["n_directions"]
    large_radii: tuple = tuple(config.SAMPLING_CONFIG["large_radii"])
    small_radii: tuple = tuple(config.SAMPLING_CONFIG["small_radii"])
    mid_radii: tuple = tuple(config.SAMPLING_CONFIG["mid_radii"])
    eta_points: int = config.SAMPLING_CONFIG["eta_points"]
    max_nodes: int = config.SAMPLING_CONFIG["max_nodes"]
    growth_slope_min: float = config.SAMPLING_CONFIG["growth_slope_min"]
    floor_tol: float = config.SAMPLING_CONFIG["floor_tol"]
    seed: int = config.SAMPLING_CONFIG["seed"]

    @classmethod
    def from_dict(cls, values):
        known = {k: v for k, v in (values or {}).items() if k in cls.__dataclass_fields__}
        for key in ("large_radii", "small_radii", "mid_radii"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)

    def directions(self):
        angles = np.linspace(0.0, 2.0 * np.pi, self.n_directions, endpoint=False)
        return np.cos(angles), np.sin(angles)

    def node_indices(self, n_unknowns):
        count = min(self.max_nodes, n_unknowns)
        return np.unique(np.linspace(0, n_unknowns - 1, count).round().astype(int))


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    detail: str = ""
    applicable: bool = True
    metrics: dict = field(default_factory=dict)


@dataclass
class HypothesisReport:
    """Pass/fail per hypothesis; failures are entries, not faults."""
    checks: list = field(default_factory=list)

    def add(self, check):
        self.checks.append(check)
        status = "PASS" if check.passed else "FAIL"
        if not check.applicable:
            status = "N/A"
        logger.debug(f"Hypothesis {check.name}: {status} {check.detail}")

    def get(self, name):
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def passed(self, name):
        return self.get(name).passed

    @property
    def failures(self):
        return [c.name for c in self.checks if c.applicable and not c.passed]

    @property
    def all_passed(self):
        return not self.failures

    def to_dict(self):
        return {
            c.name: {"passed": bool(c.passed), "applicable": bool(c.applicable), "detail": c.detail,
                     "metrics": {k: float(v) for k, v in c.metrics.items()}}
            for c in self.checks
        }


def _log_slopes(radii, ratios):
    """Slopes of log(ratio) against log(radius) between consecutive samples."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.diff(np.log(ratios), axis=-1) / np.diff(np.log(radii))


def _ray_samples(nl, nodes, plan, radii):
    """W(x, r d) / r^2 for every (node, direction, radius); shape (nodes, directions, radii)."""
    ct, st = plan.directions()
    x = nodes[:, None, None]
    t = ct[None, :, None] * radii[None, None, :]
    s = st[None, :, None] * radii[None, None, :]
    t, s = np.broadcast_arrays(t + 0.0 * x, s + 0.0 * x)
    xi = np.broadcast_to(x, t.shape)
    values = eval_W(nl, xi, (t, s))
    return values / radii[None, None, :] ** 2, xi, t, s


def check_hypotheses(spec, samples=None):
    """
    Sampling-based certificates for (B), (**), (W1)-(W5), (B)_r, (V)_r, the
    calW floor and, for separable W, the (f1)/(g1) sign and structure conditions.

    Args:
        spec: ProblemSpec
        samples: SamplingPlan (defaults from config)

    Returns:
        HypothesisReport
    """
    plan = samples or SamplingPlan()
    pot = spec.potentials
    nl = spec.nonlinearity
    report = HypothesisReport()
    nodes = plan.node_indices(pot.size)
    tol = plan.floor_tol

    # (B): floor only; the coercivity clause cannot be observed on a truncated grid
    b_ok = (np.min(pot.b1) >= pot.b1_floor > 0) and (np.min(pot.b2) >= pot.b2_floor > 0)
    report.add(HypothesisCheck(
        "B", bool(b_ok),
        f"min b1={np.min(pot.b1):.4g} (floor {pot.b1_floor}), min b2={np.min(pot.b2):.4g} (floor {pot.b2_floor})",
        metrics={"min_b1": np.min(pot.b1), "min_b2": np.min(pot.b2)},
    ))

    star_ok = bool(np.any(pot.V1 > 0) or np.any(pot.V2 > 0))
    report.add(HypothesisCheck(
        "star", star_ok,
        "some node has V1 > 0 or V2 > 0" if star_ok else "V1 <= 0 and V2 <= 0 on every node",
        metrics={"max_V1": np.max(pot.V1), "max_V2": np.max(pot.V2)},
    ))

    # (W1): nonnegativity and polynomial growth of order p in (2, 2*)
    p_star = critical_exponent(spec.grid_spec.dimension)
    radii = np.concatenate([_geometric(plan.small_radii), _geometric(plan.mid_radii), _geometric(plan.large_radii)])
    q, xi, t, s = _ray_samples(nl, nodes, plan, radii)
    w_values = q * radii[None, None, :] ** 2
    bound = np.max(w_values / (1.0 + radii[None, None, :] ** nl.p_growth))
    w1_ok = bool(np.min(w_values) >= -tol and 2.0 < nl.p_growth < p_star and np.isfinite(bound))
    report.add(HypothesisCheck(
        "W1", w1_ok, f"min W={np.min(w_values):.3e}, C estimate={bound:.4g}, p={nl.p_growth}, 2*={p_star}",
        metrics={"min_W": np.min(w_values), "growth_constant": bound},
    ))

    # (W2): W/|z|^2 increasing without bound along every sampled ray
    large = _geometric(plan.large_radii)
    q_large = _ray_samples(nl, nodes, plan, large)[0]
    slopes = _log_slopes(large, q_large)
    tail_slope = np.min((np.log(q_large[..., -1]) - np.log(q_large[..., 0])) / np.log(large[-1] / large[0])) \
        if np.all(q_large > 0) else -np.inf
    monotone = bool(np.all(np.diff(q_large, axis=-1) >= -tol * np.abs(q_large[..., 1:])))
    w2_ok = monotone and tail_slope >= plan.growth_slope_min and bool(np.all(np.isfinite(slopes)))
    report.add(HypothesisCheck(
        "W2", bool(w2_ok), f"minimum log-slope of W/|z|^2 over large radii = {tail_slope:.4g}",
        metrics={"tail_slope": tail_slope},
    ))

    # (W3): W/|z|^2 -> 0 at the origin and the partial derivatives vanish on the axes
    small = _geometric(plan.small_radii)
    q_small = _ray_samples(nl, nodes, plan, small)[0]
    if np.all(q_small > 0):
        small_slope = np.min((np.log(q_small[..., -1]) - np.log(q_small[..., 0])) / np.log(small[-1] / small[0]))
    else:
        small_slope = np.inf if np.all(q_small >= 0) and np.max(q_small) <= tol else -np.inf
    axis = np.concatenate([-large[::-1], -small[::-1], small, large])
    xa = np.repeat(nodes, axis.size)
    za = np.tile(axis, nodes.size)
    wt_axis, _ = eval_gradW(nl, xa, (np.zeros_like(za), za))
    _, ws_axis = eval_gradW(nl, xa, (za, np.zeros_like(za)))
    axis_max = float(max(np.max(np.abs(wt_axis)), np.max(np.abs(ws_axis))))
    w3_ok = small_slope >= plan.growth_slope_min and axis_max <= tol
    report.add(HypothesisCheck(
        "W3", bool(w3_ok),
        f"log-slope of W/|z|^2 near 0 = {small_slope:.4g}, max |W_t(x,0,s)|,|W_s(x,t,0)| = {axis_max:.3e}",
        metrics={"small_slope": small_slope, "axis_gradient": axis_max},
    ))

    # (W4): theta calW(z) >= calW(eta z) over the eta grid
    mid = _geometric(plan.mid_radii)
    _, xm, tm, sm = _ray_samples(nl, nodes, plan, mid)
    etas = np.linspace(0.0, 1.0, plan.eta_points)
    cal_full = eval_calW(nl, xm, (tm, sm))
    worst = np.inf
    for eta in etas:
        gap = nl.theta * cal_full - eval_calW(nl, xm, (eta * tm, eta * sm))
        worst = min(worst, float(np.min(gap / np.maximum(1.0, np.abs(cal_full)))))
    report.add(HypothesisCheck(
        "W4", bool(worst >= -tol), f"theta={nl.theta}, worst scaled gap={worst:.3e}",
        metrics={"worst_gap": worst},
    ))

    # calW >= 0, i.e. grad W . z >= 2W
    scale = np.maximum(1.0, np.abs(w_values))
    floor = float(np.min(eval_calW(nl, xi, (t, s)) / scale))
    report.add(HypothesisCheck(
        "remark1", bool(floor >= -tol), f"min calW / max(1, W) over samples = {floor:.3e}",
        metrics={"min_calW": floor},
    ))

    # Structural radial hypotheses: true by construction when sampling in r
    structural = spec.radial
    for name in ("W5", "B_r", "V_r"):
        report.add(HypothesisCheck(
            name, True,
            "holds by radial sampling" if structural else "non-radial (full-line) problem",
            applicable=structural,
        ))

    # (f1)/(g1) for the linearly coupled case W = F(x,t) + G(x,s)
    if nl.separable:
        w_full = eval_W(nl, xi, (t, s))
        w_split = eval_W(nl, xi, (t, np.zeros_like(s))) + eval_W(nl, xi, (np.zeros_like(t), s))
        wt, ws = eval_gradW(nl, xi, (t, s))
        wt0, _ = eval_gradW(nl, xi, (t, np.zeros_like(s)))
        _, ws0 = eval_gradW(nl, xi, (np.zeros_like(t), s))
        fg_ok = (np.array_equal(w_full, w_split) and np.array_equal(wt, wt0) and np.array_equal(ws, ws0)
                 and np.min(wt * t) >= -tol and np.min(ws * s) >= -tol)
        report.add(HypothesisCheck("fg", bool(fg_ok), "separable W = F(t) + G(s) with f t >= 0, g s >= 0"))
    else:
        report.add(HypothesisCheck("fg", True, "not a linearly coupled nonlinearity", applicable=False))

    logger.info(f"Hypothesis check ({nl.label}): failures={report.failures or 'none'}")
    return report
