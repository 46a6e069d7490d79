"""
Test suite for the functionals module.
Validates E, J, P, Psi, the dual residual and the Sobolev gradient against
independent assemblies and finite differences.
"""

import sys
import logging

import numpy as np
from scipy.integrate import quad

# Configure logging for tests
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler(sys.stdout)]
)

logger = logging.getLogger(__name__)

import config  # noqa: E402
from functionals import (  # noqa: E402
    ContextError,
    State,
    a_norm,
    batch_dual_residual,
    batch_psi,
    batch_sobolev_gradient,
    build_context,
    component_norms,
    dual_residual,
    dual_residual_vector,
    energy_E,
    functional_J,
    functional_P,
    jacobian,
    psi,
    residual_norm,
    sobolev_gradient,
    sobolev_gradient_vector,
)
from grid import FULL_LINE_1D, RADIAL, GridSpec, build_grid, weighted_integral  # noqa: E402
from model import build_potentials, power_sum, quartic_coupled, zero_nonlinearity  # noqa: E402
from pencil import solve_pencil  # noqa: E402

UNIT_POTENTIALS = {"b1": 1.0, "b2": 1.0, "V1": 1.0, "V2": 1.0, "gamma": 1.0, "b1_floor": 1.0, "b2_floor": 1.0}
NO_COUPLING = {"b1": 1.0, "b2": 1.0, "V1": 0.0, "V2": 0.0, "gamma": 0.0, "b1_floor": 1.0, "b2_floor": 1.0}


def _context(nl=None, potentials=None, spec=None):
    grid = build_grid(spec or GridSpec(3, 6.0, 30, RADIAL))
    pot = build_potentials(grid, potentials or config.BENCHMARK_POTENTIALS)
    return build_context(grid, pot, nl or quartic_coupled())


def _random_states(ctx, count, rng, scale=0.5):
    return scale * rng.standard_normal((count, ctx.dim))


def test_zero_state():
    """Every functional and both gradients vanish at u = 0."""
    logger.info("="*60)
    logger.info("Testing the zero state")
    logger.info("="*60)

    ctx = _context()
    zero = State.zeros(ctx.n)
    assert energy_E(ctx, zero) == 0.0
    assert functional_J(ctx, zero) == 0.0
    assert functional_P(ctx, zero) == 0.0
    for lam in (0.0, 1.5, -2.0):
        assert psi(ctx, zero, lam) == 0.0
        assert np.all(dual_residual(ctx, zero, lam).vector() == 0.0)
        assert np.all(sobolev_gradient(ctx, zero, lam).vector() == 0.0)
    logger.info("✓ E, J, P, Psi, r and g vanish at 0")


def test_homogeneity():
    """E and J are 2-homogeneous on 100 random (t, u)."""
    logger.info("="*60)
    logger.info("Testing 2-homogeneity")
    logger.info("="*60)

    rng = np.random.default_rng(0)
    ctx = _context()
    worst = 0.0
    for vec, t in zip(_random_states(ctx, 100, rng), rng.uniform(-4, 4, 100)):
        for fn in (energy_E, functional_J):
            base = fn(ctx, vec)
            err = abs(fn(ctx, t * vec) - t * t * base) / max(abs(t * t * base), 1e-300)
            worst = max(worst, err)
    assert worst <= 1e-12, f"worst relative error {worst:.3e}"
    logger.info(f"✓ Worst relative error {worst:.3e}")


def test_energy_dense_oracle():
    """1D hat function: E matches a naive dense re-assembly of K and M."""
    logger.info("="*60)
    logger.info("Testing E against a dense assembly")
    logger.info("="*60)

    spec = GridSpec(1, 2.0, 10, FULL_LINE_1D)
    ctx = _context(potentials=UNIT_POTENTIALS, spec=spec)
    grid = ctx.grid
    h = spec.spacing
    total = grid.nodes.size

    K = np.zeros((total, total))
    for j in range(total - 1):
        for a, b, sign in ((j, j, 1.0), (j + 1, j + 1, 1.0), (j, j + 1, -1.0), (j + 1, j, -1.0)):
            K[a, b] += sign / h
    M = np.diag(np.full(total, h))
    K = K[1:-1, 1:-1]
    M = M[1:-1, 1:-1]

    hat = np.maximum(0.0, 1.0 - np.abs(grid.interior_nodes) / 0.6)
    state = State(hat, np.zeros_like(hat))
    expected = 0.5 * (hat @ K @ hat + hat @ M @ hat)
    assert np.isclose(energy_E(ctx, state), expected, rtol=1e-13)
    logger.info(f"✓ E(hat) = {energy_E(ctx, state):.12f} matches dense assembly")


def test_functional_J_examples():
    """J vanishes without coupling, equals half the dual pairing, and 2 int v^2 on the diagonal."""
    logger.info("="*60)
    logger.info("Testing J")
    logger.info("="*60)

    rng = np.random.default_rng(1)
    spec = GridSpec(1, 4.0, 20, FULL_LINE_1D)

    plain = _context(potentials=NO_COUPLING, spec=spec)
    for vec in _random_states(plain, 10, rng):
        assert functional_J(plain, vec) == 0.0
    logger.info("✓ V = gamma = 0 gives J = 0")

    ctx = _context(potentials=UNIT_POTENTIALS, spec=spec)
    vec = _random_states(ctx, 1, rng)[0]
    assert np.isclose(functional_J(ctx, vec), 0.5 * vec @ (ctx.B @ vec), rtol=1e-14)
    v = np.exp(-ctx.grid.interior_nodes ** 2)
    assert np.isclose(functional_J(ctx, State(v, v)), 2.0 * weighted_integral(ctx.grid, v ** 2), rtol=1e-13)
    logger.info("✓ J = <J'(u), u>/2 and J(v, v) = 2 int v^2")


def test_functional_P_examples():
    """Quartic P on equal components and power-sum P against a fine quadrature."""
    logger.info("="*60)
    logger.info("Testing P")
    logger.info("="*60)

    ctx = _context()
    v = np.exp(-ctx.grid.interior_nodes ** 2)
    assert np.isclose(functional_P(ctx, State(v, v)), weighted_integral(ctx.grid, v ** 4), rtol=1e-13)
    logger.info("✓ Quartic P(v, v) = int v^4")

    spec = GridSpec(1, 5.0, 200, FULL_LINE_1D)
    grid = build_grid(spec)
    n = grid.n_unknowns
    nl = power_sum(np.ones(n), np.ones(n), 4.0, 4.0)
    ctx = build_context(grid, build_potentials(grid, UNIT_POTENTIALS), nl)
    bump = np.exp(-grid.interior_nodes ** 2)
    value = functional_P(ctx, State(bump, np.zeros(n)))
    reference = quad(lambda x: np.exp(-4 * x ** 2) / 4, -5.0, 5.0)[0]
    assert abs(value - reference) / reference < 1e-2
    logger.info(f"✓ Power-sum P(bump) = {value:.8f} vs quadrature {reference:.8f}")


def test_psi_identity():
    """Psi + lambda J + P - E = 0 and Psi = E when W = 0, lambda = 0."""
    logger.info("="*60)
    logger.info("Testing the Psi identity")
    logger.info("="*60)

    rng = np.random.default_rng(2)
    ctx = _context()
    for vec in _random_states(ctx, 20, rng):
        lam = rng.uniform(-3, 3)
        E, J, P = energy_E(ctx, vec), functional_J(ctx, vec), functional_P(ctx, vec)
        value = psi(ctx, vec, lam)
        assert abs(value + lam * J + P - E) <= 1e-12 * max(1.0, abs(E) + abs(P))
    linear = _context(nl=zero_nonlinearity())
    vec = _random_states(linear, 1, rng)[0]
    assert np.isclose(psi(linear, vec, 0.0), energy_E(linear, vec), rtol=1e-14)
    assert psi(linear, vec, 0.0) >= 0
    logger.info("✓ Defining identity on 20 random states; Psi = E for the linear problem")


def test_directional_derivatives():
    """<r, v> matches central differences of Psi; the Jacobian matches differences of r."""
    logger.info("="*60)
    logger.info("Testing directional derivatives")
    logger.info("="*60)

    rng = np.random.default_rng(3)
    ctx = _context()
    eps = 1e-6
    worst = 0.0
    for u, v in zip(_random_states(ctx, 20, rng), _random_states(ctx, 20, rng)):
        lam = rng.uniform(0, 2)
        pairing = dual_residual_vector(ctx, u, lam) @ v
        fd = (psi(ctx, u + eps * v, lam) - psi(ctx, u - eps * v, lam)) / (2 * eps)
        worst = max(worst, abs(fd - pairing) / max(1.0, abs(pairing)))
    assert worst <= 1e-6, f"worst relative error {worst:.3e}"
    logger.info(f"✓ Psi directional derivative, worst relative error {worst:.3e}")

    u, v = _random_states(ctx, 2, rng)
    lam = 0.7
    jv = jacobian(ctx, u, lam) @ v
    fd = (dual_residual_vector(ctx, u + eps * v, lam) - dual_residual_vector(ctx, u - eps * v, lam)) / (2 * eps)
    err = np.linalg.norm(jv - fd) / max(1.0, np.linalg.norm(jv))
    assert err <= 1e-6, f"Jacobian relative error {err:.3e}"
    assert abs(jacobian(ctx, u, lam) - jacobian(ctx, u, lam).T).max() <= 1e-12 * abs(ctx.A).max()
    logger.info(f"✓ Jacobian-vector product, relative error {err:.3e}; Jacobian symmetric")


def test_eigenvector_residual():
    """With W = 0 and lambda = mu_k the dual residual of v_k vanishes."""
    logger.info("="*60)
    logger.info("Testing eigenvector residuals")
    logger.info("="*60)

    ctx = _context(nl=zero_nonlinearity())
    seq = solve_pencil(ctx, 4)
    for mu, vec in zip(seq.mus, seq.vectors):
        r = dual_residual_vector(ctx, vec, mu)
        rel = np.linalg.norm(r) / np.linalg.norm(ctx.A @ vec)
        assert rel <= 1e-10, f"mu={mu}: relative residual {rel:.3e}"
    logger.info(f"✓ {len(seq)} eigenpairs give vanishing residuals")


def test_sobolev_gradient():
    """g = A^{-1} r: g = u for the linear problem at lambda = 0; ||g||_A^2 = g.r."""
    logger.info("="*60)
    logger.info("Testing the Sobolev gradient")
    logger.info("="*60)

    rng = np.random.default_rng(4)
    linear = _context(nl=zero_nonlinearity())
    u = _random_states(linear, 1, rng)[0]
    assert np.linalg.norm(sobolev_gradient_vector(linear, u, 0.0) - u) <= 1e-9 * np.linalg.norm(u)
    logger.info("✓ g = u when W = 0 and lambda = 0")

    ctx = _context()
    for u in _random_states(ctx, 10, rng):
        r = dual_residual_vector(ctx, u, 0.4)
        g = sobolev_gradient_vector(ctx, u, 0.4)
        assert np.isclose(g @ (ctx.A @ g), g @ r, rtol=1e-8)
        assert np.isclose(g @ (ctx.A @ u), r @ u, rtol=1e-8)
        assert np.isclose(residual_norm(ctx, u, 0.4), a_norm(ctx, g), rtol=1e-8)
    logger.info("✓ ||g||_A^2 = g.r, <g, u>_A = <r, u>, residual norm = ||g||_A")


def test_inequalities():
    """Monotonicity inequality for E' and the bound |J| <= C E."""
    logger.info("="*60)
    logger.info("Testing functional inequalities")
    logger.info("="*60)

    rng = np.random.default_rng(5)
    ctx = _context()
    worst = np.inf
    for u, v in zip(_random_states(ctx, 1000, rng), _random_states(ctx, 1000, rng)):
        d = u - v
        lhs = d @ (ctx.A @ d)
        nu1, nu2 = component_norms(ctx, u)
        nv1, nv2 = component_norms(ctx, v)
        slack = lhs - (nu1 - nv1) ** 2 - (nu2 - nv2) ** 2
        worst = min(worst, slack / max(1.0, lhs))
    assert worst >= -1e-10, f"min scaled slack {worst:.3e}"
    logger.info(f"✓ Monotonicity slack >= {worst:.3e} on 1000 pairs")

    pot = ctx.potentials
    C = 2 * max(np.abs(pot.V1).max() + np.abs(pot.gamma).max(),
                np.abs(pot.V2).max() + np.abs(pot.gamma).max()) / min(pot.b1_floor, pot.b2_floor)
    for u in _random_states(ctx, 100, rng):
        assert abs(functional_J(ctx, u)) <= C * energy_E(ctx, u)
    logger.info(f"✓ |J| <= {C} E on 100 random states")


def test_batches():
    """Batched evaluations match the single-state ones row by row."""
    logger.info("="*60)
    logger.info("Testing batched functionals")
    logger.info("="*60)

    rng = np.random.default_rng(6)
    ctx = _context()
    U = _random_states(ctx, 8, rng)
    lam = 1.3
    values = batch_psi(ctx, U, lam)
    residuals = batch_dual_residual(ctx, U, lam)
    gradients = batch_sobolev_gradient(ctx, U, lam)
    for i, u in enumerate(U):
        assert np.isclose(values[i], psi(ctx, u, lam), rtol=1e-12)
        single = dual_residual_vector(ctx, u, lam)
        assert np.linalg.norm(residuals[i] - single) <= 1e-12 * np.linalg.norm(single)
        single = sobolev_gradient_vector(ctx, u, lam)
        assert np.linalg.norm(gradients[i] - single) <= 1e-10 * np.linalg.norm(single)
    states = [State.from_vector(u) for u in U]
    assert np.allclose(batch_psi(ctx, states, lam), values)
    logger.info("✓ 8-state batch matches single evaluations")


def test_context_errors():
    """Size mismatches and indefinite A are reported as ContextError."""
    logger.info("="*60)
    logger.info("Testing context errors")
    logger.info("="*60)

    ctx = _context()
    for bad in (lambda: energy_E(ctx, np.ones(ctx.dim + 2)),
                lambda: State.from_vector(np.ones(5)),
                lambda: psi(ctx, State.zeros(ctx.n - 1), 0.0)):
        try:
            bad()
            raise AssertionError("mismatch accepted")
        except ContextError as e:
            logger.info(f"✓ Rejected: {e}")

    grid = build_grid(GridSpec(3, 6.0, 30, RADIAL))
    other = build_grid(GridSpec(3, 6.0, 20, RADIAL))
    try:
        build_context(grid, build_potentials(other, config.BENCHMARK_POTENTIALS), quartic_coupled())
        raise AssertionError("potential size mismatch accepted")
    except ContextError as e:
        logger.info(f"✓ Rejected: {e}")

    broken = dict(config.BENCHMARK_POTENTIALS, b1={"family": "constant", "value": -1e3})
    try:
        build_context(grid, build_potentials(grid, broken), quartic_coupled())
        raise AssertionError("indefinite A accepted")
    except ContextError as e:
        logger.info(f"✓ Rejected: {e}")


def run_all_tests():
    """Run all tests and generate summary report."""
    logger.info("\n" + "="*60)
    logger.info("FUNCTIONALS - TEST SUITE")
    logger.info("="*60 + "\n")

    tests = {
        'zero_state': test_zero_state,
        'homogeneity': test_homogeneity,
        'energy_dense_oracle': test_energy_dense_oracle,
        'functional_J_examples': test_functional_J_examples,
        'functional_P_examples': test_functional_P_examples,
        'psi_identity': test_psi_identity,
        'directional_derivatives': test_directional_derivatives,
        'eigenvector_residual': test_eigenvector_residual,
        'sobolev_gradient': test_sobolev_gradient,
        'inequalities': test_inequalities,
        'batches': test_batches,
        'context_errors': test_context_errors,
    }

    test_results = {}
    for name, test in tests.items():
        try:
            test()
            test_results[name] = True
        except Exception as e:
            logger.error(f"✗ {name}: {type(e).__name__}: {e}")
            test_results[name] = False

    # Generate summary
    logger.info("\n" + "="*60)
    logger.info("TEST SUMMARY")
    logger.info("="*60)

    failed = 0
    for test_name, result in test_results.items():
        symbol = "✓" if result else "✗"
        logger.info(f"{symbol} {test_name}: {'PASSED' if result else 'FAILED'}")
        failed += 0 if result else 1

    logger.info("="*60)
    logger.info(f"Total tests: {len(test_results)}")
    logger.info(f"Passed: {len(test_results) - failed}")
    logger.info(f"Failed: {failed}")
    logger.info("="*60)

    return failed == 0


if __name__ == "__main__":
    success = run_all_tests()
    sys.exit(0 if success else 1)
