"""
Test suite for the grid module.
Validates mesh layout, quadrature, the stiffness form and spec validation.
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

from grid import (  # noqa: E402
    FULL_LINE_1D,
    RADIAL,
    GridError,
    GridSpec,
    build_grid,
    refinement_study,
    sphere_area,
    weighted_integral,
)


def test_full_line_layout():
    """Full-line mesh: 2n+1 nodes, weight h on interior nodes, Dirichlet ends."""
    logger.info("="*60)
    logger.info("Testing full-line layout")
    logger.info("="*60)

    grid = build_grid(GridSpec(1, 1.0, 8, FULL_LINE_1D))
    h = 1.0 / 8

    assert grid.nodes.size == 17, f"expected 17 nodes, got {grid.nodes.size}"
    assert np.isclose(grid.nodes[0], -1.0) and np.isclose(grid.nodes[-1], 1.0)
    assert grid.n_unknowns == 15, "both end nodes are Dirichlet"
    assert np.allclose(grid.interior_weights, h), "interior weights must equal h"
    assert np.all(grid.quad_weights > 0), "all weights positive"
    logger.info(f"✓ 17 nodes, 15 unknowns, interior weights = h = {h}")


def test_radial_weights():
    """Radial weights are positive and sum to the ball volume."""
    logger.info("="*60)
    logger.info("Testing radial quadrature weights")
    logger.info("="*60)

    for dim in (1, 2, 3, 5):
        grid = build_grid(GridSpec(dim, 2.0, 40, RADIAL))
        volume = sphere_area(dim) * 2.0 ** dim / dim
        assert np.all(grid.quad_weights > 0), f"N={dim}: nonpositive weight"
        assert np.isclose(grid.quad_weights.sum(), volume, rtol=1e-12), f"N={dim}: weights do not sum to volume"
        logger.info(f"✓ N={dim}: sum of weights = {grid.quad_weights.sum():.6f} (ball volume {volume:.6f})")

    assert np.isclose(sphere_area(3), 4 * np.pi)
    assert np.isclose(sphere_area(2), 2 * np.pi)
    assert np.isclose(sphere_area(1), 2.0)
    logger.info("✓ Unit-sphere areas for N = 1, 2, 3")


def test_weighted_integral():
    """Quadrature examples: zero, interval measure, exact linears, r^2 in 3D."""
    logger.info("="*60)
    logger.info("Testing weighted integral")
    logger.info("="*60)

    line = build_grid(GridSpec(1, 1.0, 16, FULL_LINE_1D))
    assert weighted_integral(line, np.zeros(line.nodes.size)) == 0.0
    assert np.isclose(weighted_integral(line, np.ones(line.nodes.size)), 2.0, atol=1e-14)
    assert np.isclose(weighted_integral(line, 3.0 * line.nodes + 1.0), 2.0, atol=1e-13)
    logger.info("✓ f = 0 -> 0, f = 1 -> 2, degree-1 polynomial exact")

    ball = build_grid(GridSpec(3, 1.0, 400, RADIAL))
    value = weighted_integral(ball, ball.nodes ** 2)
    target = 4 * np.pi / 5
    assert abs(value - target) / target < 1e-2, f"integral of r^2 = {value}, expected {target}"
    logger.info(f"✓ N=3, integral of r^2 = {value:.6f} (4pi/5 = {target:.6f})")

    # Unknowns-only vectors are accepted (Dirichlet nodes contribute zero)
    unknowns = ball.interior_nodes ** 2
    assert np.isclose(weighted_integral(ball, unknowns), value - ball.quad_weights[-1] * 1.0)
    logger.info("✓ Unknowns-only vectors accepted")

    try:
        weighted_integral(line, np.ones(5))
        raise AssertionError("length mismatch not rejected")
    except GridError as e:
        logger.info(f"✓ Length mismatch rejected: {e}")


def test_quadrature_order():
    """Second-order convergence for a smooth integrand under refinement."""
    logger.info("="*60)
    logger.info("Testing quadrature convergence order")
    logger.info("="*60)

    exact = 2.0 * np.sin(1.0)
    errors = []
    for n in (16, 32, 64):
        grid = build_grid(GridSpec(1, 1.0, n, FULL_LINE_1D))
        errors.append(abs(weighted_integral(grid, np.cos(grid.nodes)) - exact))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9), f"observed orders {orders}"
    logger.info(f"✓ Observed orders {np.round(orders, 3)}")


def test_stiffness_form():
    """K symmetric, PSD on random vectors, Dirichlet kills constants, matches the energy integral."""
    logger.info("="*60)
    logger.info("Testing stiffness form")
    logger.info("="*60)

    rng = np.random.default_rng(0)
    for spec in (GridSpec(3, 5.0, 60, RADIAL), GridSpec(1, 5.0, 30, FULL_LINE_1D), GridSpec(2, 3.0, 50, RADIAL)):
        grid = build_grid(spec)
        K = grid.stiffness
        assert abs(K - K.T).max() == 0.0, "K must be exactly symmetric"
        quadratic = [v @ (K @ v) for v in rng.standard_normal((100, grid.n_unknowns))]
        assert min(quadratic) >= 0.0, "K must be positive semidefinite"
        ones = np.ones(grid.n_unknowns)
        assert ones @ (K @ ones) > 0, "Dirichlet end must penalize constants"
        logger.info(f"✓ {spec.mode} N={spec.dimension}: symmetric, PSD on 100 vectors, constants penalized")

    # v^T K v approximates 4 pi * int |u'|^2 r^2 dr for u = cos(pi r / 2R)
    R = 1.0
    grid = build_grid(GridSpec(3, R, 400, RADIAL))
    u = np.cos(np.pi * grid.interior_nodes / (2 * R))
    discrete = u @ (grid.stiffness @ u)
    integrand = lambda r: (np.pi / (2 * R) * np.sin(np.pi * r / (2 * R))) ** 2 * r ** 2  # noqa: E731
    continuum = 4 * np.pi * quad(integrand, 0.0, R)[0]
    assert abs(discrete - continuum) / continuum < 1e-2, f"{discrete} vs {continuum}"
    logger.info(f"✓ Dirichlet energy {discrete:.6f} vs quadrature {continuum:.6f}")


def test_norm_definiteness():
    """K + M_b with b >= b0 > 0 is positive definite."""
    logger.info("="*60)
    logger.info("Testing discrete H1 norm")
    logger.info("="*60)

    grid = build_grid(GridSpec(3, 4.0, 30, RADIAL))
    b = 1.0 + grid.interior_nodes ** 2
    form = grid.stiffness.toarray() + np.diag(b * grid.interior_weights)
    smallest = np.linalg.eigvalsh(form).min()
    assert smallest > 0, f"smallest eigenvalue {smallest}"
    logger.info(f"✓ Smallest eigenvalue of K + M_b = {smallest:.4e}")


def test_spec_validation():
    """Invalid specs are rejected; coarse grids only on request."""
    logger.info("="*60)
    logger.info("Testing spec validation")
    logger.info("="*60)

    bad_specs = [
        GridSpec(3, 1.0, 7, RADIAL),
        GridSpec(3, 0.0, 20, RADIAL),
        GridSpec(3, -1.0, 20, RADIAL),
        GridSpec(0, 1.0, 20, RADIAL),
        GridSpec(2, 1.0, 20, FULL_LINE_1D),
        GridSpec(1, 1.0, 20, "hexagonal"),
    ]
    for spec in bad_specs:
        try:
            build_grid(spec)
            raise AssertionError(f"{spec} accepted")
        except GridError as e:
            logger.info(f"✓ Rejected {spec}: {e}")

    coarse = build_grid(GridSpec(3, 6.0, 4, RADIAL), allow_coarse=True)
    assert coarse.n_unknowns == 4
    logger.info("✓ Coarse grid allowed on request")


def test_corrupted_stencil():
    """The negative-control build changes K but keeps it symmetric."""
    logger.info("="*60)
    logger.info("Testing corrupted stencil")
    logger.info("="*60)

    spec = GridSpec(3, 5.0, 40, RADIAL)
    clean = build_grid(spec).stiffness
    broken = build_grid(spec, corrupt_stencil=True).stiffness
    assert abs(broken - broken.T).max() == 0.0
    assert abs(clean - broken).max() > 0
    assert np.allclose(clean.diagonal(), broken.diagonal())
    logger.info("✓ Off-diagonals scaled, diagonal untouched")


def test_refinement_study():
    """Refinement rows carry the base level and relative drift per variant."""
    logger.info("="*60)
    logger.info("Testing refinement study")
    logger.info("="*60)

    base = GridSpec(3, 8.0, 100, RADIAL)
    rows = refinement_study(lambda spec: 1.0 + 1.0 / spec.n_nodes + 0.0 * spec.radius,
                            base, n_values=(200,), radii=(10.0,))
    assert len(rows) == 3
    assert rows[0]["relative_drift"] == 0.0
    assert rows[1]["spec"]["n_nodes"] == 200
    assert np.isclose(rows[1]["relative_drift"], abs(1.005 - 1.01) / 1.01)
    assert rows[2]["spec"]["radius"] == 10.0 and rows[2]["relative_drift"] == 0.0
    logger.info(f"✓ {len(rows)} refinement rows")


def run_all_tests():
    """Run all tests and generate summary report."""
    logger.info("\n" + "="*60)
    logger.info("GRID - TEST SUITE")
    logger.info("="*60 + "\n")

    tests = {
        'full_line_layout': test_full_line_layout,
        'radial_weights': test_radial_weights,
        'weighted_integral': test_weighted_integral,
        'quadrature_order': test_quadrature_order,
        'stiffness_form': test_stiffness_form,
        'norm_definiteness': test_norm_definiteness,
        'spec_validation': test_spec_validation,
        'corrupted_stencil': test_corrupted_stencil,
        'refinement_study': test_refinement_study,
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
