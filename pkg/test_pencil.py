"""
Test suite for the pencil module.
Validates the eigenvalue sequence against dense and min-max oracles, the
location of lambda, sign normalization and the cone tests.
"""

import sys
import logging
from dataclasses import replace

import numpy as np
from scipy.linalg import eigh

# Configure logging for tests
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler(sys.stdout)]
)

logger = logging.getLogger(__name__)

import config  # noqa: E402
from functionals import build_context, functional_J, psi  # noqa: E402
from grid import RADIAL, GridSpec, build_grid  # noqa: E402
from model import ProblemSpec, build_potentials, quartic_coupled, zero_nonlinearity  # noqa: E402
from pencil import (  # noqa: E402
    PencilError,
    ResonanceError,
    SpectrumTooShortError,
    cone_test,
    locate_lambda,
    minmax_oracle,
    sign_normalize,
    solve_pencil,
)

DECOUPLED = {"b1": 1.0, "b2": 1.0, "V1": 1.0, "V2": 0.0, "gamma": 0.0, "b1_floor": 1.0, "b2_floor": 1.0}


def _context(potentials=None, n=40, radius=8.0, nl=None, allow_coarse=False, dimension=3):
    grid = build_grid(GridSpec(dimension, radius, n, RADIAL), allow_coarse=allow_coarse)
    pot = build_potentials(grid, potentials or config.BENCHMARK_POTENTIALS)
    return build_context(grid, pot, nl or quartic_coupled())


def _small_context(potentials=None):
    """Six unknowns per component (total dimension 12)."""
    return _context(potentials or DECOUPLED, n=6, radius=3.0, allow_coarse=True, dimension=1)


def test_benchmark_spectrum():
    """Benchmark pencil: mu ~ 2, 4, 6, J = 1, tiny residuals, one zero mode per node."""
    logger.info("="*60)
    logger.info("Testing the benchmark spectrum")
    logger.info("="*60)

    ctx = _context(n=60)
    seq = solve_pencil(ctx, 6)
    assert len(seq) == 6
    assert np.all(seq.mus > 0) and np.all(np.diff(seq.mus) >= 0), "mus must be positive and nondecreasing"
    assert np.all(np.abs(seq.j_values - 1.0) <= 1e-10)
    assert np.max(seq.residuals) <= 1e-10, f"max residual {np.max(seq.residuals):.3e}"
    assert seq.n_zero_modes == ctx.n
    assert not seq.star_failed
    for k, target in enumerate((2.0, 4.0, 6.0)):
        assert abs(seq.mus[k] - target) / target < 5e-2, f"mu_{k + 1} = {seq.mus[k]}"
    for vec, mu in zip(seq.vectors, seq.mus):
        assert np.isclose(0.5 * vec @ (ctx.A @ vec), mu, rtol=1e-10), "E(v_k) must equal mu_k"
    logger.info(f"✓ mus = {np.round(seq.mus[:3], 4)}, zero modes = {seq.n_zero_modes}")

    as_dict = seq.to_dict()
    assert as_dict["mus"][0]["index"] == 1 and len(as_dict["mus"]) == 6
    logger.info("✓ Spectrum table serializes")


def test_identity_pencil():
    """B = A gives mu = 1 for every eigenvalue and every oracle index."""
    logger.info("="*60)
    logger.info("Testing the B = A pencil")
    logger.info("="*60)

    base = _context(n=20)
    ctx = replace(base, B=base.A)
    seq = solve_pencil(ctx, 5)
    assert len(seq) == 5 and seq.n_zero_modes == 0
    assert np.allclose(seq.mus, 1.0, rtol=1e-10), f"mus = {seq.mus}"
    logger.info("✓ All mus equal 1")

    # V = b alone is not the identity pencil: B = M_b misses the stiffness part
    same = {"b1": 1.0, "b2": 1.0, "V1": 1.0, "V2": 1.0, "gamma": 0.0, "b1_floor": 1.0, "b2_floor": 1.0}
    mass_only = _context(same, n=20)
    reference = 1.0 / eigh(mass_only.B.toarray(), mass_only.A.toarray(), eigvals_only=True)[::-1][:5]
    assert np.allclose(solve_pencil(mass_only, 5).mus, reference, rtol=1e-8)
    assert solve_pencil(mass_only, 5).mus[0] > 1.0
    logger.info("✓ V = b pencil matches the dense reference with mu_1 > 1")

    small_base = _small_context()
    small = replace(small_base, B=small_base.A)
    rng = np.random.default_rng(0)
    for n in (1, 2, 3):
        value = minmax_oracle(small, n, samples=20, refine_iters=20, rng=rng)
        assert abs(value - 1.0) <= 1e-6, f"oracle({n}) = {value}"
    logger.info("✓ Oracle returns 1 for n = 1, 2, 3")


def test_decoupled_blocks():
    """gamma = 0, V2 = 0: positive-mu eigenvectors have no u2 component."""
    logger.info("="*60)
    logger.info("Testing block decoupling")
    logger.info("="*60)

    ctx = _context(DECOUPLED, n=30)
    seq = solve_pencil(ctx, 5)
    n = ctx.n
    for vec in seq.vectors:
        assert np.max(np.abs(vec[n:])) <= 1e-8 * np.max(np.abs(vec[:n]))
    logger.info(f"✓ {len(seq)} eigenvectors live in the u1 block")


def test_dense_oracle():
    """Six-node instance: mus equal an independent generalized eigensolve."""
    logger.info("="*60)
    logger.info("Testing against a dense generalized eigensolver")
    logger.info("="*60)

    ctx = _small_context()
    seq = solve_pencil(ctx, 12)
    nu = eigh(ctx.B.toarray(), ctx.A.toarray(), eigvals_only=True)
    nu = nu[nu > 1e-12 * np.max(np.abs(nu))]
    expected = np.sort(1.0 / nu)
    assert len(seq) == expected.size == 6
    assert np.allclose(seq.mus, expected, rtol=1e-10, atol=0.0)
    logger.info(f"✓ mus = {np.round(seq.mus, 6)}")


def test_minmax_oracle():
    """Min-max oracle reproduces mu_1, mu_2, mu_3 and refuses large instances."""
    logger.info("="*60)
    logger.info("Testing the min-max oracle")
    logger.info("="*60)

    ctx = _small_context()
    seq = solve_pencil(ctx)
    rng = np.random.default_rng(1)
    for n in (1, 2, 3):
        value = minmax_oracle(ctx, n, rng=rng)
        assert value >= seq.mus[n - 1] * (1 - 1e-12), "oracle must upper-bound mu_n"
        assert abs(value - seq.mus[n - 1]) <= 1e-6 * max(1.0, seq.mus[n - 1]), f"n={n}: {value} vs {seq.mus[n - 1]}"
        logger.info(f"✓ oracle({n}) = {value:.10f}, mu_{n} = {seq.mus[n - 1]:.10f}")

    for bad in (lambda: minmax_oracle(_context(n=20), 1), lambda: minmax_oracle(ctx, 0)):
        try:
            bad()
            raise AssertionError("oracle accepted an invalid request")
        except PencilError as e:
            logger.info(f"✓ Rejected: {e}")


def test_locate_lambda():
    """Bracketing, the inclusive lower end, resonance and short spectra."""
    logger.info("="*60)
    logger.info("Testing locate_lambda")
    logger.info("="*60)

    seq = solve_pencil(_context(), 4)
    mu1, mu2 = seq.mus[0], seq.mus[1]

    geom = locate_lambda(seq, 0.0)
    assert geom.m == 0 and geom.mu_m is None and geom.basis_minus.shape[0] == 0
    assert np.allclose(geom.e_vector, seq.vectors[0])
    logger.info("✓ lambda = 0 -> m = 0")

    geom = locate_lambda(seq, 0.5 * (mu1 + mu2))
    assert geom.m == 1 and geom.mu_m == mu1 and geom.mu_m1 == mu2
    assert geom.basis_minus.shape[0] == 1 and np.allclose(geom.e_vector, seq.vectors[1])
    logger.info("✓ lambda = (mu_1 + mu_2)/2 -> m = 1")

    assert locate_lambda(seq, mu1).m == 1
    logger.info("✓ lambda = mu_1 -> m = 1")

    cases = [
        (lambda: locate_lambda(seq, mu2 - 1e-12), ResonanceError),
        (lambda: locate_lambda(seq, seq.mus[-1] + 1.0), SpectrumTooShortError),
        (lambda: locate_lambda(seq, -1.0), PencilError),
    ]
    for call, error in cases:
        try:
            call()
            raise AssertionError(f"{error.__name__} not raised")
        except error as e:
            logger.info(f"✓ {error.__name__}: {e}")


def test_sign_normalize():
    """Negative lambda flips (V, gamma); Psi is unchanged on random states."""
    logger.info("="*60)
    logger.info("Testing sign normalization")
    logger.info("="*60)

    grid = build_grid(GridSpec(3, 6.0, 30, RADIAL))
    pot = build_potentials(grid, config.BENCHMARK_POTENTIALS)
    problem = ProblemSpec(grid.spec, pot, quartic_coupled(), -2.0)

    flipped = sign_normalize(problem)
    assert flipped.lam == 2.0
    assert np.allclose(flipped.potentials.V1, -1.0) and np.allclose(flipped.potentials.gamma, -1.0)
    for lam in (0.0, 3.0):
        assert sign_normalize(problem.with_lambda(lam)).lam == lam
    logger.info("✓ lambda = -2 -> 2 with V = gamma = -1; lambda >= 0 unchanged")

    before = build_context(grid, problem.potentials, problem.nonlinearity)
    after = build_context(grid, flipped.potentials, flipped.nonlinearity)
    rng = np.random.default_rng(2)
    for u in 0.5 * rng.standard_normal((100, before.dim)):
        a, b = psi(before, u, problem.lam), psi(after, u, flipped.lam)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
    logger.info("✓ Psi identical on 100 random states")


def test_cone_test():
    """Zero lies in both cones; v_1 in C-, e in C+; span of the C- basis stays in C-."""
    logger.info("="*60)
    logger.info("Testing cone membership")
    logger.info("="*60)

    ctx = _context()
    seq = solve_pencil(ctx, 5)

    geom0 = locate_lambda(seq, 0.0)
    zero = np.zeros(ctx.dim)
    assert cone_test(geom0, ctx, zero).label == "Both"
    assert cone_test(geom0, ctx, seq.vectors[0]).label == "InCplus"
    logger.info("✓ m = 0: C- = {0}, C+ = everything")

    geom = locate_lambda(seq, 0.5 * (seq.mus[2] + seq.mus[3]))
    assert geom.m == 3
    assert cone_test(geom, ctx, zero).label == "Both"
    assert cone_test(geom, ctx, seq.vectors[0]).label == "InCminus"
    assert cone_test(geom, ctx, geom.e_vector).label == "InCplus"
    logger.info("✓ v_1 in C-, e in C+")

    rng = np.random.default_rng(3)
    assert np.linalg.matrix_rank(geom.basis_minus) == geom.m
    for coeffs in rng.standard_normal((50, geom.m)):
        u = coeffs @ geom.basis_minus
        assert cone_test(geom, ctx, u).in_minus
    logger.info(f"✓ 50 random elements of the {geom.m}-dimensional span lie in C-")


def test_star_failure():
    """No positive J direction: empty mus, explicit flag and a fallback direction."""
    logger.info("="*60)
    logger.info("Testing the empty spectrum")
    logger.info("="*60)

    negative = dict(config.BENCHMARK_POTENTIALS,
                    V1={"family": "constant", "value": -1.0},
                    V2={"family": "constant", "value": -1.0},
                    gamma={"family": "constant", "value": 0.0})
    ctx = _context(negative, n=30, nl=zero_nonlinearity())
    seq = solve_pencil(ctx, 4)
    assert len(seq) == 0 and seq.star_failed
    assert seq.neg_mus.size == ctx.dim
    assert seq.fallback_vector is not None and seq.fallback_vector.shape == (ctx.dim,)
    assert np.isclose(seq.fallback_vector @ (ctx.A @ seq.fallback_vector), 1.0)
    for vec in seq.neg_vectors[:3]:
        assert np.isclose(functional_J(ctx, vec), -1.0, rtol=1e-10)
    logger.info(f"✓ star_failed, {seq.neg_mus.size} negative eigenvalues kept")

    geom = locate_lambda(seq, 1.0)
    assert geom.m == 0 and np.allclose(geom.e_vector, seq.fallback_vector)
    logger.info("✓ locate_lambda falls back to the ground direction")

    silent = dict(config.BENCHMARK_POTENTIALS, V1=0.0, V2=0.0, gamma=0.0)
    seq = solve_pencil(_context(silent, n=20, nl=zero_nonlinearity()), 4)
    assert seq.star_failed and seq.n_zero_modes == 2 * 20
    logger.info("✓ V = gamma = 0: every mode is a zero mode")


def test_sparse_path():
    """Lanczos path agrees with the dense reduction."""
    logger.info("="*60)
    logger.info("Testing the sparse pencil path")
    logger.info("="*60)

    ctx = _context(n=40)
    dense = solve_pencil(ctx, 4)
    cutoff = config.PENCIL_CONFIG["dense_cutoff"]
    config.PENCIL_CONFIG["dense_cutoff"] = 10
    try:
        sparse_seq = solve_pencil(ctx, 4)
    finally:
        config.PENCIL_CONFIG["dense_cutoff"] = cutoff
    assert sparse_seq.method == "sparse"
    assert np.allclose(sparse_seq.mus, dense.mus, rtol=1e-8)
    assert np.all(np.abs(sparse_seq.j_values - 1.0) <= 1e-8)
    logger.info(f"✓ sparse mus = {np.round(sparse_seq.mus, 6)}")


def run_all_tests():
    """Run all tests and generate summary report."""
    logger.info("\n" + "="*60)
    logger.info("PENCIL - TEST SUITE")
    logger.info("="*60 + "\n")

    tests = {
        'benchmark_spectrum': test_benchmark_spectrum,
        'identity_pencil': test_identity_pencil,
        'decoupled_blocks': test_decoupled_blocks,
        'dense_oracle': test_dense_oracle,
        'minmax_oracle': test_minmax_oracle,
        'locate_lambda': test_locate_lambda,
        'sign_normalize': test_sign_normalize,
        'cone_test': test_cone_test,
        'star_failure': test_star_failure,
        'sparse_path': test_sparse_path,
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
