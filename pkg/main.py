"""
Main orchestrator for the coupled Schrodinger bound-state solver.
Runs the spectrum, solve, verify and refine stages of a JSON experiment config.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

import config
from experiment import (
    ConfigError,
    build_instance,
    lambda_tag,
    load_config,
    needs_spectrum,
    resolve_lambdas,
    stamp,
    write_json,
    write_profile,
    write_sweep,
)
from functionals import ContextError
from grid import GridError, refinement_study
from model import ModelError, check_hypotheses
from pencil import PencilError, solve_pencil
from solver import SolverError, find_critical_point
from verify import VerificationError, linking_sandwich, residual_check, run_verification

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Failures recorded per lambda entry instead of aborting the run
RECOVERABLE = (PencilError, SolverError, ContextError, ModelError, GridError, VerificationError)


def setup_logging():
    """Configure file + stdout logging from config.LOG_CONFIG."""
    config.ensure_directories(config.LOG_DIR)
    logging.basicConfig(
        level=getattr(logging, str(config.LOG_CONFIG["level"]).upper(), logging.INFO),
        format=config.LOG_CONFIG["format"],
        handlers=[
            logging.FileHandler(config.LOG_CONFIG["file"]),
            logging.StreamHandler(sys.stdout),
        ],
    )


class ExperimentRunner:
    """
    IMPORTANT: Orchestrates one experiment config through the pipeline:
    1. Build the problem (grid, potentials, nonlinearity, context)
    2. Solve the pencil and locate each lambda in the spectrum
    3. Estimate the linking radii and run mountain pass (m = 0) or linking (m >= 1)
    4. Refine with Newton and verify the accepted point
    5. Write JSON records stamped with the config hash, plus CSV profiles
    """

    def __init__(self, experiment, workers=None):
        """
        Args:
            experiment: ExperimentConfig
            workers: worker threads for lambda entries (default OUTPUT_CONFIG["workers"])
        """
        self.experiment = experiment
        self.workers = max(1, int(workers or config.OUTPUT_CONFIG["workers"]))
        self.out_dir = experiment.output_dir

        logger.info("=" * 60)
        logger.info(f"{config.APP_NAME} {config.APP_VERSION}")
        logger.info(f"Config hash: {experiment.config_hash}")
        logger.info(f"Output directory: {self.out_dir}")
        logger.info("=" * 60)

    def _base_instance(self):
        return build_instance(self.experiment.problem, 0.0)

    def _lambdas(self):
        entries = self.experiment.lambdas
        if not entries:
            raise ConfigError("No lambda entries configured")
        mus = []
        if needs_spectrum(entries):
            mus = solve_pencil(self._base_instance().ctx, self.experiment.k_max).mus
        return resolve_lambdas(entries, mus)

    def run_spectrum(self):
        """
        Solve the pencil of the configured problem and write spectrum.json.

        Returns:
            exit code (0 even when (**) fails; the record carries the flag)
        """
        logger.info("=" * 60)
        logger.info("Stage: spectrum")
        logger.info("=" * 60)

        instance = self._base_instance()
        hypotheses = check_hypotheses(instance.problem, self.experiment.sampling)
        seq = solve_pencil(instance.ctx, self.experiment.k_max)
        if seq.star_failed:
            logger.warning("Spectrum empty: V1 <= 0 and V2 <= 0 discretely")

        payload = stamp({
            "grid": instance.grid.spec.to_dict(),
            "spectrum": seq.to_dict(),
            "star_check": hypotheses.to_dict()["star"],
        }, self.experiment)
        write_json(self.out_dir / config.FILE_PATTERNS["spectrum"], payload)
        return EXIT_OK

    def _solve_one(self, index, lam):
        """Solve a single lambda entry; never raises for recoverable failures."""
        rng = np.random.default_rng([self.experiment.seed, index])
        record = {"lambda": lam, "status": "failed"}
        try:
            instance = build_instance(self.experiment.problem, lam)
            record.update(normalized_lambda=instance.problem.lam, sign_flipped=instance.flipped)
            seq = solve_pencil(instance.ctx, self.experiment.k_max)
            point = find_critical_point(instance.ctx, instance.problem.lam, self.experiment.solver, seq, rng)
            res1, res2 = residual_check(instance.ctx, point.vector, instance.problem.lam)
            sandwich = linking_sandwich(instance.ctx, point, rng=rng)
            record.update(
                status="ok",
                mu_bracket=point.geom.to_dict(),
                point=point.to_dict(),
                residual_check=[res1, res2],
                linking_sandwich=vars(sandwich),
            )
            return record, instance, point
        except RECOVERABLE as e:
            logger.error(f"lambda={lam}: {type(e).__name__}: {e}")
            record.update(error=str(e), error_type=type(e).__name__)
            return record, None, None

    def run_solve(self):
        """
        Solve every lambda entry (worker pool) and write results, profiles and sweep.csv.

        Returns:
            exit code: 1 if every entry failed, 0 otherwise
        """
        logger.info("=" * 60)
        logger.info("Stage: solve")
        logger.info("=" * 60)

        lambdas = self._lambdas()
        logger.info(f"Solving {len(lambdas)} lambda entries with {self.workers} worker(s)")
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            outcomes = list(pool.map(self._solve_one, range(len(lambdas)), lambdas))

        formats = self.experiment.outputs["formats"]
        used_tags = set()
        rows = []
        for (record, instance, point), lam in zip(outcomes, lambdas):
            tag = lambda_tag(lam, used_tags)
            profile = config.FILE_PATTERNS["profile"].format(tag=tag)
            if point is not None and "csv" in formats:
                write_profile(self.out_dir / profile, instance.grid, point.state)
                record["profile"] = profile
            if "json" in formats:
                write_json(self.out_dir / config.FILE_PATTERNS["result"].format(tag=tag), stamp(record, self.experiment))
            rows.append({
                "lambda": float(lam),
                "m": point.m if point else "",
                "level": point.level if point else "",
                "residual": point.residual if point else "",
                "u1_norm": point.component_norms[0] if point else "",
                "u2_norm": point.component_norms[1] if point else "",
                "iterations": point.iterations if point else "",
                "status": record["status"] if point else record.get("error_type", "failed"),
            })
        if "csv" in formats:
            write_sweep(self.out_dir / config.FILE_PATTERNS["sweep"], rows)

        succeeded = sum(1 for record, _, _ in outcomes if record["status"] == "ok")
        logger.info("=" * 60)
        logger.info(f"Solve summary: {succeeded}/{len(outcomes)} lambda entries succeeded")
        logger.info("=" * 60)
        return EXIT_OK if succeeded else EXIT_FAILURE

    def run_verify(self):
        """
        Run every verification suite on the configured problem.

        Returns:
            exit code: 0 if all suites pass, 1 otherwise
        """
        logger.info("=" * 60)
        logger.info("Stage: verify")
        logger.info("=" * 60)

        lam = self._lambdas()[0] if self.experiment.lambdas else 0.0
        rng = np.random.default_rng([self.experiment.seed, 0])
        instance = build_instance(self.experiment.problem, lam)
        hypotheses = check_hypotheses(instance.problem, self.experiment.sampling)

        point = None
        solve_error = None
        try:
            point = find_critical_point(instance.ctx, instance.problem.lam, self.experiment.solver, rng=rng)
        except RECOVERABLE as e:
            solve_error = f"{type(e).__name__}: {e}"
            logger.error(f"Solve for verification failed: {solve_error}")

        small_ctx = None
        try:
            coarse = self.experiment.verify.get("coarse_nodes", config.VERIFY_CONFIG["coarse_nodes"])
            small_ctx = build_instance(self.experiment.problem, lam, allow_coarse=True, n_nodes=coarse).ctx
        except RECOVERABLE as e:
            logger.error(f"Coarse instance unavailable: {e}")

        report = run_verification(instance.ctx, instance.problem.lam, point=point, small_ctx=small_ctx,
                                  hypotheses=hypotheses, settings=self.experiment.verify,
                                  seed=self.experiment.seed)
        if solve_error is not None:
            report.add("solve", False, error=solve_error)

        write_json(self.out_dir / config.FILE_PATTERNS["verification"],
                   stamp({"lambda": lam, **report.to_dict()}, self.experiment))
        logger.info(f"Verification {'PASSED' if report.passed else 'FAILED'}")
        return EXIT_OK if report.passed else EXIT_FAILURE

    def run_refine(self):
        """Re-solve on refined meshes / radii and write refinement.json with level drift."""
        logger.info("=" * 60)
        logger.info("Stage: refine")
        logger.info("=" * 60)

        settings = self.experiment.refine
        entry = settings.get("lambda", self.experiment.lambdas[0] if self.experiment.lambdas else 0.0)
        mus = []
        if needs_spectrum([entry]):
            mus = solve_pencil(self._base_instance().ctx, self.experiment.k_max).mus
        lam = resolve_lambdas([entry], mus)[0]
        base = self._base_instance().grid.spec

        def solve_level(spec):
            instance = build_instance(self.experiment.problem, lam, n_nodes=spec.n_nodes, radius=spec.radius)
            rng = np.random.default_rng([self.experiment.seed, 0])
            return find_critical_point(instance.ctx, instance.problem.lam, self.experiment.solver, rng=rng).level

        try:
            rows = refinement_study(solve_level, base, settings.get("n_values", ()), settings.get("radii", ()))
        except RECOVERABLE as e:
            logger.error(f"Refinement study failed: {e}")
            return EXIT_FAILURE
        write_json(self.out_dir / config.FILE_PATTERNS["refinement"],
                   stamp({"lambda": lam, "rows": rows}, self.experiment))
        return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog=config.APP_NAME,
        description="Bound states of coupled Schrodinger systems via linking",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("spectrum", "solve the eigenvalue pencil and write spectrum.json"),
        ("solve", "solve every lambda entry and write results, profiles and sweep.csv"),
        ("verify", "run the verification suites and write verification.json"),
        ("refine", "mesh/radius refinement study of the critical level"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to a JSON experiment config")
        cmd.add_argument("--out", default=None, help="output directory (overrides outputs.dir)")
        cmd.add_argument("--seed", type=int, default=None, help="random seed (overrides config seed)")
        cmd.add_argument("--workers", type=int, default=None, help="worker threads for lambda entries")
    return parser


def main(argv=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    setup_logging()
    try:
        experiment = load_config(args.config, out_dir=args.out, seed=args.seed)
        runner = ExperimentRunner(experiment, workers=args.workers)
        stage = {
            "spectrum": runner.run_spectrum,
            "solve": runner.run_solve,
            "verify": runner.run_verify,
            "refine": runner.run_refine,
        }[args.command]
        return stage()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except RECOVERABLE as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return EXIT_FAILURE
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
