"""
Configuration module for the coupled Schrodinger bound-state solver.
Centralizes numerical defaults, sampling plans, output locations and logging.
"""

import os
from pathlib import Path

# Load environment variables from .env file
try:
    from dotenv import load_dotenv
    env_path = Path(__file__).parent / '.env'
    if env_path.exists():
        load_dotenv(dotenv_path=env_path)
except ImportError:
    pass

APP_NAME = "schro-link"
APP_VERSION = "1.0.0"

# Base directory
BASE_DIR = Path(__file__).parent.absolute()

# IMPORTANT: Output and log directories - overridable from environment or .env file
OUTPUT_DIR = Path(os.getenv("SCHRO_OUTPUT_DIR", BASE_DIR / "results"))
LOG_DIR = Path(os.getenv("SCHRO_LOG_DIR", BASE_DIR / "logs"))
CONFIG_DIR = BASE_DIR / "configs"

# Grid defaults (truncated radial / full-line mesh)
GRID_CONFIG = {
    "dimension": 3,
    "radius": 12.0,
    "n_nodes": 400,
    "mode": "radial",
    "min_nodes": 8,
    "coarse_min_nodes": 2,
}

# IMPORTANT: Pencil settings - dense Cholesky reduction below the cutoff, sparse Lanczos above
PENCIL_CONFIG = {
    "k_max": 12,
    "dense_cutoff": 2000,
    "zero_mode_tol": 1e-12,
    "resonance_tol": 1e-9,
    "oracle_max_dim": 12,
    "oracle_samples": 200,
    "oracle_refine_iters": 500,
}

# Solver defaults (see solver.SolverConfig)
SOLVER_CONFIG = {
    "r_plus": None,
    "r_minus": None,
    "flow_step": 1.0,
    "max_iters": 400,
    "residual_tol": 1e-10,
    "newton_switch_tol": 1e-3,
    "multistart": 4,
    "path_points": 33,
    "armijo_c": 1e-4,
    "min_step": 1e-12,
    "newton_max_iters": 40,
    "peak_iters": 300,
    "mesh_iters": 100,
    "probe_count": 64,
    "probe_refine_iters": 150,
    "plus_radii": [1e-3, 10.0, 31],
    "minus_growth": 1.25,
    "minus_cap": 1e4,
    "trivial_norm": 1e-8,
    "mesh_radial": 6,
    "mesh_angular": 9,
}

# IMPORTANT: Hypothesis sampling plan - certificates at desk scale, never proofs
SAMPLING_CONFIG = {
    "n_directions": 16,
    "large_radii": [1.0, 1e3, 31],
    "small_radii": [1e-6, 1e-2, 9],
    "mid_radii": [1e-2, 1e2, 9],
    "eta_points": 101,
    "max_nodes": 64,
    "growth_slope_min": 0.05,
    "floor_tol": 1e-12,
    "seed": 0,
}

# Verification suite defaults
VERIFY_CONFIG = {
    "fd_samples": 1000,
    "fd_tol": 1e-6,
    "lemma_samples": 1000,
    "lemma_tol": -1e-10,
    "remark1_samples": 10000,
    "sandwich_probes": 200,
    "consistency_tol": 1e-8,
    "oracle_instances": 20,
    "coarse_nodes": 6,
    "brute_force_seeds": 400,
    "match_tol": 1e-6,
}

# Output formats
OUTPUT_CONFIG = {
    "formats": ["json", "csv"],
    "float_digits": 17,
    "workers": int(os.getenv("SCHRO_WORKERS", "1")),
}

# Logging Configuration
LOG_CONFIG = {
    "file": LOG_DIR / "solver.log",
    "level": os.getenv("SCHRO_LOG_LEVEL", "INFO"),
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
}

# File naming patterns
FILE_PATTERNS = {
    "spectrum": "spectrum.json",
    "result": "result_{tag}.json",
    "profile": "profile_{tag}.csv",
    "sweep": "sweep.csv",
    "verification": "verification.json",
    "refinement": "refinement.json",
}

# IMPORTANT: Benchmark presets - b_i = 1 + r^2 satisfies the coercivity clause of (B) verbatim
BENCHMARK_POTENTIALS = {
    "b1": {"family": "harmonic", "offset": 1.0, "curvature": 1.0},
    "b2": {"family": "harmonic", "offset": 1.0, "curvature": 1.0},
    "V1": {"family": "constant", "value": 1.0},
    "V2": {"family": "constant", "value": 1.0},
    "gamma": {"family": "constant", "value": 1.0},
    "b1_floor": 1.0,
    "b2_floor": 1.0,
}

PRESETS = {
    "eq1.10": {
        "grid": {"dimension": 3, "radius": 12.0, "n_nodes": 400, "mode": "radial"},
        "potentials": BENCHMARK_POTENTIALS,
        "nonlinearity": {
            "kind": "power_sum",
            "c1": {"family": "constant", "value": 1.0},
            "c2": {"family": "constant", "value": 1.0},
            "p1": 4.0,
            "p2": 3.0,
            "theta": 1.0,
        },
    },
    "eq1.11": {
        "grid": {"dimension": 3, "radius": 12.0, "n_nodes": 400, "mode": "radial"},
        "potentials": BENCHMARK_POTENTIALS,
        "nonlinearity": {"kind": "quartic_coupled", "theta": 1.0},
    },
}


def ensure_directories(*paths):
    """Create output/log directories on demand (never at import time)."""
    for path in paths:
        Path(path).mkdir(parents=True, exist_ok=True)
