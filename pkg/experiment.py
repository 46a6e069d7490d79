"""
Experiment configuration and result files for the coupled Schrodinger bound-state solver.
Loads and validates JSON experiment configs, builds problem instances and
writes the spectrum, result, profile, sweep and verification files.
"""

import copy
import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from jsonschema import Draft7Validator
from jsonschema.exceptions import ValidationError

import config
from functionals import build_context
from grid import GridSpec, build_grid
from model import (
    POTENTIAL_FAMILIES,
    ProblemSpec,
    SamplingPlan,
    build_potentials,
    power_sum,
    quadratic_nonlinearity,
    quartic_coupled,
    sample_potential,
    zero_nonlinearity,
)
from pencil import sign_normalize
from solver import SolverConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unreadable, schema-invalid or inconsistent experiment configs."""


_FAMILY = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "required": ["family"],
            "properties": {"family": {"enum": sorted(POTENTIAL_FAMILIES)}},
            "additionalProperties": {"type": "number"},
        },
    ]
}

_LAMBDA_ENTRY = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "required": ["mu_index"],
            "properties": {"mu_index": {"type": "integer", "minimum": 1}, "factor": {"type": "number"}},
            "additionalProperties": False,
        },
        {
            "type": "object",
            "required": ["midpoint"],
            "properties": {
                "midpoint": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2}
            },
            "additionalProperties": False,
        },
        {
            "type": "object",
            "required": ["range"],
            "properties": {
                "range": {
                    "type": "object",
                    "required": ["start", "stop", "num"],
                    "properties": {
                        "start": {"type": "number"},
                        "stop": {"type": "number"},
                        "num": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                }
            },
            "additionalProperties": False,
        },
    ]
}

EXPERIMENT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "Coupled Schrodinger experiment",
    "type": "object",
    "properties": {
        "preset": {"enum": sorted(config.PRESETS)},
        "problem": {
            "type": "object",
            "properties": {
                "grid": {
                    "type": "object",
                    "properties": {
                        "dimension": {"type": "integer", "minimum": 1},
                        "radius": {"type": "number", "exclusiveMinimum": 0},
                        "n_nodes": {"type": "integer", "minimum": 2},
                        "mode": {"enum": ["radial", "full_line_1d"]},
                        "corrupt_stencil": {"type": "boolean"},
                    },
                    "additionalProperties": False,
                },
                "potentials": {
                    "type": "object",
                    "properties": {
                        "b1": _FAMILY, "b2": _FAMILY, "V1": _FAMILY, "V2": _FAMILY, "gamma": _FAMILY,
                        "b1_floor": {"type": "number", "exclusiveMinimum": 0},
                        "b2_floor": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "additionalProperties": False,
                },
                "nonlinearity": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["power_sum", "quartic_coupled", "zero", "quadratic"]},
                        "c1": _FAMILY,
                        "c2": _FAMILY,
                        "p1": {"type": "number"},
                        "p2": {"type": "number"},
                        "theta": {"type": "number", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "lambdas": {"type": "array", "items": _LAMBDA_ENTRY, "minItems": 1},
        "solver": {"type": "object"},
        "pencil": {
            "type": "object",
            "properties": {"k_max": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "sampling": {"type": "object"},
        "verify": {"type": "object"},
        "refine": {
            "type": "object",
            "properties": {
                "n_values": {"type": "array", "items": {"type": "integer", "minimum": 2}},
                "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "lambda": _LAMBDA_ENTRY,
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}, "uniqueItems": True},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer"},
    },
    "anyOf": [{"required": ["preset"]}, {"required": ["problem"]}],
    "additionalProperties": False,
}


@dataclass
class ExperimentConfig:
    """A validated experiment: declarative problem, lambda entries and run settings."""
    problem: dict
    lambdas: list
    solver: SolverConfig
    outputs: dict
    seed: int
    k_max: int
    sampling: SamplingPlan
    verify: dict = field(default_factory=dict)
    refine: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    config_hash: str = ""

    @property
    def output_dir(self):
        return Path(self.outputs["dir"])


def config_hash(raw):
    """SHA-256 of the canonical JSON form of a config."""
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_config(raw, out_dir=None, seed=None):
    """
    Validate a config dict and fill defaults.

    Args:
        raw: parsed JSON object
        out_dir: command-line override for outputs.dir
        seed: command-line override for seed

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: on schema violations or inconsistent settings
    """
    errors = sorted(Draft7Validator(EXPERIMENT_SCHEMA).iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        detail = "; ".join(f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors[:5])
        raise ConfigError(f"Config does not match the experiment schema: {detail}")

    base = copy.deepcopy(config.PRESETS[raw["preset"]]) if "preset" in raw else {
        "grid": {k: config.GRID_CONFIG[k] for k in ("dimension", "radius", "n_nodes", "mode")},
        "potentials": copy.deepcopy(config.BENCHMARK_POTENTIALS),
    }
    problem = _merge(base, raw.get("problem"))
    if "nonlinearity" not in problem:
        raise ConfigError("Problem has no nonlinearity block (and no preset supplies one)")

    try:
        solver_cfg = SolverConfig.from_dict(raw.get("solver"))
    except Exception as e:
        raise ConfigError(f"Invalid solver block: {e}") from e

    outputs = {"dir": str(config.OUTPUT_DIR), "formats": list(config.OUTPUT_CONFIG["formats"])}
    outputs.update(raw.get("outputs", {}))
    if out_dir is not None:
        outputs["dir"] = str(out_dir)

    return ExperimentConfig(
        problem=problem,
        lambdas=list(raw.get("lambdas", [])),
        solver=solver_cfg,
        outputs=outputs,
        seed=int(seed if seed is not None else raw.get("seed", config.SAMPLING_CONFIG["seed"])),
        k_max=int(raw.get("pencil", {}).get("k_max", config.PENCIL_CONFIG["k_max"])),
        sampling=SamplingPlan.from_dict(raw.get("sampling")),
        verify=dict(raw.get("verify", {})),
        refine=dict(raw.get("refine", {})),
        raw=raw,
        config_hash=config_hash(raw),
    )


def load_config(path, out_dir=None, seed=None):
    """Read and validate a JSON experiment file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must contain a JSON object")
    logger.info(f"Loaded config: {path}")
    return parse_config(raw, out_dir=out_dir, seed=seed)


# ---------------------------------------------------------------------------
# Problem instances
# ---------------------------------------------------------------------------

@dataclass
class Instance:
    """A sign-normalized problem with its grid and assembled context."""
    problem: ProblemSpec
    grid: object
    ctx: object
    original_lambda: float
    flipped: bool


def build_nonlinearity(grid, block):
    kind = block["kind"]
    theta = float(block.get("theta", 1.0))
    if kind == "power_sum":
        r = grid.interior_nodes
        return power_sum(
            c1=sample_potential(block.get("c1", 1.0), r),
            c2=sample_potential(block.get("c2", 1.0), r),
            p1=float(block.get("p1", 4.0)),
            p2=float(block.get("p2", 4.0)),
            theta=theta,
        )
    if kind == "quartic_coupled":
        return quartic_coupled(theta=theta)
    if kind == "zero":
        return zero_nonlinearity()
    if kind == "quadratic":
        return quadratic_nonlinearity()
    raise ConfigError(f"Unknown nonlinearity kind '{kind}'")


def build_instance(problem, lam=0.0, allow_coarse=False, corrupt_stencil=False, **grid_overrides):
    """
    Build grid, potentials, nonlinearity and context for one lambda.

    The returned problem is sign-normalized (lambda >= 0).
    """
    grid_block = {**problem["grid"], **grid_overrides}
    corrupt = bool(grid_block.pop("corrupt_stencil", False)) or corrupt_stencil
    spec = GridSpec(**grid_block)
    grid = build_grid(spec, allow_coarse=allow_coarse, corrupt_stencil=corrupt)

    potentials = build_potentials(grid, problem["potentials"])
    nl = build_nonlinearity(grid, problem["nonlinearity"])
    spec_problem = ProblemSpec(grid_spec=spec, potentials=potentials, nonlinearity=nl, lam=float(lam))
    spec_problem.validate()

    normalized = sign_normalize(spec_problem)
    ctx = build_context(grid, normalized.potentials, nl)
    return Instance(problem=normalized, grid=grid, ctx=ctx, original_lambda=float(lam),
                    flipped=normalized is not spec_problem)


def resolve_lambdas(entries, mus):
    """
    Expand lambda entries into floats.

    Args:
        entries: numbers, {"mu_index", "factor"}, {"midpoint": [i, j]} or {"range": {...}}
        mus: positive pencil eigenvalues of the unflipped problem (1-based indices)

    Returns:
        list of floats
    """
    def mu(index):
        if not 1 <= index <= len(mus):
            raise ConfigError(f"mu_{index} requested but only {len(mus)} eigenvalues computed; increase k_max")
        return float(mus[index - 1])

    values = []
    for entry in entries:
        if isinstance(entry, (int, float)):
            values.append(float(entry))
        elif "mu_index" in entry:
            values.append(float(entry.get("factor", 1.0)) * mu(entry["mu_index"]))
        elif "midpoint" in entry:
            i, j = entry["midpoint"]
            values.append(0.5 * (mu(i) + mu(j)))
        elif "range" in entry:
            spec = entry["range"]
            values.extend(float(x) for x in np.linspace(spec["start"], spec["stop"], spec["num"]))
        else:
            raise ConfigError(f"Unrecognized lambda entry: {entry}")
    return values


def needs_spectrum(entries):
    return any(isinstance(e, dict) and ("mu_index" in e or "midpoint" in e) for e in entries)


def lambda_tag(lam, used=None):
    """File tag for a lambda value, unique within `used`."""
    tag = f"{lam:.6g}".replace("+", "")
    if used is not None:
        base, k = tag, 1
        while tag in used:
            k += 1
            tag = f"{base}_{k}"
        used.add(tag)
    return tag


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def jsonable(obj):
    """Plain JSON types; floats kept to 17 significant digits, non-finite values as null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not np.isfinite(value):
            return None
        return float(format(value, f".{config.OUTPUT_CONFIG['float_digits']}g"))
    if isinstance(obj, Path):
        return str(obj)
    return obj


def stamp(payload, cfg):
    """Embed application version and config hash in an output record."""
    return {"app": config.APP_NAME, "version": config.APP_VERSION, "config_hash": cfg.config_hash, **payload}


def write_json(path, payload):
    path = Path(path)
    config.ensure_directories(path.parent)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote {path}")
    return path


def _fmt(value):
    return format(float(value), f".{config.OUTPUT_CONFIG['float_digits']}g")


def write_profile(path, grid, state):
    """
    CSV with header r, u1, u2 on the first line, then every mesh node (zeros on
    the Dirichlet boundary). The config hash lives in the matching result JSON.
    """
    path = Path(path)
    config.ensure_directories(path.parent)
    u1 = grid.extend(state.u1)
    u2 = grid.extend(state.u2)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["r", "u1", "u2"])
        for r, a, b in zip(grid.nodes, u1, u2):
            writer.writerow([_fmt(r), _fmt(a), _fmt(b)])
    logger.info(f"Wrote {path}")
    return path


SWEEP_COLUMNS = ["lambda", "m", "level", "residual", "u1_norm", "u2_norm", "iterations", "status"]


def write_sweep(path, rows):
    """Summary table, one row per lambda entry."""
    path = Path(path)
    config.ensure_directories(path.parent)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({
                key: (_fmt(row[key]) if isinstance(row.get(key), float) else row.get(key, ""))
                for key in SWEEP_COLUMNS
            })
    logger.info(f"Wrote {path}")
    return path
