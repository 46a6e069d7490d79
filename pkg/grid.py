"""
Grid module for the coupled Schrodinger bound-state solver.
Builds the truncated radial (any dimension N) or full-line 1D mesh together with
its stiffness form, lumped mass form and quadrature weights.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sparse
from scipy.special import gamma as gamma_fn

import config

logger = logging.getLogger(__name__)

RADIAL = "radial"
FULL_LINE_1D = "full_line_1d"
MODES = (RADIAL, FULL_LINE_1D)

# Off-diagonal scale applied by the negative-control build
CORRUPTION_FACTOR = 0.9


class GridError(ValueError):
    """Raised for an invalid grid specification or a mismatched nodal vector."""


def sphere_area(dimension):
    """Surface area of the unit sphere S^{N-1} (2 for N = 1, 2*pi for N = 2, 4*pi for N = 3)."""
    return 2.0 * np.pi ** (dimension / 2.0) / gamma_fn(dimension / 2.0)


@dataclass(frozen=True)
class GridSpec:
    """
    Truncated mesh description.

    Attributes:
        dimension: spatial dimension N of R^N (N >= 1)
        radius: truncation radius R_max
        n_nodes: number of cells per half-axis (h = R_max / n_nodes)
        mode: RADIAL or FULL_LINE_1D
    """
    dimension: int
    radius: float
    n_nodes: int
    mode: str = RADIAL

    @property
    def spacing(self):
        return self.radius / self.n_nodes

    def validate(self, min_nodes=None):
        """
        Check the grid invariants.

        Args:
            min_nodes: smallest admissible n_nodes (defaults to config.GRID_CONFIG["min_nodes"])

        Raises:
            GridError: if any invariant is violated
        """
        if min_nodes is None:
            min_nodes = config.GRID_CONFIG["min_nodes"]
        if self.mode not in MODES:
            raise GridError(f"Unknown grid mode '{self.mode}' (expected one of {MODES})")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise GridError(f"Dimension must be an integer >= 1, got {self.dimension}")
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise GridError(f"Truncation radius must be positive, got {self.radius}")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < min_nodes:
            raise GridError(f"n_nodes must be an integer >= {min_nodes}, got {self.n_nodes}")
        if self.mode == FULL_LINE_1D and self.dimension != 1:
            raise GridError(f"Full-line mode requires dimension 1, got {self.dimension}")

    def with_changes(self, **changes):
        """Return a copy with some fields replaced (refinement studies)."""
        return replace(self, **changes)

    def to_dict(self):
        return {
            "dimension": int(self.dimension),
            "radius": float(self.radius),
            "n_nodes": int(self.n_nodes),
            "mode": self.mode,
        }


@dataclass(frozen=True, eq=False)
class Grid:
    """
    Immutable discretization shared read-only by every other module.

    nodes and quad_weights cover the whole mesh including the Dirichlet
    boundary node(s); interior indexes the unknowns. stiffness and mass act
    on the unknowns only.
    """
    spec: GridSpec
    nodes: np.ndarray
    quad_weights: np.ndarray
    interior: np.ndarray
    stiffness: sparse.csr_matrix
    mass: sparse.dia_matrix
    edge_coefficients: np.ndarray

    @property
    def n_unknowns(self):
        return int(self.interior.size)

    @property
    def interior_nodes(self):
        return self.nodes[self.interior]

    @property
    def interior_weights(self):
        return self.quad_weights[self.interior]

    def extend(self, values):
        """Pad a vector of unknowns with the homogeneous Dirichlet values."""
        full = np.zeros(self.nodes.size)
        full[self.interior] = values
        return full


def _radial_layout(spec):
    h = spec.spacing
    n = spec.n_nodes
    dim = spec.dimension
    area = sphere_area(dim)

    nodes = h * np.arange(n + 1)
    # Control volumes [r_i - h/2, r_i + h/2] clipped to [0, R]; positive at r = 0 for every N
    lower = np.clip(nodes - 0.5 * h, 0.0, spec.radius)
    upper = np.clip(nodes + 0.5 * h, 0.0, spec.radius)
    weights = area * (upper ** dim - lower ** dim) / dim

    # Flux through the cell face r_{i+1/2}; the face at r = 0 carries no flux
    midpoints = h * (np.arange(n) + 0.5)
    edges = area * midpoints ** (dim - 1) / h

    interior = np.arange(n)
    return nodes, weights, interior, edges


def _full_line_layout(spec):
    h = spec.spacing
    n = spec.n_nodes

    nodes = -spec.radius + h * np.arange(2 * n + 1)
    weights = np.full(nodes.size, h)
    weights[0] = weights[-1] = 0.5 * h

    edges = np.full(2 * n, 1.0 / h)
    interior = np.arange(1, 2 * n)
    return nodes, weights, interior, edges


def _assemble_stiffness(spec, edges, n_unknowns, corrupt_stencil):
    """
    Assemble K from the edge coefficients so that v^T K v = sum_e a_e (v_left - v_right)^2.

    IMPORTANT: both ends of every edge touching a Dirichlet node contribute only
    to the diagonal, which keeps K symmetric positive semidefinite by construction.
    """
    if spec.mode == RADIAL:
        # Edge i joins unknowns i and i + 1; the last edge reaches the Dirichlet node
        diag = edges.copy()
        diag[1:] += edges[:-1]
        off = -edges[:-1]
    else:
        # Edge j joins mesh nodes j and j + 1; unknown k sits at mesh node k + 1
        diag = edges[:-1] + edges[1:]
        off = -edges[1:-1]

    if corrupt_stencil:
        logger.warning("Building grid with a corrupted stencil (negative control)")
        off = off * CORRUPTION_FACTOR

    stiffness = sparse.diags([off, diag, off], [-1, 0, 1], shape=(n_unknowns, n_unknowns))
    return stiffness.tocsr()


def build_grid(spec, allow_coarse=False, corrupt_stencil=False):
    """
    Build the mesh, quadrature and forms for a grid specification.

    Args:
        spec: GridSpec
        allow_coarse: accept n_nodes down to config.GRID_CONFIG["coarse_min_nodes"]
            (oracle-sized instances for verification only)
        corrupt_stencil: scale the stiffness off-diagonals (negative control)

    Returns:
        Grid

    Raises:
        GridError: on an invalid spec
    """
    min_nodes = config.GRID_CONFIG["coarse_min_nodes"] if allow_coarse else config.GRID_CONFIG["min_nodes"]
    spec.validate(min_nodes=min_nodes)

    if spec.mode == RADIAL:
        nodes, weights, interior, edges = _radial_layout(spec)
    else:
        nodes, weights, interior, edges = _full_line_layout(spec)

    stiffness = _assemble_stiffness(spec, edges, interior.size, corrupt_stencil)
    mass = sparse.diags(weights[interior])

    grid = Grid(
        spec=spec,
        nodes=nodes,
        quad_weights=weights,
        interior=interior,
        stiffness=stiffness,
        mass=mass,
        edge_coefficients=edges,
    )
    logger.info(
        f"Grid built: mode={spec.mode}, N={spec.dimension}, R={spec.radius}, "
        f"h={spec.spacing:.4g}, unknowns={grid.n_unknowns}"
    )
    return grid


def weighted_integral(grid, f_nodal):
    """
    Quadrature sum_i w_i f_i.

    Args:
        grid: Grid
        f_nodal: values on every mesh node, or on the unknowns only
            (Dirichlet nodes then contribute zero)

    Returns:
        float

    Raises:
        GridError: on a length mismatch
    """
    values = np.asarray(f_nodal, dtype=float)
    if values.shape == grid.nodes.shape:
        return float(np.dot(grid.quad_weights, values))
    if values.shape == (grid.n_unknowns,):
        return float(np.dot(grid.interior_weights, values))
    raise GridError(
        f"Nodal vector of length {values.size} matches neither the mesh ({grid.nodes.size}) "
        f"nor the unknowns ({grid.n_unknowns})"
    )


def refinement_study(solve_level, base_spec, n_values=(), radii=()):
    """
    Re-run a level computation on refined meshes and report relative drift.

    Args:
        solve_level: callable GridSpec -> float (typically the accepted critical level)
        base_spec: reference GridSpec
        n_values: alternative n_nodes values
        radii: alternative truncation radii

    Returns:
        list of dicts with the spec, the level and its drift relative to the base level
    """
    base_level = solve_level(base_spec)
    rows = [{"spec": base_spec.to_dict(), "level": base_level, "relative_drift": 0.0}]

    variants = [base_spec.with_changes(n_nodes=n) for n in n_values]
    variants += [base_spec.with_changes(radius=r) for r in radii]
    for variant in variants:
        level = solve_level(variant)
        drift = abs(level - base_level) / max(abs(base_level), np.finfo(float).tiny)
        logger.info(f"Refinement: n={variant.n_nodes}, R={variant.radius} -> level {level:.10g} (drift {drift:.3e})")
        rows.append({"spec": variant.to_dict(), "level": level, "relative_drift": drift})
    return rows
