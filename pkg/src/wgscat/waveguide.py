"""Waveguide model: transverse modes, thresholds, potential factors, grid.

The guide is ``Sigma x R`` with Dirichlet boundary on the cross-section
``Sigma``.  Everything downstream lives on a composite quadrature grid over
``supp V = Sigma x [a, b]`` with the symmetric weighting convention: a
kernel operator ``K`` is stored as ``M[I, J] = sqrt(w_I) K(node_I, node_J)
sqrt(w_J)`` so matrix adjoints represent operator adjoints, and
multiplication operators are diagonal.

Composite index convention: ``I = i_omega * n_x + k_x`` (transverse index
major, longitudinal minor).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ModelError

MODEL_SCHEMA_VERSION = 1

ORTHONORMALITY_TOL = 1e-8


# ---------------------------------------------------------------------------
# Cross-sections and transverse modes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransverseMode:
    """Dirichlet eigenpair sampled on the transverse quadrature nodes."""

    index: int              # 1-based position in the sorted eigenvalue list
    eigenvalue: float
    samples: np.ndarray     # f_n at the transverse nodes (unweighted)


@dataclass(frozen=True)
class Interval:
    """Cross-section ``(0, length)``; modes are Dirichlet sines."""

    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ModelError("interval length must be positive")

    def transverse_rule(self, n_omega: int):
        # Dirichlet lattice (interior trapezoid rule): orthonormalizes the
        # sine modes n <= n_omega exactly and keeps mode sectors decoupled
        # on the grid.
        nodes, weights = dirichlet_lattice(self.length, n_omega)
        return nodes.reshape(-1, 1), weights

    def eigenvalue(self, n: int) -> float:
        return (n * math.pi / self.length) ** 2

    def modes(self, n_max: int, nodes: np.ndarray) -> list[TransverseMode]:
        om = nodes[:, 0]
        out = []
        for n in range(1, n_max + 1):
            f = math.sqrt(2.0 / self.length) * np.sin(n * math.pi * om / self.length)
            out.append(TransverseMode(n, self.eigenvalue(n), f))
        return out


@dataclass(frozen=True)
class Rectangle:
    """Cross-section ``(0, l1) x (0, l2)``; modes are sine products.

    Eigenvalues sort ascending with lexicographic ``(p, q)`` tie order.
    """

    l1: float
    l2: float

    def __post_init__(self):
        if self.l1 <= 0 or self.l2 <= 0:
            raise ModelError("rectangle sides must be positive")

    def transverse_rule(self, n_omega: int):
        # n_omega points per axis, Dirichlet lattice on each
        n1, w1 = dirichlet_lattice(self.l1, n_omega)
        n2, w2 = dirichlet_lattice(self.l2, n_omega)
        nodes = np.array([(a, b) for a in n1 for b in n2])
        weights = np.array([wa * wb for wa in w1 for wb in w2])
        return nodes, weights

    def _pairs(self, count: int) -> list[tuple[float, int, int]]:
        kmax = max(4, int(math.isqrt(count)) + 4)
        items = [
            ((p * math.pi / self.l1) ** 2 + (q * math.pi / self.l2) ** 2, p, q)
            for p in range(1, kmax + 1)
            for q in range(1, kmax + 1)
        ]
        items.sort()
        return items[:count]

    def eigenvalue(self, n: int) -> float:
        return self._pairs(n)[n - 1][0]

    def modes(self, n_max: int, nodes: np.ndarray) -> list[TransverseMode]:
        out = []
        for idx, (lam, p, q) in enumerate(self._pairs(n_max), start=1):
            f = (
                math.sqrt(2.0 / self.l1)
                * np.sin(p * math.pi * nodes[:, 0] / self.l1)
                * math.sqrt(2.0 / self.l2)
                * np.sin(q * math.pi * nodes[:, 1] / self.l2)
            )
            out.append(TransverseMode(idx, lam, f))
        return out


@dataclass(frozen=True)
class Custom:
    """User-supplied transverse data: quadrature rule plus eigenpairs.

    ``samples[k]`` holds eigenfunction ``k`` at the supplied nodes; the
    eigenvalues must be nondecreasing and the eigenfunctions orthonormal
    under the supplied rule to 1e-8.
    """

    nodes: np.ndarray
    weights: np.ndarray
    eigenvalues: tuple[float, ...]
    samples: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        if nodes.shape[0] == 1 and nodes.shape[1] > 1 and np.asarray(self.weights).size != 1:
            nodes = nodes.T
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        ev = np.asarray(self.eigenvalues, dtype=float)
        if np.any(np.diff(ev) < 0):
            raise ModelError("custom eigenvalues must be nondecreasing")
        if self.samples.shape != (ev.size, self.weights.size):
            raise DimensionError("samples must be (n_modes, n_nodes)")
        gram = np.einsum("i,ki,li->kl", self.weights, self.samples, self.samples)
        if np.max(np.abs(gram - np.eye(ev.size))) > ORTHONORMALITY_TOL:
            raise ModelError("custom eigenfunctions are not orthonormal under the rule")

    def transverse_rule(self, n_omega: int):
        # the supplied rule is authoritative; n_omega is ignored
        return self.nodes, self.weights

    def eigenvalue(self, n: int) -> float:
        ev = self.eigenvalues
        if n <= len(ev):
            return float(ev[n - 1])
        # best-effort extrapolation flag: repeat the last supplied value
        return float(ev[-1])

    def modes(self, n_max: int, nodes: np.ndarray) -> list[TransverseMode]:
        if n_max > len(self.eigenvalues):
            raise ModelError("custom cross-section has too few supplied modes")
        return [
            TransverseMode(n, float(self.eigenvalues[n - 1]), self.samples[n - 1])
            for n in range(1, n_max + 1)
        ]


@dataclass(frozen=True)
class ThresholdGroup:
    """A threshold value with the indices of all modes degenerate with it."""

    value: float
    members: tuple[int, ...]


def threshold_groups(
    modes: Sequence[TransverseMode], degeneracy_tol: float | None = None
) -> list[ThresholdGroup]:
    """Greedy clustering of sorted eigenvalues into degeneracy groups."""
    groups: list[ThresholdGroup] = []
    current: list[int] = []
    anchor = None
    for m in modes:
        tol = degeneracy_tol if degeneracy_tol is not None else 1e-9 * max(1.0, abs(m.eigenvalue))
        if anchor is not None and abs(m.eigenvalue - anchor) <= tol:
            current.append(m.index)
        else:
            if current:
                groups.append(ThresholdGroup(anchor, tuple(current)))
            anchor = m.eigenvalue
            current = [m.index]
    if current:
        groups.append(ThresholdGroup(anchor, tuple(current)))
    return groups


# ---------------------------------------------------------------------------
# Quadrature grid
# ---------------------------------------------------------------------------

def dirichlet_lattice(length: float, n_nodes: int):
    """Interior equispaced rule on ``(0, length)`` with uniform weights.

    For Dirichlet sine modes this rule is exact for all inner products
    ``<f_m, f_n>`` with ``m, n <= n_nodes`` (discrete sine orthogonality).
    """
    if n_nodes < 2:
        raise DimensionError("need at least 2 transverse nodes")
    h = length / (n_nodes + 1)
    nodes = h * np.arange(1, n_nodes + 1)
    weights = np.full(n_nodes, h)
    return nodes, weights


def gauss_legendre_panels(a: float, b: float, n_nodes: int, n_panels: int = 1):
    """Composite Gauss-Legendre rule: ``n_nodes`` total over equal panels."""
    if n_nodes < 2:
        raise DimensionError("need at least 2 nodes")
    if n_panels < 1 or n_nodes % n_panels != 0:
        raise DimensionError("n_nodes must split evenly across panels")
    per = n_nodes // n_panels
    x_ref, w_ref = np.polynomial.legendre.leggauss(per)
    nodes, weights = [], []
    edges = np.linspace(a, b, n_panels + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = (hi - lo) / 2.0
        nodes.append(lo + half * (x_ref + 1.0))
        weights.append(half * w_ref)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class Grid:
    """Composite quadrature over ``Sigma x [a, b]``."""

    omega_nodes: np.ndarray    # (n_omega, d-1)
    omega_weights: np.ndarray  # (n_omega,)
    x_nodes: np.ndarray        # (n_x,)
    x_weights: np.ndarray      # (n_x,)
    support: tuple[float, float]

    def __post_init__(self):
        if np.any(self.omega_weights <= 0) or np.any(self.x_weights <= 0):
            raise ModelError("quadrature weights must be positive")

    @property
    def n_omega(self) -> int:
        return self.omega_weights.size

    @property
    def n_x(self) -> int:
        return self.x_weights.size

    @property
    def dim(self) -> int:
        return self.n_omega * self.n_x

    def composite_weights(self) -> np.ndarray:
        return np.kron(self.omega_weights, self.x_weights)

    def composite_sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.composite_weights())


def build_grid(cross_section, support: tuple[float, float], n_omega: int, n_x: int,
               n_panels: int = 1) -> Grid:
    """Grid for ``supp V``: transverse rule from the cross-section kind,
    Gauss-Legendre panels longitudinally on ``[a, b]``."""
    a, b = support
    if not b > a:
        raise ModelError("support box must have positive length")
    om_nodes, om_weights = cross_section.transverse_rule(n_omega)
    x_nodes, x_weights = gauss_legendre_panels(a, b, n_x, n_panels)
    return Grid(om_nodes, om_weights, x_nodes, x_weights, (float(a), float(b)))


# ---------------------------------------------------------------------------
# Potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialModel:
    """Pointwise factorization ``V = v u v`` on the grid.

    ``v = |V|^(1/2) >= 0`` and ``u = +1`` where ``V >= 0``, ``-1`` where
    ``V < 0`` (points with ``V = 0`` get ``+1``; ``v`` vanishes there).
    ``x_factor``/``omega_factor`` are set when ``V`` factors as
    ``g(omega) * W(x)`` with ``g >= 0`` (fast assembly path).
    """

    values: np.ndarray         # V on the grid, shape (n_omega, n_x)
    v: np.ndarray
    u: np.ndarray
    support: tuple[float, float]
    omega_factor: np.ndarray | None = None   # sqrt(g) at omega nodes
    x_factor: np.ndarray | None = None       # sqrt(|W|) at x nodes
    u_x: np.ndarray | None = None            # sign(W) at x nodes

    @property
    def separable(self) -> bool:
        return self.x_factor is not None


def factorize_potential(values: np.ndarray, support: tuple[float, float],
                        omega_factor: np.ndarray | None = None,
                        x_factor: np.ndarray | None = None,
                        u_x: np.ndarray | None = None) -> PotentialModel:
    """Pointwise ``v``/``u`` factors of a bounded potential table."""
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ModelError("potential has non-finite values")
    v = np.sqrt(np.abs(vals))
    u = np.where(vals >= 0.0, 1.0, -1.0)
    return PotentialModel(vals, v, u, support, omega_factor, x_factor, u_x)


# ---------------------------------------------------------------------------
# Assembled model
# ---------------------------------------------------------------------------

@dataclass
class WaveguideModel:
    """Cross-section modes + potential factors + grid, ready for assembly."""

    cross_section: Interval | Rectangle | Custom
    grid: Grid
    modes: list[TransverseMode]
    potential: PotentialModel
    groups: list[ThresholdGroup] = field(default_factory=list)
    degeneracy_tol: float | None = None

    def __post_init__(self):
        if self.potential.values.shape != (self.grid.n_omega, self.grid.n_x):
            raise DimensionError("potential table does not match the grid")
        if not self.groups:
            self.groups = threshold_groups(self.modes, self.degeneracy_tol)

    @property
    def n_max(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def eigenvalue(self, n: int) -> float:
        """lambda_n for any n >= 1 (analytic beyond the stored modes)."""
        if n <= len(self.modes):
            return self.modes[n - 1].eigenvalue
        return self.cross_section.eigenvalue(n)

    def thresholds(self) -> list[float]:
        return [g.value for g in self.groups]

    def group_at(self, lam: float, tol: float = 1e-9) -> ThresholdGroup:
        for g in self.groups:
            if abs(g.value - lam) <= tol * max(1.0, abs(lam)):
                return g
        raise ModelError(f"{lam} is not a threshold of this model")

    def v_norm_inf(self) -> float:
        return float(np.max(self.potential.v))

    def u_diag(self) -> np.ndarray:
        return self.potential.u.reshape(-1).astype(complex)

    def weighted_mode_vector(self, n: int) -> np.ndarray:
        """Composite vector ``f_n(omega) v(omega,x) sqrt(w)`` (the rank-one
        factor of the leading threshold kernel)."""
        f = self.modes[n - 1].samples
        sw = self.grid.composite_sqrt_weights().reshape(self.grid.n_omega, self.grid.n_x)
        return (f[:, None] * self.potential.v * sw).reshape(-1)

    def mode_quadrature_vectors(self, count: int | None = None) -> np.ndarray:
        """Stack of ``f_n(omega_i) sqrt(w_omega_i)`` rows, shape (count, n_omega)."""
        count = count if count is not None else len(self.modes)
        sq = np.sqrt(self.grid.omega_weights)
        return np.array([m.samples * sq for m in self.modes[:count]])

    def orthonormality_defect(self, n_upto: int | None = None) -> float:
        phi = self.mode_quadrature_vectors(n_upto)
        gram = phi @ phi.T
        return float(np.max(np.abs(gram - np.eye(gram.shape[0]))))


def _omega_profile(kind: dict | None, nodes: np.ndarray, length: float) -> np.ndarray:
    """Nonnegative transverse profile ``g(omega)`` for separable presets."""
    om = nodes[:, 0]
    if kind is None or kind.get("kind", "uniform") == "uniform":
        return np.ones_like(om)
    if kind["kind"] == "cosine":
        amp = float(kind.get("amplitude", 0.0))
        harmonic = int(kind.get("harmonic", 1))
        if abs(amp) >= 1.0:
            raise ModelError("cosine profile amplitude must satisfy |a| < 1")
        return 1.0 + amp * np.cos(harmonic * math.pi * om / length)
    raise ModelError(f"unknown omega profile {kind!r}")


def square_well_model(
    cross_section,
    depth: float,
    x_box: tuple[float, float],
    n_omega: int,
    n_x: int,
    n_max: int,
    omega_profile: dict | None = None,
    n_panels: int = 1,
    degeneracy_tol: float | None = None,
) -> WaveguideModel:
    """Attractive square well ``V = -depth * g(omega)`` on ``x in [a, b]``.

    The box spans the full cross-section; ``g`` is a nonnegative profile
    (uniform by default), so ``V`` factors as ``g(omega) W(x)`` and the fast
    separable assembly path applies.
    """
    if depth < 0:
        raise ModelError("depth is the well magnitude; must be >= 0")
    grid = build_grid(cross_section, x_box, n_omega, n_x, n_panels)
    length = getattr(cross_section, "length", None)
    if length is None and isinstance(cross_section, Rectangle):
        length = cross_section.l1
    g = _omega_profile(omega_profile, grid.omega_nodes, length or 1.0)
    w_x = -depth * np.ones(grid.n_x)
    values = g[:, None] * w_x[None, :]
    pot = factorize_potential(
        values,
        x_box,
        omega_factor=np.sqrt(g),
        x_factor=np.sqrt(np.abs(w_x)),
        u_x=np.where(w_x >= 0, 1.0, -1.0),
    )
    modes = cross_section.modes(n_max, grid.omega_nodes)
    return WaveguideModel(cross_section, grid, modes, pot, degeneracy_tol=degeneracy_tol)


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------

def model_from_config(doc: dict) -> WaveguideModel:
    """Build a model from its JSON description.

    Schema (version 1)::

        {"schema_version": 1,
         "cross_section": {"kind": "interval", "length": L}
                          | {"kind": "rectangle", "l1": L1, "l2": L2}
                          | {"kind": "custom", "nodes": [...], "weights": [...],
                             "eigenvalues": [...], "samples": [[...], ...]},
         "grid": {"n_omega": int, "n_x": int, "n_panels": int},
         "n_max": int,
         "potential": {"kind": "square_well", "depth": d, "x_box": [a, b],
                       "omega_profile": {...}?}
                      | {"kind": "table", "x_box": [a, b],
                         "values": [[...], ...]}}
    """
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ModelError("unsupported model schema_version")
    cs_doc = doc["cross_section"]
    kind = cs_doc["kind"]
    if kind == "interval":
        cs = Interval(float(cs_doc["length"]))
    elif kind == "rectangle":
        cs = Rectangle(float(cs_doc["l1"]), float(cs_doc["l2"]))
    elif kind == "custom":
        cs = Custom(
            np.asarray(cs_doc["nodes"], dtype=float),
            np.asarray(cs_doc["weights"], dtype=float),
            tuple(float(e) for e in cs_doc["eigenvalues"]),
            np.asarray(cs_doc["samples"], dtype=float),
        )
    else:
        raise ModelError(f"unknown cross-section kind {kind!r}")
    gr = doc["grid"]
    pot_doc = doc["potential"]
    x_box = tuple(float(t) for t in pot_doc["x_box"])
    n_max = int(doc["n_max"])
    if pot_doc["kind"] == "square_well":
        return square_well_model(
            cs,
            float(pot_doc["depth"]),
            x_box,
            int(gr["n_omega"]),
            int(gr["n_x"]),
            n_max,
            omega_profile=pot_doc.get("omega_profile"),
            n_panels=int(gr.get("n_panels", 1)),
        )
    if pot_doc["kind"] == "table":
        grid = build_grid(cs, x_box, int(gr["n_omega"]), int(gr["n_x"]),
                          int(gr.get("n_panels", 1)))
        values = np.asarray(pot_doc["values"], dtype=float)
        pot = factorize_potential(values, x_box)
        modes = cs.modes(n_max, grid.omega_nodes)
        return WaveguideModel(cs, grid, modes, pot)
    raise ModelError(f"unknown potential kind {pot_doc['kind']!r}")


def load_model(path) -> WaveguideModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_config(json.load(fh))
