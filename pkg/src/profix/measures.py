"""Discretized carriers for the distributional objects used everywhere else.

Distributions enter the computations as finite collections of weighted
atoms, nondecreasing step functions, or masses on a finite support.  All
types freeze their arrays after construction, so instances can be shared
read-only across threads and Monte Carlo replications.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

#: Absolute tolerance for "this collection of weights is a probability".
MASS_TOL = 1e-12


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def _canonical_order(points):
    """Stable ascending order of points (lexicographic for row vectors)."""
    if points.ndim == 1:
        return np.argsort(points, kind="stable")
    # lexsort keys run last-to-first, so feed columns in reverse; it is
    # stable, which breaks exact ties by insertion index.
    return np.lexsort(points[:, ::-1].T)


def _merge_duplicates(points, weights):
    """Sum weights of exactly equal, already sorted points."""
    if len(points) == 0:
        return points, weights
    if points.ndim == 1:
        new_group = np.concatenate(([True], points[1:] != points[:-1]))
    else:
        new_group = np.concatenate(
            ([True], np.any(points[1:] != points[:-1], axis=1))
        )
    idx = np.flatnonzero(new_group)
    merged = np.add.reduceat(weights, idx)
    return points[new_group], merged


class EmpiricalMeasure:
    """Finite nonnegative atomic measure.

    Atoms are kept canonically ordered (ascending by point, lexicographic
    for vector-valued points) and exactly duplicated points are merged with
    summed weight, so two measures representing the same distribution
    compare equal atom by atom.

    Parameters
    ----------
    points : array-like, shape (n,) or (n, k)
        Atom locations.  Rows are sample-space elements.
    weights : array-like, shape (n,)
        Nonnegative atom masses.  Not normalized here; use
        :func:`empirical_from_sample` for a probability measure.
    """

    def __init__(self, points, weights):
        # adding 0.0 canonicalizes -0.0, keeping bit patterns comparable
        points = np.asarray(points, dtype=float) + 0.0
        weights = np.asarray(weights, dtype=float)
        if points.ndim not in (1, 2):
            raise InvalidInput("points must be a 1-d or 2-d array")
        if weights.ndim != 1 or len(weights) != len(points):
            raise InvalidInput("weights must be 1-d and match points")
        if not np.all(np.isfinite(points)):
            raise InvalidInput("non-finite point")
        if not np.all(np.isfinite(weights)):
            raise InvalidInput("non-finite weight")
        if np.any(weights < 0):
            raise InvalidInput("negative atom weight")
        order = _canonical_order(points)
        points, weights = _merge_duplicates(points[order], weights[order])
        self.points = points
        self.weights = weights
        _freeze(self.points, self.weights)

    def __len__(self):
        return len(self.weights)

    def __eq__(self, other):
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    @property
    def total_mass(self):
        return float(self.weights.sum())

    def expectation(self, values):
        """Weighted sum of per-atom values (integral against the measure)."""
        values = np.asarray(values, dtype=float)
        return values.T @ self.weights

    def scaled(self, factor):
        if factor < 0:
            raise InvalidInput("scale factor must be nonnegative")
        return EmpiricalMeasure(self.points, self.weights * factor)

    def to_json(self):
        return json.dumps(
            {"points": self.points.tolist(), "weights": self.weights.tolist()}
        )

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        return cls(payload["points"], payload["weights"])

    def __repr__(self):
        return (
            f"EmpiricalMeasure(n={len(self)}, total_mass={self.total_mass:.6g})"
        )


def empirical_from_sample(points, weights=None):
    """Probability measure with one atom per observation.

    Omitted weights mean equal weights 1/n; explicit weights are
    normalized to total mass one.
    """
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise InvalidInput("empty sample")
    if weights is None:
        weights = np.full(len(points), 1.0 / len(points))
    else:
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise InvalidInput("negative weight")
        total = weights.sum()
        if total <= 0:
            raise InvalidInput("weights must have positive total")
        weights = weights / total
    return EmpiricalMeasure(points, weights)


def mix_path(F, G, t):
    """Point on the straight-line path (1 - t) F + t G.

    The endpoints are returned exactly; interior points live on the union
    of the two supports.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidInput(f"path parameter t={t} outside [0, 1]")
    if t == 0.0:
        return EmpiricalMeasure(F.points, F.weights)
    if t == 1.0:
        return EmpiricalMeasure(G.points, G.weights)
    if F.points.ndim != G.points.ndim:
        raise InvalidInput("measures live on different sample spaces")
    points = np.concatenate([F.points, G.points])
    weights = np.concatenate([(1.0 - t) * F.weights, t * G.weights])
    return EmpiricalMeasure(points, weights)


@dataclass(frozen=True)
class TwoSampleMeasure:
    """A measure split into a complete-case and an incomplete-case part.

    The two components are sub-measures whose masses w1 and w2 add to one;
    projecting the combined measure onto sample s returns component s
    exactly.
    """

    complete: EmpiricalMeasure
    incomplete: EmpiricalMeasure

    def __post_init__(self):
        w1, w2 = self.complete.total_mass, self.incomplete.total_mass
        if abs(w1 + w2 - 1.0) > MASS_TOL:
            raise InvalidInput(f"component masses {w1} + {w2} do not sum to 1")
        if w1 <= 0:
            raise InvalidInput("complete-case mass must be positive")

    @property
    def w1(self):
        return self.complete.total_mass

    @property
    def w2(self):
        return self.incomplete.total_mass

    def project(self, s):
        if s == 1:
            return self.complete
        if s == 2:
            return self.incomplete
        raise InvalidInput("sample index must be 1 or 2")


def _cumulative_at(jump_times, cumulative, u):
    idx = np.searchsorted(jump_times, u, side="right")
    padded = np.concatenate(([0.0], cumulative))
    return padded[idx]


class StepFunction:
    """Nondecreasing cadlag step function on [0, tau] starting at zero.

    Evaluation at u returns the sum of the jumps at times <= u.
    """

    def __init__(self, jump_times, jump_sizes, tau):
        jump_times = np.array(jump_times, dtype=float)
        jump_sizes = np.array(jump_sizes, dtype=float)
        if not np.isfinite(tau) or tau <= 0:
            raise InvalidInput("tau must be a positive real")
        if jump_times.ndim != 1 or jump_sizes.shape != jump_times.shape:
            raise InvalidInput("jump times and sizes must be matching 1-d arrays")
        if len(jump_times) > 0:
            if np.any(np.diff(jump_times) <= 0):
                raise InvalidInput("jump times must be strictly increasing")
            if jump_times[0] <= 0 or jump_times[-1] > tau:
                raise InvalidInput("jump times must lie in (0, tau]")
        if not np.all(np.isfinite(jump_sizes)) or np.any(jump_sizes < 0):
            raise InvalidInput("jump sizes must be finite and nonnegative")
        self.jump_times = jump_times
        self.jump_sizes = jump_sizes
        self.tau = float(tau)
        self._cumulative = np.cumsum(jump_sizes)
        _freeze(self.jump_times, self.jump_sizes, self._cumulative)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u < 0) or np.any(u > self.tau):
            raise InvalidInput("evaluation point outside [0, tau]")
        out = _cumulative_at(self.jump_times, self._cumulative, u)
        return float(out) if out.ndim == 0 else out

    @property
    def total(self):
        return float(self._cumulative[-1]) if len(self._cumulative) else 0.0

    def jump_at(self, u):
        """Size of the jump exactly at u (zero if there is none)."""
        idx = np.searchsorted(self.jump_times, u)
        if idx < len(self.jump_times) and self.jump_times[idx] == u:
            return float(self.jump_sizes[idx])
        return 0.0

    def with_sizes(self, jump_sizes):
        """Same jump grid and horizon, new jump sizes."""
        return StepFunction(self.jump_times, jump_sizes, self.tau)

    def __repr__(self):
        return (
            f"StepFunction(jumps={len(self.jump_times)}, tau={self.tau:.6g}, "
            f"total={self.total:.6g})"
        )


def step_eval(A, u):
    """Evaluate a step function at u, guarding the domain [0, tau]."""
    return A(u)


class GridDensity:
    """Masses, or quadrature-weighted density values, on a finite support.

    kind "pmf" stores probability masses at the support points; kind
    "density" stores density values together with the quadrature weights
    that turn them into masses.
    """

    KINDS = ("pmf", "density")

    def __init__(self, support, masses, kind="pmf", quad_weights=None,
                 normalize=False):
        support = np.array(support, dtype=float)
        masses = np.array(masses, dtype=float)
        if kind not in self.KINDS:
            raise InvalidInput(f"unknown kind {kind!r}")
        if support.ndim != 1 or masses.shape != support.shape:
            raise InvalidInput("support and masses must be matching 1-d arrays")
        if len(support) == 0:
            raise InvalidInput("empty support")
        if len(np.unique(support)) != len(support):
            raise InvalidInput("support points must be distinct")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise InvalidInput("masses must be finite and nonnegative")
        order = np.argsort(support)
        support = support[order]
        masses = masses[order]
        if kind == "density":
            if quad_weights is None:
                raise InvalidInput("density kind needs quadrature weights")
            quad_weights = np.asarray(quad_weights, dtype=float)[order]
            if np.any(quad_weights <= 0):
                raise InvalidInput("quadrature weights must be positive")
        self.kind = kind
        self.support = support
        self.values = masses
        self.quad_weights = quad_weights
        if normalize:
            total = self.total_mass
            if total <= 0:
                raise InvalidInput("cannot normalize a zero density")
            self.values = self.values / total
        _freeze(self.support, self.values)
        if self.quad_weights is not None:
            _freeze(self.quad_weights)

    @property
    def masses(self):
        """Masses at the support points (values times weights for densities)."""
        if self.kind == "pmf":
            return self.values
        return self.values * self.quad_weights

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def mass_at(self, x):
        idx = np.searchsorted(self.support, x)
        if idx < len(self.support) and self.support[idx] == x:
            return float(self.masses[idx])
        return 0.0

    def __len__(self):
        return len(self.support)

    def __repr__(self):
        return (
            f"GridDensity(kind={self.kind!r}, n={len(self)}, "
            f"total_mass={self.total_mass:.6g})"
        )


class PerturbationDirection:
    """Signed coefficients shape-matched to the object they perturb.

    kind "measure" carries signed atom weights over a fixed atom table,
    kind "jumps" signed jump sizes over a step function's grid, and kind
    "masses" signed masses over a density's support.
    """

    KINDS = ("measure", "jumps", "masses")

    def __init__(self, kind, grid, coeffs):
        if kind not in self.KINDS:
            raise InvalidInput(f"unknown direction kind {kind!r}")
        grid = np.array(grid, dtype=float)
        coeffs = np.array(coeffs, dtype=float)
        if len(coeffs) != len(grid):
            raise InvalidInput("coefficients must match the base grid")
        if not np.all(np.isfinite(coeffs)):
            raise InvalidInput("non-finite direction coefficient")
        self.kind = kind
        self.grid = grid
        self.coeffs = coeffs
        # total variation for measures, uniform norm for function directions
        if kind == "measure":
            self.norm = float(np.abs(coeffs).sum())
        else:
            self.norm = float(np.abs(coeffs).max()) if len(coeffs) else 0.0
        _freeze(self.grid, self.coeffs)

    @classmethod
    def between_measures(cls, F, G):
        """Direction G - F on the union of the two supports."""
        union = mix_path(F, G, 0.5)
        rows = union.points if union.points.ndim == 2 else union.points[:, None]
        index = {row.tobytes(): i for i, row in enumerate(rows)}
        signed = np.zeros(len(union))
        for measure, sign in ((F, -1.0), (G, 1.0)):
            pts = (measure.points if measure.points.ndim == 2
                   else measure.points[:, None])
            for row, weight in zip(pts, measure.weights):
                try:
                    signed[index[row.tobytes()]] += sign * weight
                except KeyError:
                    raise InvalidInput("atom lookup failed; support mismatch")
        return cls("measure", union.points, signed)

    @classmethod
    def of_jumps(cls, step, dsizes):
        return cls("jumps", step.jump_times, dsizes)

    @classmethod
    def of_masses(cls, density, dmasses):
        return cls("masses", density.support, dmasses)

    def scaled(self, factor):
        return PerturbationDirection(self.kind, self.grid, self.coeffs * factor)


class LinearMap:
    """Dense matrix realizing a linear operator between coefficient spaces."""

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise InvalidInput("linear map needs a 2-d matrix")
        self.matrix = matrix
        _freeze(self.matrix)

    @property
    def domain_dim(self):
        return self.matrix.shape[1]

    @property
    def codomain_dim(self):
        return self.matrix.shape[0]

    def apply(self, vec):
        return self.matrix @ np.asarray(vec, dtype=float)

    __call__ = apply


class BilinearMap:
    """Vector-valued bilinear form: apply(h1, h2) is linear in each slot."""

    def __init__(self, fn, input_dim, output_dim=None):
        self._fn = fn
        self.input_dim = input_dim
        self.output_dim = input_dim if output_dim is None else output_dim

    def apply(self, h1, h2):
        h1 = np.asarray(h1, dtype=float)
        h2 = np.asarray(h2, dtype=float)
        if len(h1) != self.input_dim or len(h2) != self.input_dim:
            raise InvalidInput("direction dimension mismatch")
        return self._fn(h1, h2)

    __call__ = apply


def gauss_legendre_grid(lo, hi, n):
    """Gauss-Legendre nodes and weights on [lo, hi]."""
    if hi <= lo:
        raise InvalidInput("empty quadrature interval")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + half * nodes, half * weights


def composite_gauss_grid(lo, hi, cells, order=5):
    """Per-cell Gauss-Legendre rule on a uniform partition of [lo, hi].

    Returns nodes, weights and the cell boundaries.  Nodes are interior to
    their cells, so sums of whole cells reproduce integrals up to the
    composite rule's error.
    """
    boundaries = np.linspace(lo, hi, cells + 1)
    base_nodes, base_weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (boundaries[1] - boundaries[0])
    mids = 0.5 * (boundaries[:-1] + boundaries[1:])
    nodes = (mids[:, None] + half * base_nodes[None, :]).ravel()
    weights = np.tile(half * base_weights, cells)
    return nodes, weights, boundaries


def trapezoid_grid(lo, hi, n):
    """Trapezoid nodes and weights on [lo, hi] with n points."""
    if n < 2:
        raise InvalidInput("trapezoid rule needs at least two points")
    nodes = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    weights = np.full(n, h)
    weights[0] = weights[-1] = h / 2
    return nodes, weights
