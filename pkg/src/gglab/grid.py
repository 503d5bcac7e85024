"""Grid representation of the fixed-point unknown ``g`` and the threshold function.

``g`` lives on the reduced observation ``(x_i, y_ji for the other n-2 peers)``
of an agent once one peer slot ``k`` has been singled out.  Its root function
``Ih`` gives the value of ``y_ki`` at which the agent is indifferent, and the
threshold function is ``h(y_i) = Ih(y_{i\\k}) - y_ki``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .belief import BeliefCoefficients, ObservationVector
from .errors import InvalidInputError

MAX_NODES = 10**8
MAX_GRID_AXES = 4
LIPSCHITZ_SLACK = 1e-6

# default points per axis, keyed by number of axes (n - 1)
DEFAULT_POINTS = {1: 257, 2: 65, 3: 33, 4: 17}


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    points_per_axis: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        points = tuple(int(p) for p in self.points_per_axis)
        if not (len(lower) == len(upper) == len(points)) or not lower:
            raise InvalidInputError("lower, upper and points_per_axis must have the same non-zero length")
        if len(lower) > MAX_GRID_AXES:
            raise InvalidInputError(f"grid backend supports at most {MAX_GRID_AXES} axes, got {len(lower)}")
        for d, (lo, hi, p) in enumerate(zip(lower, upper, points)):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise InvalidInputError(f"axis {d}: need finite lower < upper, got [{lo}, {hi}]")
            if p < 2:
                raise InvalidInputError(f"axis {d}: need at least 2 points, got {p}")
        if math.prod(points) > MAX_NODES:
            raise InvalidInputError(f"grid has {math.prod(points)} nodes, limit is {MAX_NODES}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "points_per_axis", points)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple:
        return self.points_per_axis

    @property
    def size(self) -> int:
        return math.prod(self.points_per_axis)

    def axes(self) -> list:
        return [np.linspace(lo, hi, p) for lo, hi, p in zip(self.lower, self.upper, self.points_per_axis)]

    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (p - 1) for lo, hi, p in
                         zip(self.lower, self.upper, self.points_per_axis)])

    def nodes(self) -> np.ndarray:
        """All grid nodes in row-major order, shape ``(size, dim)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @classmethod
    def uniform(cls, dim: int, lower: float, upper: float, points: int) -> "GridSpec":
        return cls((lower,) * dim, (upper,) * dim, (points,) * dim)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper),
                "points_per_axis": list(self.points_per_axis)}


def default_grid(coeffs: BeliefCoefficients, margin: float | None = None,
                 points: int | None = None) -> GridSpec:
    """Box covering the band where the posterior mean crosses ``[1, n]``.

    Every axis spans ``[(1 - M) / a_n, (n + M) / a_n]`` with the margin ``M``
    defaulting to five times the larger noise standard deviation.
    """
    p = coeffs.params
    dim = p.n - 1
    if dim > MAX_GRID_AXES:
        raise InvalidInputError(f"grid backend supports at most {MAX_GRID_AXES} axes (n <= 5), got n={p.n}")
    if margin is None:
        margin = 5.0 * max(p.sigma, p.tau)
    if points is None:
        points = DEFAULT_POINTS[dim]
    lo = (1.0 - margin) / coeffs.a_n
    hi = (p.n + margin) / coeffs.a_n
    return GridSpec.uniform(dim, lo, hi, points)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of ``g`` at grid nodes, multilinear inside the box, constant outside."""

    spec: GridSpec
    values: np.ndarray
    lipschitz: float
    codomain: tuple = field(default=(1.0, 2.0))

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.spec.size:
            raise InvalidInputError(f"expected {self.spec.size} values, got {values.size}")
        lo, hi = (float(v) for v in self.codomain)
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("grid values must be finite")
        if values.min() < lo - 1e-12 or values.max() > hi + 1e-12:
            raise InvalidInputError(
                f"grid values must lie in [{lo}, {hi}], got [{values.min()}, {values.max()}]")
        values = np.clip(values, lo, hi)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "codomain", (lo, hi))
        object.__setattr__(self, "lipschitz", float(self.lipschitz))

    @classmethod
    def constant(cls, spec: GridSpec, value: float, coeffs: BeliefCoefficients) -> "GridFunction":
        return cls(spec, np.full(spec.size, float(value)), coeffs.a_n, (1.0, float(coeffs.n)))

    @classmethod
    def from_callable(cls, spec: GridSpec, fn, coeffs: BeliefCoefficients) -> "GridFunction":
        return cls(spec, fn(spec.nodes()), coeffs.a_n, (1.0, float(coeffs.n)))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.spec, values, self.lipschitz, self.codomain)

    @property
    def grid_values(self) -> np.ndarray:
        return self.values.reshape(self.spec.shape)

    @cached_property
    def _interpolator(self):
        return RegularGridInterpolator(tuple(self.spec.axes()), self.grid_values,
                                       method="linear", bounds_error=False, fill_value=None)

    def __call__(self, points) -> np.ndarray:
        return eval_g(self, points)

    def sup_distance(self, other: "GridFunction") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    # -- serialization -------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"axis{d}" for d in range(self.spec.dim)] + ["value"])
        for node, v in zip(self.spec.nodes(), self.values):
            writer.writerow([_fmt(x) for x in node] + [_fmt(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, lipschitz: float, codomain: tuple) -> "GridFunction":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        dim = len(header) - 1
        if header != [f"axis{d}" for d in range(dim)] + ["value"]:
            raise InvalidInputError(f"unexpected CSV header {header}")
        data = np.array([[float(v) for v in r] for r in body])
        lower, upper, points = [], [], []
        for d in range(dim):
            ax = np.unique(data[:, d])
            lower.append(ax[0])
            upper.append(ax[-1])
            points.append(ax.size)
        spec = GridSpec(tuple(lower), tuple(upper), tuple(points))
        if not np.array_equal(spec.nodes(), data[:, :dim]):
            raise InvalidInputError("CSV nodes are not a row-major uniform grid")
        return cls(spec, data[:, dim], lipschitz, codomain)

    def to_json_dict(self) -> dict:
        return {"grid": self.spec.to_dict(), "lipschitz": self.lipschitz,
                "codomain": list(self.codomain), "values": [float(v) for v in self.values]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "GridFunction":
        spec = GridSpec(tuple(d["grid"]["lower"]), tuple(d["grid"]["upper"]),
                        tuple(d["grid"]["points_per_axis"]))
        return cls(spec, np.array(d["values"], dtype=float), d["lipschitz"], tuple(d["codomain"]))

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def eval_g(g: GridFunction, points) -> np.ndarray | float:
    """Evaluate ``g`` at one point (shape ``(dim,)``) or a batch (``(..., dim)``).

    Queries outside the box are clamped to the nearest box point.
    """
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    if pts.shape[-1] != g.spec.dim:
        raise InvalidInputError(f"points must have trailing dimension {g.spec.dim}, got {pts.shape}")
    if np.isnan(pts).any():
        raise InvalidInputError("NaN in evaluation point")
    lead = pts.shape[:-1]
    flat = np.clip(pts.reshape(-1, g.spec.dim), g.spec.lower, g.spec.upper)
    if g.spec.dim == 1:
        out = np.interp(flat[:, 0], g.spec.axes()[0], g.values)
    else:
        out = g._interpolator(flat)
    out = out.reshape(lead)
    return float(out) if scalar else out


@dataclass(frozen=True, eq=False)
class ThresholdFunction:
    """``h(y_i) = Ih(y_{i\\k}) - y_ki`` where ``Ih`` is recovered from ``g``."""

    g: GridFunction
    coeffs: BeliefCoefficients

    def __post_init__(self):
        if self.g.spec.dim != self.coeffs.n - 1:
            raise InvalidInputError(
                f"g has {self.g.spec.dim} axes but the game needs n-1 = {self.coeffs.n - 1}")

    def root_share(self, reduced) -> np.ndarray:
        """Vectorized ``Ih``: reduced points ``(..., n-1)`` to the root value of ``y_ki``."""
        reduced = np.asarray(reduced, dtype=float)
        a, b = self.coeffs.a_n, self.coeffs.b_n
        gv = eval_g(self.g, reduced)
        return (gv - a * reduced[..., 0] - b * reduced[..., 1:].sum(axis=-1)) / b

    def h_values(self, full, slot: int = 0) -> np.ndarray:
        """Vectorized ``h`` on full observation arrays ``(..., n)`` = ``(x, shares...)``."""
        full = np.asarray(full, dtype=float)
        col = 1 + slot
        reduced = np.delete(full, col, axis=-1)
        return self.root_share(reduced) - full[..., col]


def g_to_Ih(tf: ThresholdFunction, y_reduced) -> float:
    """Root value of ``y_ki`` for a reduced observation ``(x_i, other shares)``."""
    y_reduced = np.asarray(y_reduced, dtype=float)
    if y_reduced.shape != (tf.coeffs.n - 1,):
        raise InvalidInputError(f"reduced point must have shape ({tf.coeffs.n - 1},)")
    return float(tf.root_share(y_reduced))


def eval_h(tf: ThresholdFunction, y: ObservationVector, k: int = 0) -> float:
    if y.n != tf.coeffs.n:
        raise InvalidInputError(f"observation has {y.n} entries, game has n={tf.coeffs.n}")
    if not 0 <= k < tf.coeffs.n - 1:
        raise InvalidInputError(f"peer slot must be in 0..{tf.coeffs.n - 2}, got {k}")
    return float(tf.h_values(y.as_array(), k))


def check_lipschitz(g: GridFunction) -> tuple:
    """Worst adjacent-node slope over all axes, relative to the Lipschitz parameter."""
    vals = g.grid_values
    worst = 0.0
    for d, h in enumerate(g.spec.spacing()):
        slope = np.max(np.abs(np.diff(vals, axis=d))) / h
        worst = max(worst, float(slope))
    ratio = worst / g.lipschitz
    return ratio <= 1.0 + LIPSCHITZ_SLACK, ratio


def _peer_permutations(dim: int) -> list:
    peer_axes = list(range(1, dim))
    return [(0,) + p for p in itertools.permutations(peer_axes)]


def symmetrize(g: GridFunction) -> GridFunction:
    """Average ``g`` over permutations of its peer-share axes (all axes but the first)."""
    dim = g.spec.dim
    if dim <= 2:
        return g
    spec = g.spec
    ref = (spec.lower[1], spec.upper[1], spec.points_per_axis[1])
    for d in range(2, dim):
        if (spec.lower[d], spec.upper[d], spec.points_per_axis[d]) != ref:
            raise InvalidInputError("peer-share axes must have identical lower/upper/points to symmetrize")
    vals = g.grid_values
    perms = _peer_permutations(dim)
    stack = np.stack([vals.transpose(p) for p in perms])
    if all(np.array_equal(vals, s) for s in stack[1:]):
        return g
    # sorting fixes the summation order, so the average is exactly symmetric
    avg = np.sort(stack, axis=0).sum(axis=0) / len(perms)
    return g.with_values(avg.reshape(-1))
