"""Metric spaces, sampled maps, the Kuratowski embedding and Lipschitz estimates."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial.distance import cdist

from .errors import DegenerateGrid, DimensionMismatch, InvalidSpec, UnknownPoint

COORDINATE_KINDS = ("euclidean", "sup_norm")
DEFAULT_LINF_DIM = 16


@dataclass(frozen=True, eq=False)
class MetricSpace:
    """Immutable handle on a metric space.

    ``kind`` is one of ``euclidean``, ``sup_norm``, ``explicit_matrix`` or
    ``snowflake``.  Coordinate kinds carry ``dim``; explicit spaces carry a
    validated distance table and optional point labels; a snowflake wraps a
    base space and raises its distance to ``alpha``.
    """

    kind: str
    dim: Optional[int] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    ids: Optional[tuple] = None
    base: Optional["MetricSpace"] = None
    alpha: float = 1.0

    @classmethod
    def euclidean(cls, dim: int) -> "MetricSpace":
        return cls("euclidean", dim=int(dim))

    @classmethod
    def sup_norm(cls, dim: int = DEFAULT_LINF_DIM) -> "MetricSpace":
        return cls("sup_norm", dim=int(dim))

    @classmethod
    def explicit(cls, matrix, ids: Optional[Sequence] = None, tol: float = 1e-12) -> "MetricSpace":
        mat = np.array(matrix, dtype=float)
        validate_distance_matrix(mat, tol=tol)
        mat.setflags(write=False)
        if ids is not None:
            ids = tuple(ids)
            if len(ids) != mat.shape[0]:
                raise DimensionMismatch("ids length does not match matrix size")
        return cls("explicit_matrix", dim=mat.shape[0], matrix=mat, ids=ids)

    @classmethod
    def snowflake(cls, base: "MetricSpace", alpha: float) -> "MetricSpace":
        if not 0.0 < alpha <= 1.0:
            raise InvalidSpec(f"snowflake exponent must lie in (0, 1], got {alpha}")
        return cls("snowflake", dim=base.dim, base=base, alpha=float(alpha))

    @property
    def is_coordinate(self) -> bool:
        """True when points are real coordinate vectors."""
        if self.kind == "snowflake":
            return self.base.is_coordinate
        return self.kind in COORDINATE_KINDS

    @property
    def size(self) -> int:
        if self.kind == "explicit_matrix":
            return self.matrix.shape[0]
        if self.kind == "snowflake":
            return self.base.size
        raise TypeError(f"{self.kind} space has no finite point set")

    def index(self, p) -> int:
        """Resolve a point id (label or integer index) of an explicit space."""
        space = self._root()
        if space.kind != "explicit_matrix":
            raise TypeError("point ids are only meaningful for explicit spaces")
        if isinstance(p, (int, np.integer)):
            if not 0 <= int(p) < space.matrix.shape[0]:
                raise UnknownPoint(p)
            return int(p)
        if space.ids is not None and p in space.ids:
            return space.ids.index(p)
        raise UnknownPoint(p)

    def _root(self) -> "MetricSpace":
        return self.base._root() if self.kind == "snowflake" else self

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind in COORDINATE_KINDS:
            d["dim"] = self.dim
        elif self.kind == "explicit_matrix":
            d["matrix"] = self.matrix.tolist()
            if self.ids is not None:
                d["ids"] = list(self.ids)
        else:
            d["base"] = self.base.to_dict()
            d["alpha"] = self.alpha
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSpace":
        kind = d.get("kind")
        if kind == "euclidean":
            return cls.euclidean(d["dim"])
        if kind == "sup_norm":
            return cls.sup_norm(d.get("dim", DEFAULT_LINF_DIM))
        if kind == "explicit_matrix":
            return cls.explicit(d["matrix"], d.get("ids"))
        if kind == "snowflake":
            return cls.snowflake(cls.from_dict(d["base"]), d["alpha"])
        raise InvalidSpec(f"unknown metric kind {kind!r}")


def validate_distance_matrix(mat: np.ndarray, tol: float = 1e-12) -> None:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch("distance matrix must be square")
    if not np.all(np.isfinite(mat)):
        raise InvalidSpec("distance matrix has non-finite entries")
    if np.any(mat < 0):
        raise InvalidSpec("distances must be nonnegative")
    if np.any(np.abs(np.diag(mat)) > 0):
        raise InvalidSpec("distance matrix diagonal must be zero")
    if not np.allclose(mat, mat.T, rtol=0, atol=tol):
        raise InvalidSpec("distance matrix is not symmetric")
    off = mat + np.eye(len(mat))
    if np.any(off <= 0):
        raise InvalidSpec("distinct points must have positive distance")
    # d(i,j) <= d(i,l) + d(l,j) for all l
    scale = max(1.0, float(mat.max(initial=0.0)))
    for l in range(len(mat)):
        if np.any(mat > mat[:, l:l + 1] + mat[l:l + 1, :] + tol * scale):
            raise InvalidSpec("triangle inequality violated")


def _as_coords(space: MetricSpace, p) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if space.dim is not None and a.shape[-1] != space.dim:
        raise DimensionMismatch(f"expected {space.dim} coordinates, got {a.shape[-1]}")
    return a


def distance(space: MetricSpace, p, q) -> float:
    """Distance between two points of ``space`` (coordinates or ids)."""
    if space.kind == "snowflake":
        return distance(space.base, p, q) ** space.alpha
    if space.kind == "explicit_matrix":
        return float(space.matrix[space.index(p), space.index(q)])
    a, b = _as_coords(space, p), _as_coords(space, q)
    if space.kind == "euclidean":
        return float(np.sqrt(np.sum((a - b) ** 2)))
    return float(np.max(np.abs(a - b)))


def pairwise(space: MetricSpace, A, B=None) -> np.ndarray:
    """Matrix of distances between the rows of ``A`` and ``B`` (default ``A``)."""
    if space.kind == "snowflake":
        return pairwise(space.base, A, B) ** space.alpha
    if space.kind == "explicit_matrix":
        ia = np.array([space.index(p) for p in np.atleast_1d(A)], dtype=int)
        ib = ia if B is None else np.array([space.index(p) for p in np.atleast_1d(B)], dtype=int)
        return space.matrix[np.ix_(ia, ib)]
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        A = A.reshape(0, space.dim or 1)
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if space.dim is not None and (A.shape[1] != space.dim or B.shape[1] != space.dim):
        raise DimensionMismatch("coordinate length does not match space dimension")
    metric = "euclidean" if space.kind == "euclidean" else "chebyshev"
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    return cdist(A, B, metric=metric)


def paired(space: MetricSpace, A, B) -> np.ndarray:
    """Row-wise distances d(A[i], B[i])."""
    if space.kind == "snowflake":
        return paired(space.base, A, B) ** space.alpha
    if space.kind == "explicit_matrix":
        ia = np.asarray(A, dtype=int).ravel()
        ib = np.asarray(B, dtype=int).ravel()
        return space.matrix[ia, ib]
    diff = np.asarray(A, dtype=float) - np.asarray(B, dtype=float)
    if diff.ndim == 1:
        diff = diff[:, None]
    if space.kind == "euclidean":
        return np.sqrt(np.sum(diff * diff, axis=1))
    return np.max(np.abs(diff), axis=1)


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    if n < 0:
        raise ValueError("dimension must be nonnegative")
    # omega_n = 2 pi / n * omega_{n-2}, exact at omega_0 = 1 and omega_1 = 2
    vol = 1.0 if n % 2 == 0 else 2.0
    for j in range(2 + n % 2, n + 1, 2):
        vol *= 2 * math.pi / j
    return vol


def kuratowski_embed(space: MetricSpace, base_point, landmarks=None, points=None,
                     dim: int = DEFAULT_LINF_DIM) -> np.ndarray:
    """Kuratowski coordinates d(x, l_i) - d(l_i, base) of ``points``.

    ``landmarks`` default to the first ``dim`` points of an explicit space;
    explicitly passed landmarks are used in full.  ``points`` default to every
    point of an explicit space.  Returns an array of shape
    ``(len(points), len(landmarks))``, i.e. points of ``sup_norm(len(landmarks))``.
    """
    if landmarks is None:
        landmarks = list(range(min(dim, space.size)))
    landmarks = list(landmarks) if not isinstance(landmarks, np.ndarray) else landmarks
    if len(landmarks) == 0:
        raise ValueError("landmarks must be nonempty")
    if points is None:
        points = list(range(space.size))
    base = [base_point]
    offset = pairwise(space, landmarks, base)[:, 0]
    return pairwise(space, points, landmarks) - offset[None, :]


# ---------------------------------------------------------------------------
# Sampled maps


@dataclass(frozen=True, eq=False)
class SampledMap:
    """A Lipschitz map on an axis-aligned box in R^k, sampled on a regular grid.

    Either ``rule`` (vectorised, ``(M, k) -> (M, N)`` coordinates, or ``(M,)``
    integer ids for an explicit target) or ``samples`` (node values in C order,
    shape ``grid + (N,)``) must be given.  Off-node evaluation of sample-only
    maps uses multilinear interpolation.
    """

    lo: np.ndarray
    hi: np.ndarray
    grid: tuple
    target: MetricSpace
    n: int
    rule: Optional[Callable] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    lip_hint: Optional[float] = None
    affine: bool = False
    mask: Optional[Callable] = None
    crease_distance: Optional[Callable] = None
    spec: Any = None

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        grid = tuple(int(g) for g in np.broadcast_to(np.asarray(self.grid), lo.shape))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "grid", grid)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidSpec("domain box must have hi > lo on every axis")
        if any(g < 2 for g in grid):
            raise DegenerateGrid("every axis needs at least two grid nodes")
        if self.n < 1 or self.n > len(lo):
            raise InvalidSpec(f"need 1 <= n <= k, got n={self.n}, k={len(lo)}")
        if (self.rule is None) == (self.samples is None):
            raise InvalidSpec("exactly one of rule or samples must be given")
        if self.samples is not None:
            s = np.asarray(self.samples)
            if s.shape[:len(grid)] != grid:
                raise DimensionMismatch("sample array does not match the grid")
            if self.target.is_coordinate and s.ndim == len(grid):
                s = s[..., None]
            object.__setattr__(self, "samples", s)

    @property
    def k(self) -> int:
        return len(self.lo)

    @property
    def m(self) -> int:
        return self.k - self.n

    @property
    def h(self) -> np.ndarray:
        """Grid spacing per axis."""
        return (self.hi - self.lo) / (np.asarray(self.grid) - 1)

    @property
    def h_max(self) -> float:
        return float(self.h.max())

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.grid))

    def axes(self) -> list:
        return [np.linspace(a, b, g) for a, b, g in zip(self.lo, self.hi, self.grid)]

    @cached_property
    def _nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        out = np.stack([m.ravel() for m in mesh], axis=1)
        out.setflags(write=False)
        return out

    def nodes(self) -> np.ndarray:
        """All grid nodes, shape ``(num_nodes, k)``, in C (row-major) order."""
        return self._nodes

    def node_index(self, flat: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(flat, self.grid))

    @cached_property
    def _values(self) -> np.ndarray:
        if self.samples is not None:
            v = self.samples.reshape(self.num_nodes, *self.samples.shape[len(self.grid):])
        else:
            v = self._apply_rule(self.nodes())
        v = np.array(v)
        v.setflags(write=False)
        return v

    def values(self) -> np.ndarray:
        """Map values at every grid node (same order as :meth:`nodes`)."""
        return self._values

    def _apply_rule(self, X: np.ndarray) -> np.ndarray:
        out = np.asarray(self.rule(X))
        if self.target.is_coordinate:
            out = np.asarray(out, dtype=float)
            if out.ndim == 1:
                out = out[:, None]
        return out

    @cached_property
    def _interp(self):
        if not self.target.is_coordinate:
            raise InvalidSpec("off-node evaluation needs a coordinate target")
        return RegularGridInterpolator(tuple(self.axes()), self.samples, method="linear")

    def evaluate(self, X) -> np.ndarray:
        """Evaluate the map at arbitrary points of the domain box."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.k:
            raise DimensionMismatch(f"expected points in R^{self.k}")
        if self.rule is not None:
            return self._apply_rule(X)
        return self._interp(np.clip(X, self.lo, self.hi))

    @cached_property
    def grid_lipschitz(self) -> float:
        """Axis-neighbour Lipschitz estimate on the grid (cached)."""
        return lipschitz_estimate(self)

    def in_domain(self, X, tol: float = 1e-12) -> np.ndarray:
        """Membership in the domain A: the box, intersected with ``mask``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        span = self.hi - self.lo
        inside = np.all((X >= self.lo - tol * span) & (X <= self.hi + tol * span), axis=1)
        if self.mask is not None:
            inside &= np.asarray(self.mask(X), dtype=bool)
        return inside

    def reach(self, X) -> np.ndarray:
        """l-infinity distance from each point to the boundary of the box."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.min(np.minimum(X - self.lo, self.hi - X), axis=1)

    def with_(self, **changes) -> "SampledMap":
        """Copy with some fields replaced."""
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return SampledMap(**fields)


def _neighbor_offsets(k: int, stencil: str) -> list:
    if stencil == "axis":
        return [tuple(1 if j == i else 0 for j in range(k)) for i in range(k)]
    if stencil == "moore":
        out = []
        for off in itertools.product((-1, 0, 1), repeat=k):
            # keep one of each +/- pair: first nonzero entry positive
            nz = [o for o in off if o != 0]
            if nz and nz[0] > 0:
                out.append(off)
        return out
    raise ValueError(f"unknown stencil {stencil!r}")


def lipschitz_estimate(fmap: SampledMap, stencil: str = "axis", max_all_pairs: int = 4096) -> float:
    """Largest difference quotient d(f(p), f(q)) / |p - q| over neighbouring nodes.

    ``stencil`` selects the pairs: ``axis`` (axis-adjacent, the default),
    ``moore`` (all 3^k - 1 neighbours) or ``all`` (every pair; only for grids
    with at most ``max_all_pairs`` nodes).  The result lower-bounds the true
    Lipschitz constant.
    """
    if fmap.num_nodes < 2:
        raise DegenerateGrid("need at least two grid nodes")
    vals = fmap.values()
    space = fmap.target
    if stencil == "all":
        if fmap.num_nodes > max_all_pairs:
            raise DegenerateGrid(f"all-pairs mode limited to {max_all_pairs} nodes")
        X = fmap.nodes()
        dx = cdist(X, X)
        dy = pairwise(space, vals)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(dx > 0, dy / np.where(dx > 0, dx, 1.0), 0.0)
        return float(q.max())
    grid = fmap.grid
    shaped = vals.reshape(*grid, *vals.shape[1:])
    h = fmap.h
    best = 0.0
    for off in _neighbor_offsets(fmap.k, stencil):
        src = []
        dst = []
        for o, g in zip(off, grid):
            if o > 0:
                src.append(slice(0, g - o))
                dst.append(slice(o, g))
            elif o < 0:
                src.append(slice(-o, g))
                dst.append(slice(0, g + o))
            else:
                src.append(slice(None))
                dst.append(slice(None))
        a = shaped[tuple(src)]
        b = shaped[tuple(dst)]
        if a.size == 0:
            continue
        tail = vals.shape[1:]
        a = a.reshape(-1, *tail)
        b = b.reshape(-1, *tail)
        step = float(np.sqrt(np.sum((np.asarray(off) * h) ** 2)))
        best = max(best, float(np.max(paired(space, a, b))) / step)
    return best


def lipschitz_violations(fmap: SampledMap, lip: float, rtol: float = 1e-9) -> int:
    """Count axis-neighbour pairs with d(f(p), f(q)) > lip * |p - q| * (1 + rtol)."""
    vals = fmap.values()
    shaped = vals.reshape(*fmap.grid, *vals.shape[1:])
    count = 0
    for axis in range(fmap.k):
        a = np.take(shaped, range(0, fmap.grid[axis] - 1), axis=axis).reshape(-1, *vals.shape[1:])
        b = np.take(shaped, range(1, fmap.grid[axis]), axis=axis).reshape(-1, *vals.shape[1:])
        d = paired(fmap.target, a, b)
        count += int(np.sum(d > lip * fmap.h[axis] * (1 + rtol)))
    return count


def load_metric_csv(path) -> MetricSpace:
    """Load an explicit metric space: square matrix with a header row of ids."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InvalidSpec(f"{path}: empty metric file")
    header = [c.strip() for c in rows[0]]
    body = rows[1:]
    # tolerate a leading label column
    if body and len(body[0]) == len(header) + 1:
        body = [r[1:] for r in body]
    elif header and header[0] == "" and body and len(body[0]) == len(header):
        header = header[1:]
        body = [r[1:] for r in body]
    mat = np.array([[float(c) for c in r] for r in body])
    return MetricSpace.explicit(mat, ids=header)
