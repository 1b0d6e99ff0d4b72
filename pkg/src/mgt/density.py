"""Upper and lower n-densities of sampled maps over finite radius ladders.

For a point x the ratio at radius r is

    H^n_infty(f(B(x, r) n A)) / (omega_n r^n)

(for the cube variant, the cube Q(x, 2r) of side d = 2r and denominator
omega_n d^n).  The limsup / liminf as r -> 0 are approximated by the maximum /
minimum over a geometric ladder of radii, and the ladder is reported with
every profile.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .content import content_estimate
from .errors import EmptyField, OutOfDomain, RadiusTooSmall
from .metric import SampledMap, paired, unit_ball_volume

# lattice points per radius used to sample a ball, by domain dimension; on the
# cluster path the inflation rho = L r / (2q) biases ratios upward by about 1/(2q)
PIXEL_RESOLUTION = {1: 256, 2: 32, 3: 12}
CLUSTER_RESOLUTION = {1: 24, 2: 10, 3: 5}


@dataclass(frozen=True)
class LadderSpec:
    """Geometric radius ladder: ``count`` radii, ratio ``factor`` between neighbours.

    ``top`` defaults to a quarter of the box reach (half the shortest box
    side).  Radii below ``floor_factor * h`` are replaced by that floor, so the
    smallest radius of a long ladder sits exactly at 2h.
    """

    count: int = 8
    factor: float = 0.5
    top: Optional[float] = None
    floor_factor: float = 2.0
    radii: Optional[tuple] = None

    def resolve(self, fmap: SampledMap) -> list:
        floor = self.floor_factor * fmap.h_max
        if self.radii is not None:
            rs = sorted({float(r) for r in self.radii}, reverse=True)
            if rs[-1] < floor * (1 - 1e-12):
                raise RadiusTooSmall(f"radius {rs[-1]} below {self.floor_factor}h = {floor}")
            return rs
        if not 0 < self.factor < 1:
            raise ValueError("ladder factor must lie in (0, 1)")
        top = self.top if self.top is not None else 0.25 * 0.5 * float(np.min(fmap.hi - fmap.lo))
        if top < floor * (1 - 1e-12):
            raise RadiusTooSmall(f"top radius {top} below {self.floor_factor}h = {floor}")
        rs = []
        for j in range(self.count):
            r = max(top * self.factor ** j, floor)
            if not rs or r < rs[-1] * (1 - 1e-12):
                rs.append(r)
        return rs

    def to_dict(self) -> dict:
        return {"count": self.count, "factor": self.factor, "top": self.top,
                "floor_factor": self.floor_factor,
                "radii": list(self.radii) if self.radii is not None else None}


@dataclass
class DensityProfile:
    x: np.ndarray
    radii: list
    ratios: list
    shape: str = "ball"
    contents: list = field(default_factory=list)

    @property
    def theta_upper(self) -> float:
        return max(self.ratios)

    @property
    def theta_lower(self) -> float:
        return min(self.ratios)

    @property
    def ladder(self) -> list:
        return list(zip(self.radii, self.ratios))

    def to_dict(self) -> dict:
        return {"x": [float(v) for v in self.x], "shape": self.shape,
                "ladder": [[float(r), float(q)] for r, q in self.ladder],
                "theta_upper": float(self.theta_upper), "theta_lower": float(self.theta_lower)}


@lru_cache(maxsize=64)
def _lattice(k: int, q: int, shape: str) -> np.ndarray:
    offs = np.array(list(itertools.product(range(-q, q + 1), repeat=k)), dtype=float)
    if shape == "ball":
        offs = offs[np.sum(offs * offs, axis=1) <= q * q + 1e-9]
    offs.setflags(write=False)
    return offs


@lru_cache(maxsize=64)
def _step_pairs_cached(k: int, q: int, shape: str):
    offs = _lattice(k, q, shape).astype(int)
    keys = {tuple(o): i for i, o in enumerate(offs.tolist())}
    a_idx, b_idx = [], []
    for axis in range(k):
        for o, i in keys.items():
            nb = list(o)
            nb[axis] += 1
            j = keys.get(tuple(nb))
            if j is not None:
                a_idx.append(i)
                b_idx.append(j)
    return np.array(a_idx, dtype=int), np.array(b_idx, dtype=int)


def _resolve_method(fmap: SampledMap, n: int, method: str) -> str:
    if method != "auto":
        return method
    t = fmap.target
    return "pixel" if t.kind == "euclidean" and t.dim == n else "cluster"


def _region_samples(fmap: SampledMap, x: np.ndarray, r: float, shape: str, sampling: str,
                    resolution: Optional[int], method: str):
    """Sample points of B(x, r) (or Q(x, 2r)), their images, the sample pitch
    and the local Lipschitz estimate used for the inflation/cell size."""
    k = fmap.k
    if sampling == "grid":
        X = fmap.nodes()
        if shape == "ball":
            sel = np.sum((X - x) ** 2, axis=1) <= r * r * (1 + 1e-12)
        else:
            sel = np.all(np.abs(X - x) <= r * (1 + 1e-12), axis=1)
        sel &= fmap.in_domain(X)
        lip = fmap.grid_lipschitz
        return fmap.values()[sel], fmap.h_max, lip
    table = PIXEL_RESOLUTION if method == "pixel" else CLUSTER_RESOLUTION
    q = int(resolution or table.get(k, 2))
    s = r / q
    offs = _lattice(k, q, shape)
    P = x + s * offs
    vals = fmap.evaluate(P)
    a, b = _step_pairs_cached(k, q, shape)
    lip = float(np.max(paired(fmap.target, vals[a], vals[b]))) / s if len(a) else 0.0
    keep = fmap.in_domain(P)
    return vals[keep], s, lip


def density_profile(fmap: SampledMap, x, n: Optional[int] = None, ladder: LadderSpec = LadderSpec(),
                    shape: str = "ball", method: str = "auto", sampling: str = "lattice",
                    resolution: Optional[int] = None) -> DensityProfile:
    """Ladder of content ratios at ``x``.

    Radii larger than the distance from ``x`` to the box boundary are dropped
    so every ball lies inside the sampled region.  ``sampling='lattice'``
    samples each ball on its own lattice of pitch r/q (evaluating the map off
    the grid); ``sampling='grid'`` uses the map's grid nodes.
    """
    if shape not in ("ball", "cube"):
        raise ValueError(f"shape must be 'ball' or 'cube', got {shape!r}")
    n = fmap.n if n is None else n
    x = np.asarray(x, dtype=float).ravel()
    if not fmap.in_domain(x[None, :])[0]:
        raise OutOfDomain(f"{x.tolist()} is outside the domain")
    reach = float(fmap.reach(x[None, :])[0])
    radii = [r for r in ladder.resolve(fmap) if r <= reach * (1 + 1e-12)]
    if not radii:
        raise RadiusTooSmall(f"no ladder radius fits at distance {reach:.3g} from the boundary")
    m = _resolve_method(fmap, n, method)
    content_method = "auto" if m == "cluster" else m
    omega = unit_ball_volume(n)
    ratios, contents = [], []
    for r in radii:
        vals, s, lip = _region_samples(fmap, x, r, shape, sampling, resolution, m)
        est = content_estimate(vals, n, fmap.target, method=content_method, lip=lip, h=s)
        denom = omega * (r if shape == "ball" else 2 * r) ** n
        ratios.append(est.upper / denom)
        contents.append(est.upper)
    return DensityProfile(x, radii, ratios, shape, contents)


def field_points(fmap: SampledMap, stride: int, ladder: LadderSpec = LadderSpec()) -> np.ndarray:
    """Every ``stride``-th grid node whose distance to the boundary admits the
    smallest ladder radius (at least 2h), restricted to the domain."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    axes = [ax[::stride] for ax in fmap.axes()]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    r_min = ladder.resolve(fmap)[-1]
    keep = fmap.reach(X) >= max(r_min, 2 * fmap.h_max) * (1 - 1e-12)
    keep &= fmap.in_domain(X)
    return X[keep]


def density_field(fmap: SampledMap, stride: int, n: Optional[int] = None, ladder: LadderSpec = LadderSpec(),
                  shape: str = "ball", method: str = "auto", sampling: str = "lattice",
                  resolution: Optional[int] = None, threads: int = 1,
                  points: Optional[np.ndarray] = None) -> list:
    """Density profiles at every field point, ordered by node index."""
    X = field_points(fmap, stride, ladder) if points is None else np.atleast_2d(points)

    def one(x):
        return density_profile(fmap, x, n, ladder, shape, method, sampling, resolution)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, X))
    return [one(x) for x in X]


def positive_density_mass(profiles: Sequence[DensityProfile], threshold: float) -> float:
    """Fraction of profiles whose upper density estimate exceeds ``threshold``."""
    if not profiles:
        raise EmptyField("density field is empty")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return float(np.mean([p.theta_upper > threshold for p in profiles]))


def field_integral(profiles: Sequence[DensityProfile], volume: float, which: str = "lower") -> float:
    """Integral of a density estimate over the domain, as field average times volume."""
    if not profiles:
        raise EmptyField("density field is empty")
    vals = [p.theta_lower if which == "lower" else p.theta_upper for p in profiles]
    return float(np.mean(vals)) * volume
