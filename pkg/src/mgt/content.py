"""Hausdorff-content estimates for finite samples of an image set.

A finite point set has zero Hausdorff content, so the estimators here work
with the union of closed rho-balls around the samples.  Covers are restricted
to groupings of whole balls: the cluster-cover value

    CCV(P, rho, n) = min over partitions P = P_1 u ... u P_r of
                     sum_i (omega_n / 2^n) (diam P_i + 2 rho)^n

is always an upper bound for the content of the inflated set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyInput, TooManyPoints
from .metric import MetricSpace, pairwise, unit_ball_volume

ORACLE_CAP = 12


@dataclass
class ContentEstimate:
    n: int
    lower: float
    upper: float
    method: str
    clusters: list = field(default_factory=list)
    diameters: list = field(default_factory=list)
    rho: float = 0.0
    cell: Optional[float] = None

    @property
    def value(self) -> float:
        return self.upper

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lower": self.lower,
            "upper": self.upper,
            "method": self.method,
            "rho": self.rho,
            "cell": self.cell,
            "cover_witness": [
                {"points": [int(i) for i in c], "diameter": float(d)}
                for c, d in zip(self.clusters, self.diameters)
            ],
        }


def content_constant(n: int) -> float:
    """omega_n / 2^n, the normalising constant of H^n_infty."""
    return unit_ball_volume(n) / 2 ** n


def _distances(points, space: Optional[MetricSpace]) -> np.ndarray:
    if space is None:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        space = MetricSpace.euclidean(pts.shape[1] if pts.size else 1)
        points = pts
    return pairwise(space, points)


def _num_points(points) -> int:
    return len(points) if not isinstance(points, np.ndarray) else points.shape[0]


def ccv(D: np.ndarray, clusters, rho: float, n: int) -> float:
    """Cluster-cover value of an explicit partition given the distance matrix."""
    c = content_constant(n)
    total = 0.0
    for members in clusters:
        idx = np.asarray(members, dtype=int)
        diam = float(D[np.ix_(idx, idx)].max()) if len(idx) > 1 else 0.0
        total += c * (diam + 2 * rho) ** n
    return total


def content_oracle_exact(points, rho: float, n: int, space: Optional[MetricSpace] = None,
                         cap: int = ORACLE_CAP) -> ContentEstimate:
    """Minimum cluster-cover value over all set partitions of ``points``.

    Exact dynamic programme over subsets (3^p work), limited to ``cap`` points.
    """
    p = _num_points(points)
    if p > cap:
        raise TooManyPoints(f"oracle limited to {cap} points, got {p}")
    if p == 0:
        return ContentEstimate(n, 0.0, 0.0, "oracle", rho=rho)
    D = _distances(points, space)
    c = content_constant(n)
    full = (1 << p) - 1
    diam = np.zeros(full + 1)
    for mask in range(1, full + 1):
        top = mask.bit_length() - 1
        rest = mask ^ (1 << top)
        if rest:
            others = [i for i in range(top) if rest >> i & 1]
            diam[mask] = max(diam[rest], float(D[top, others].max()))
    cost = c * (diam + 2 * rho) ** n
    best = np.full(full + 1, np.inf)
    choice = np.zeros(full + 1, dtype=np.int64)
    best[0] = 0.0
    best_l = best.tolist()
    cost_l = cost.tolist()
    for mask in range(1, full + 1):
        low = mask & -mask
        rest = mask ^ low
        sub = rest
        bval = math.inf
        bpart = 0
        while True:
            part = sub | low
            v = cost_l[part] + best_l[mask ^ part]
            if v < bval:
                bval, bpart = v, part
            if sub == 0:
                break
            sub = (sub - 1) & rest
        best_l[mask] = bval
        choice[mask] = bpart
    clusters = []
    mask = full
    while mask:
        part = int(choice[mask])
        clusters.append([i for i in range(p) if part >> i & 1])
        mask ^= part
    clusters.sort()
    diams = [float(D[np.ix_(cl, cl)].max()) if len(cl) > 1 else 0.0 for cl in clusters]
    return ContentEstimate(n, 0.0, float(best_l[full]), "oracle", clusters, diams, rho=rho)


def content_greedy(points, rho: float, n: int, space: Optional[MetricSpace] = None,
                   tie_rtol: float = 1e-12) -> ContentEstimate:
    """Agglomerative upper bound for the cluster-cover value.

    Starts from singletons and repeatedly merges the pair of clusters whose
    merge most decreases the total; stops when no merge decreases it.  Gains
    within ``tie_rtol`` of the best are ties, broken by the lowest
    (cluster id, cluster id) pair.  A merged cluster keeps the lower id.
    """
    p = _num_points(points)
    if p == 0:
        raise EmptyInput("greedy content needs at least one point")
    D = _distances(points, space)
    c = content_constant(n)

    def cost(d):
        return c * (d + 2 * rho) ** n

    link = D.astype(float).copy()  # complete-linkage (max) distances
    diam = np.zeros(p)
    members = [[i] for i in range(p)]
    active = np.ones(p, dtype=bool)
    upper = np.triu(np.ones((p, p), dtype=bool), k=1)
    own = cost(diam)
    gain = np.where(upper, own[:, None] + own[None, :] - cost(np.maximum(link, 0.0)), -np.inf)
    total = float(own.sum())
    while active.sum() > 1:
        gmax = float(gain.max())
        scale = max(total, c * (2 * rho) ** n, 1e-300)
        if not gmax > tie_rtol * scale:
            break
        flat = int(np.flatnonzero(gain.ravel() >= gmax - tie_rtol * scale)[0])
        i, j = divmod(flat, p)
        diam[i] = max(diam[i], diam[j], link[i, j])
        link[i, :] = np.maximum(link[i, :], link[j, :])
        link[:, i] = link[i, :]
        members[i].extend(members[j])
        members[j] = []
        active[j] = False
        gain[j, :] = -np.inf
        gain[:, j] = -np.inf
        ci = cost(diam[i])
        new = ci + cost(diam) - cost(np.maximum(np.maximum(diam, diam[i]), link[i, :]))
        new[~active] = -np.inf
        new[i] = -np.inf
        gain[i, i + 1:] = new[i + 1:]
        gain[:i, i] = new[:i]
        total -= gmax
    clusters = sorted(sorted(m) for m in members if m)
    diams = [float(D[np.ix_(cl, cl)].max()) if len(cl) > 1 else 0.0 for cl in clusters]
    upper_value = float(sum(cost(d) for d in diams))
    return ContentEstimate(n, 0.0, upper_value, "greedy", clusters, diams, rho=rho)


def content_pixel_euclidean(points, cell: float, n: Optional[int] = None) -> ContentEstimate:
    """Occupied-cell measure of a point set in R^n on a grid of pitch ``cell``.

    The grid is anchored at the origin.  Equal to ``#cells * cell**n``; by the
    equality of content and Lebesgue measure in R^n this approximates the
    content of the sampled set.
    """
    if cell <= 0:
        raise ValueError("cell must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if n in (None, 1) else pts.reshape(-1, n)
    dim = pts.shape[1]
    if n is not None and n != dim:
        raise DimensionMismatch(f"content order {n} differs from target dimension {dim}")
    if len(pts) == 0:
        return ContentEstimate(dim, 0.0, 0.0, "pixel", cell=cell)
    # snap so that samples sitting on a cell boundary land in the upper cell
    idx = np.floor(pts / cell + 1e-9).astype(np.int64)
    uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    value = len(uniq) * cell ** dim
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    clusters = [order[bounds[g]:bounds[g + 1]].tolist() for g in range(len(uniq))]
    diams = [cell * math.sqrt(dim)] * len(uniq)
    return ContentEstimate(dim, value, value, "pixel", clusters, diams, cell=cell)


def content_estimate(points, n: int, space: Optional[MetricSpace] = None, method: str = "auto",
                     rho: Optional[float] = None, cell: Optional[float] = None,
                     lip: Optional[float] = None, h: Optional[float] = None,
                     cap: int = ORACLE_CAP) -> ContentEstimate:
    """Estimate H^n_infty of the image sampled by ``points``.

    ``auto`` uses the pixel count when the target is euclidean(n), otherwise
    the exact oracle for at most ``cap`` points and the greedy bound above it.
    The inflation radius defaults to ``lip * h / 2`` and the pixel pitch to
    ``sqrt(n) * lip * h``, where ``lip`` is a Lipschitz estimate of the map and
    ``h`` the spacing of the source samples.
    """
    if space is None:
        pts = np.asarray(points, dtype=float)
        space = MetricSpace.euclidean(pts.shape[1] if pts.ndim == 2 else 1)
    p = _num_points(points)
    if method == "auto":
        if space.kind == "euclidean" and space.dim == n:
            method = "pixel"
        elif p <= cap:
            method = "oracle"
        else:
            method = "greedy"
    if method == "pixel":
        if space.kind != "euclidean" or space.dim != n:
            raise DimensionMismatch(f"pixel content needs a euclidean({n}) target")
        if cell is None:
            if lip is None or h is None:
                raise ValueError("pixel content needs cell, or lip and h")
            cell = math.sqrt(n) * lip * h
        if cell <= 0:
            # zero Lipschitz estimate: every sample coincides
            return ContentEstimate(n, 0.0, 0.0, "pixel", [list(range(p))] if p else [], [0.0] if p else [], cell=0.0)
        return content_pixel_euclidean(points, cell, n)
    if rho is None:
        rho = 0.5 * lip * h if lip is not None and h is not None else 0.0
    if method not in ("oracle", "greedy"):
        raise ValueError(f"unknown content method {method!r}")
    # coincident samples can always share a cluster at no cost, so both
    # cluster methods run on the distinct points only
    inverse = None
    if isinstance(points, np.ndarray) and points.dtype.kind == "f" and p > 1:
        uniq, inverse = np.unique(points, axis=0, return_inverse=True)
        if len(uniq) == p:
            inverse = None
        else:
            points, inverse = uniq, np.asarray(inverse).ravel()
    if method == "oracle":
        est = content_oracle_exact(points, rho, n, space, cap=cap)
    else:
        est = content_greedy(points, rho, n, space)
    if inverse is not None:
        groups = [[] for _ in range(len(points))]
        for i, u in enumerate(inverse.tolist()):
            groups[u].append(i)
        pairs = sorted((sorted(i for u in cl for i in groups[u]), d) for cl, d in zip(est.clusters, est.diameters))
        est.clusters = [c for c, _ in pairs]
        est.diameters = [d for _, d in pairs]
    return est
