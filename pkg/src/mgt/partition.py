"""Dyadic upper bounds for the (n, m)-Hausdorff content of a map on a cube.

The (n, m)-content is an infimum of sum_j H^n_infty(f(Q_j)) d_j^m over
partitions of the cube Q into subcubes Q_j of side d_j.  Restricting to
dyadic partitions gives a tree DP:

    cost(Q') = min(H^n_infty(f(Q')) side(Q')^m, sum of cost(children))

whose value upper-bounds the infimum.  Cube addresses are dot-joined child
numbers from the root ("" is the root, "0.3.1" a depth-3 cube); child
numbers put axis 0 in the most significant bit.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .content import content_estimate
from .density import LadderSpec, density_field
from .errors import DepthTooDeep, InvalidDims, NonCubeDomain
from .jacobian import approx_derivative, jacobian_n
from .metric import SampledMap, unit_ball_volume


@dataclass
class CubeTerm:
    address: str
    level: int
    index: tuple
    side: float
    content: float
    term: float

    def to_dict(self) -> dict:
        return {"address": self.address, "side": self.side, "content": self.content, "term": self.term}


@dataclass
class PartitionResult:
    n: int
    m: int
    depth_max: int
    value: float
    cut_set: list
    per_cube: list = field(default_factory=list)
    root_term: float = 0.0

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "depth_max": self.depth_max, "value": self.value,
                "root_term": self.root_term, "cut_set": list(self.cut_set),
                "per_cube": [c.to_dict() for c in self.per_cube]}


def _address(index: tuple, level: int) -> str:
    k = len(index)
    parts = []
    for l in range(1, level + 1):
        shift = level - l
        child = 0
        for axis in range(k):
            child = (child << 1) | ((index[axis] >> shift) & 1)
        parts.append(str(child))
    return ".".join(parts)


def _check_cube(fmap: SampledMap) -> float:
    sides = fmap.hi - fmap.lo
    if not np.allclose(sides, sides[0], rtol=1e-12, atol=0):
        raise NonCubeDomain(f"domain box has sides {sides.tolist()}")
    return float(sides[0])


def leaf_indices(fmap: SampledMap, depth: int) -> np.ndarray:
    """Leaf cube index (per axis) of every grid node.

    Nodes on a shared face go to the lower cube, i.e. the child with the
    lexicographically smallest address.
    """
    side = _check_cube(fmap)
    cells = 2 ** depth
    t = (fmap.nodes() - fmap.lo) / (side / cells)
    idx = np.ceil(t - 1e-9).astype(np.int64) - 1
    return np.clip(idx, 0, cells - 1)


def cube_terms(fmap: SampledMap, n: int, m: int, depth_max: int, method: str = "auto",
               threads: int = 1) -> dict:
    """Content term H^n_infty(f(Q')) side(Q')^m for every dyadic cube down to ``depth_max``.

    Keys are ``(level, index)`` with ``index`` the per-axis cube index at that level.
    """
    side = _check_cube(fmap)
    k = fmap.k
    if n + m != k:
        raise InvalidDims(f"n + m = {n + m} must equal the domain dimension {k}")
    leaf = leaf_indices(fmap, depth_max)
    vals = fmap.values()
    lip, h = fmap.grid_lipschitz, fmap.h_max
    # leaf occupancy
    counts = np.zeros((2 ** depth_max,) * k, dtype=np.int64)
    np.add.at(counts, tuple(leaf.T), 1)
    if counts.min() < 2 ** k:
        raise DepthTooDeep(f"depth {depth_max} leaves hold as few as {counts.min()} nodes; need {2 ** k}")

    jobs = []
    for level in range(depth_max + 1):
        idx = leaf >> (depth_max - level)
        keys = np.ravel_multi_index(tuple(idx.T), (2 ** level,) * k)
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        bounds = np.flatnonzero(np.diff(sorted_keys)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(order)]])
        for s, e in zip(starts, ends):
            cube = tuple(int(i) for i in np.unravel_index(sorted_keys[s], (2 ** level,) * k))
            jobs.append((level, cube, order[s:e]))

    def evaluate(job):
        level, cube, members = job
        est = content_estimate(vals[members], n, fmap.target, method=method, lip=lip, h=h)
        d = side / 2 ** level
        return (level, cube), CubeTerm(_address(cube, level), level, cube, d, est.upper, est.upper * d ** m)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, jobs))
    else:
        results = [evaluate(j) for j in jobs]
    return dict(results)


def _children(level: int, index: tuple):
    k = len(index)
    for bits in itertools.product((0, 1), repeat=k):
        yield level + 1, tuple(2 * i + b for i, b in zip(index, bits))


def dyadic_dp(terms: dict, k: int, depth_max: int):
    """Bottom-up minimisation over dyadic cut sets; returns (value, cut keys).

    A parent is kept whenever its own term is no larger than its children's
    optimum, so ties resolve to the coarser partition.
    """
    best = {}
    for level in range(depth_max, -1, -1):
        for index in itertools.product(range(2 ** level), repeat=k):
            own = terms[(level, index)].term
            if level == depth_max:
                best[(level, index)] = (own, None)
                continue
            split = sum(best[c][0] for c in _children(level, index))
            best[(level, index)] = (own, None) if own <= split else (split, True)

    cut = []
    stack = [(0, (0,) * k)]
    while stack:
        key = stack.pop()
        if best[key][1] is None:
            cut.append(key)
        else:
            stack.extend(reversed(list(_children(*key))))
    return best[(0, (0,) * k)][0], cut


def enumerate_cut_sets(k: int, depth: int, level: int = 0, index: Optional[tuple] = None):
    """Every dyadic partition of the cube down to ``depth`` (brute force)."""
    index = (0,) * k if index is None else index
    yield [(level, index)]
    if level < depth:
        child_options = [list(enumerate_cut_sets(k, depth, *c)) for c in _children(level, index)]
        for combo in itertools.product(*child_options):
            yield [key for part in combo for key in part]


def nm_content_dyadic(fmap: SampledMap, n: Optional[int] = None, m: Optional[int] = None,
                      depth_max: int = 4, method: str = "auto", threads: int = 1) -> PartitionResult:
    """Dyadic-partition upper bound for the (n, m)-content of ``fmap`` on its cube."""
    n = fmap.n if n is None else n
    m = fmap.k - n if m is None else m
    terms = cube_terms(fmap, n, m, depth_max, method, threads)
    value, cut = dyadic_dp(terms, fmap.k, depth_max)
    per_cube = sorted((terms[key] for key in cut), key=lambda c: c.address)
    root = terms[(0, (0,) * fmap.k)].term
    return PartitionResult(n, m, depth_max, float(value), [c.address for c in per_cube], per_cube, root)


def prop51_constant(n: int, m: int) -> float:
    """(omega_n / 2^n) (n + m)^(n/2)."""
    return unit_ball_volume(n) / 2 ** n * (n + m) ** (n / 2)


def check_prop51(fmap: SampledMap, n: Optional[int] = None, m: Optional[int] = None, depth_max: int = 4,
                 ladder: LadderSpec = LadderSpec(), stride: int = 8, factor: float = 1.1,
                 threads: int = 1, partition: Optional[PartitionResult] = None) -> dict:
    """Compare the dyadic (n, m)-content with the density integral bound.

    rhs = (omega_n/2^n)(n+m)^(n/2) * integral of the lower density estimate,
    the integral being the field average times |Q|.  For euclidean(n) targets
    the same bound with |J^n f| in place of the density is reported too.
    """
    n = fmap.n if n is None else n
    m = fmap.k - n if m is None else m
    part = partition or nm_content_dyadic(fmap, n, m, depth_max, threads=threads)
    volume = float(np.prod(fmap.hi - fmap.lo))
    profiles = density_field(fmap, stride, n, ladder, threads=threads)
    const = prop51_constant(n, m)
    integral = float(np.mean([p.theta_lower for p in profiles])) * volume
    rhs = const * integral
    report = {
        "lhs": part.value,
        "rhs": rhs,
        "factor": factor,
        "slack": rhs - part.value,
        "holds": bool(part.value <= rhs * factor),
        "field_points": len(profiles),
    }
    if fmap.target.kind == "euclidean" and fmap.target.dim == n:
        jac = [jacobian_n(approx_derivative(fmap, p.x), n) for p in profiles]
        rhs_j = const * float(np.mean(jac)) * volume
        report.update({"rhs_jacobian": rhs_j, "holds_jacobian": bool(part.value <= rhs_j * factor)})
    return report
