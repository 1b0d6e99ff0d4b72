"""Closed-form test maps with known ground truth, and fold-map bounds."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidDims, InvalidLambda, InvalidSpec
from .metric import MetricSpace, SampledMap, pairwise, unit_ball_volume

KINDS = ("linear", "projection", "smooth_poly", "fold", "kuratowski_image", "constant")


@dataclass
class MapSpec:
    """Declarative description of a gallery map.

    ``box`` is a list of ``[lo, hi]`` pairs, one per domain axis; ``grid`` is
    the number of sample nodes per axis (an int, or one int per axis).
    """

    kind: str
    params: dict = field(default_factory=dict)
    box: list = field(default_factory=lambda: [[0.0, 1.0], [0.0, 1.0]])
    grid: object = 65

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": copy.deepcopy(self.params),
                "box": [list(map(float, b)) for b in self.box], "grid": self.grid}

    @classmethod
    def from_dict(cls, d: dict) -> "MapSpec":
        if "kind" not in d:
            raise InvalidSpec("map spec needs a 'kind'")
        return cls(d["kind"], dict(d.get("params", {})), [list(b) for b in d.get("box", [[0, 1], [0, 1]])],
                   d.get("grid", 65))


# ---------------------------------------------------------------------------
# fold map


def fold_stage(x: np.ndarray, y: np.ndarray, stage: int):
    """One reflection step on [0, 2^-(stage-1)]^2 onto [0, 2^-stage]^2.

    Case intervals are half-open: [0, 2^-stage) is kept, the rest reflected.
    """
    half = 2.0 ** -stage
    full = 2.0 ** -(stage - 1)
    return np.where(x >= half, full - x, x), np.where(y >= half, full - y, y)


def fold_intermediate(X: np.ndarray, N: int):
    """The point f_N o ... o f_1 (x, y) before projection."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x, y = X[:, 0], X[:, 1]
    for s in range(1, N + 1):
        x, y = fold_stage(x, y, s)
    return x, y


def fold_crease_distance(X: np.ndarray, N: int) -> np.ndarray:
    """Distance to the nearest interior crease line x = j 2^-N of the folded map."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = X[:, 0] * 2 ** N
    j = np.clip(np.rint(t), 1, 2 ** N - 1)
    return np.abs(t - j) / 2 ** N


def fold_K_bound(lam: float, N: int) -> float:
    """Upper bound lam^4 2^(1-N) sqrt(2) on the measure of an admissible set K."""
    if not lam > 1:
        raise InvalidLambda(f"lambda must exceed 1, got {lam}")
    if N < 1:
        raise InvalidSpec("N must be at least 1")
    return lam ** 4 * 2.0 ** (1 - N) * math.sqrt(2.0)


def fold_slice_capacity(fmap: SampledMap, lam: float, y: float, grid: Optional[int] = None) -> float:
    """Measure of the largest greedily built grid subset of a horizontal slice
    on which the fold map is lam-bi-Lipschitz (with G the identity).

    Nodes are scanned left to right and kept when the map stays
    lam-bi-Lipschitz against every node kept so far; the measure is
    ``#kept * h`` with ``h`` the slice spacing.
    """
    spec = fmap.spec
    if spec is None or spec.kind != "fold":
        raise InvalidSpec("slice capacity is defined for fold maps only")
    if not lam >= 1:
        raise InvalidLambda(f"lambda must be at least 1, got {lam}")
    grid = int(grid or fmap.grid[0])
    xs = np.linspace(0.0, 1.0, grid)
    h = 1.0 / (grid - 1)
    vals = fmap.evaluate(np.column_stack([xs, np.full(grid, float(y))]))[:, 0]
    kept_x = np.empty(grid)
    kept_f = np.empty(grid)
    count = 0
    slack = 1e-12
    for xi, fi in zip(xs, vals):
        if count:
            dx = xi - kept_x[:count]
            df = np.abs(fi - kept_f[:count])
            if np.any(df < dx / lam * (1 - slack)) or np.any(df > lam * dx * (1 + slack)):
                continue
        kept_x[count] = xi
        kept_f[count] = fi
        count += 1
    return count * h


def fold_slice_bound(lam: float, N: int, h: float) -> float:
    """Largest slice capacity allowed at grid spacing h: lam 2^-N (1 + 5h)."""
    return lam * 2.0 ** -N * (1 + 5 * h)


# ---------------------------------------------------------------------------
# coarea


def coarea_rhs(n: int, m: int, L: float, measure_A: float) -> float:
    """L^m (omega_{n-m} omega_m / omega_n) H^n(A)."""
    if not 0 <= m <= n:
        raise InvalidDims(f"need 0 <= m <= n, got n={n}, m={m}")
    return L ** m * unit_ball_volume(n - m) * unit_ball_volume(m) / unit_ball_volume(n) * measure_A


def coarea_lhs(spec: MapSpec) -> float:
    """Closed-form integral of fibre lengths over the image, for gallery maps into R
    on the unit square."""
    box = np.asarray(spec.box, dtype=float)
    if box.shape != (2, 2) or not np.allclose(box, [[0, 1], [0, 1]]):
        raise InvalidSpec("analytic fibre integrals are tabulated on [0,1]^2 only")
    if spec.kind == "projection" and spec.params.get("n", 1) == 1:
        return 1.0  # vertical unit fibres over [0, 1]
    if spec.kind == "constant":
        return 0.0  # the image is a single H^1-null point
    if spec.kind == "linear":
        A = np.asarray(spec.params["matrix"], dtype=float)
        if A.shape == (1, 2) and np.all(A > 0):
            a, b = A[0]
            # level sets ax + by = t are segments; integrating their lengths
            # over t recovers the area times |grad| = sqrt(a^2 + b^2)
            return math.hypot(a, b)
    raise InvalidSpec(f"no analytic fibre integral for {spec.kind}")


# ---------------------------------------------------------------------------
# map construction


def _poly_rule(components):
    comps = []
    for comp in components:
        coefs = np.asarray([t["coef"] for t in comp], dtype=float)
        powers = np.asarray([t["powers"] for t in comp], dtype=float)
        comps.append((coefs, powers))

    def rule(X):
        out = np.empty((len(X), len(comps)))
        for j, (coefs, powers) in enumerate(comps):
            terms = np.prod(X[:, None, :] ** powers[None, :, :], axis=2)
            out[:, j] = terms @ coefs
        return out

    return rule


def make_map(spec, grid=None) -> SampledMap:
    """Build the evaluable :class:`SampledMap` described by ``spec``."""
    if isinstance(spec, dict):
        spec = MapSpec.from_dict(spec)
    if spec.kind not in KINDS:
        raise InvalidSpec(f"unknown map kind {spec.kind!r}; expected one of {KINDS}")
    box = np.asarray(spec.box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise InvalidSpec("box must be a list of [lo, hi] pairs")
    lo, hi = box[:, 0], box[:, 1]
    k = len(lo)
    grid = spec.grid if grid is None else grid
    p = spec.params
    common = dict(lo=lo, hi=hi, grid=grid, spec=spec)

    if spec.kind == "linear":
        A = np.atleast_2d(np.asarray(p["matrix"], dtype=float))
        if A.shape[1] != k:
            raise InvalidSpec(f"matrix has {A.shape[1]} columns but the domain is R^{k}")
        b = np.asarray(p.get("offset", np.zeros(A.shape[0])), dtype=float)
        n = int(p.get("n", min(A.shape[0], k)))
        return SampledMap(target=MetricSpace.euclidean(A.shape[0]), n=n, rule=lambda X: X @ A.T + b,
                          affine=True, **common)
    if spec.kind == "projection":
        n = int(p.get("n", 1))
        if not 1 <= n <= k:
            raise InvalidSpec("projection needs 1 <= n <= k")
        return SampledMap(target=MetricSpace.euclidean(n), n=n, rule=lambda X: X[:, :n].copy(),
                          affine=True, lip_hint=1.0, **common)
    if spec.kind == "smooth_poly":
        comps = p["components"]
        rule = _poly_rule(comps)
        n = int(p.get("n", min(len(comps), k)))
        return SampledMap(target=MetricSpace.euclidean(len(comps)), n=n, rule=rule, **common)
    if spec.kind == "constant":
        value = np.atleast_1d(np.asarray(p.get("value", [0.0]), dtype=float))
        n = int(p.get("n", 1))
        return SampledMap(target=MetricSpace.euclidean(len(value)), n=n,
                          rule=lambda X: np.tile(value, (len(X), 1)), affine=True, lip_hint=0.0, **common)
    if spec.kind == "fold":
        N = int(p.get("N", 1))
        if N < 1:
            raise InvalidSpec("fold needs N >= 1")
        if k != 2 or not np.allclose(box, [[0, 1], [0, 1]]):
            raise InvalidSpec("fold is defined on [0,1]^2")
        return SampledMap(target=MetricSpace.euclidean(1), n=1,
                          rule=lambda X: fold_intermediate(X, N)[0][:, None], lip_hint=1.0,
                          crease_distance=lambda X: fold_crease_distance(X, N), **common)
    # kuratowski_image
    base_spec = p["base"]
    base = make_map(base_spec, grid=grid)
    imgs = base.values()
    landmarks = np.unique(imgs, axis=0)
    count = p.get("landmarks", "all")
    if count != "all":
        count = int(count)
        if count < 1:
            raise InvalidSpec("need at least one landmark")
        if count < len(landmarks):
            landmarks = landmarks[np.linspace(0, len(landmarks) - 1, count).round().astype(int)]
    base_space = base.target
    offset = pairwise(base_space, landmarks, landmarks[:1])[:, 0]

    def rule(X):
        return pairwise(base_space, base.evaluate(X), landmarks) - offset[None, :]

    return SampledMap(lo=base.lo, hi=base.hi, grid=base.grid, target=MetricSpace.sup_norm(len(landmarks)),
                      n=base.n, rule=rule, lip_hint=base.lip_hint, crease_distance=base.crease_distance,
                      spec=spec)


def _unit_square(kind, params, grid=129):
    return MapSpec(kind, params, [[0.0, 1.0], [0.0, 1.0]], grid)


def gallery_spec(name: str, grid: Optional[int] = None, N: Optional[int] = None) -> MapSpec:
    """Named gallery entry as a :class:`MapSpec`."""
    g = 129 if grid is None else int(grid)
    if name == "projection":
        return _unit_square("projection", {"n": 1}, g)
    if name == "diagonal":
        return _unit_square("linear", {"matrix": [[1.0, 1.0]]}, g)
    if name == "square":
        return MapSpec("smooth_poly", {"components": [[{"coef": 1.0, "powers": [2, 0]}]]},
                       [[0.5, 1.5], [0.0, 1.0]], g)
    if name == "fold":
        return _unit_square("fold", {"N": 3 if N is None else int(N)}, g)
    if name == "constant":
        return _unit_square("constant", {"value": [0.0]}, g)
    if name == "identity":
        return MapSpec("linear", {"matrix": [[1.0]]}, [[0.0, 1.0]], 101 if grid is None else g)
    if name == "kuratowski":
        return _unit_square("kuratowski_image", {"base": _unit_square("projection", {"n": 1}, g).to_dict(),
                                                 "landmarks": "all"}, g)
    raise InvalidSpec(f"unknown gallery entry {name!r}")


GALLERY = {
    "projection": "(x, y) -> x on [0,1]^2",
    "diagonal": "(x, y) -> x + y on [0,1]^2",
    "square": "(x, y) -> x^2 on [0.5,1.5] x [0,1]",
    "fold": "N-fold reflection map followed by projection, [0,1]^2 -> [0, 2^-N]",
    "constant": "(x, y) -> 0 on [0,1]^2",
    "identity": "x -> x on [0,1]",
    "kuratowski": "projection post-composed with its Kuratowski embedding into l-infinity",
}
