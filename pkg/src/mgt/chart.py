"""Constructive normal-form charts for sampled maps.

Given a point x0 where an n x n minor of the derivative is invertible, the
chart straightens the selected target components: with ``rows`` the chosen
target components and ``cols`` the chosen domain axes,

    G(p) = (f_rows(p), p_rest)        rest = axes not in cols

is a local diffeomorphism, and pi(z) = z_rows satisfies
pi(f(G^-1(u, v))) = u wherever G is inverted.  G^-1 is computed by Newton's
method started at x0; the certified box is the largest box (halving from half
the distance to the boundary) on which Newton round-trips every probe and the
minor keeps at least half its central value with the same sign.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .content import content_estimate
from .errors import ChartShrunkToGrid, EmptyInput, NonComponentTarget, NoFullRankMinor
from .jacobian import approx_derivative, default_step
from .metric import SampledMap, pairwise

EXHAUSTIVE_LIMIT = 10_000
NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50


def select_minor(D, n: int, theta_rank: Optional[float] = None):
    """Row and column index sets of the n x n minor of ``D`` with largest |det|.

    Exhaustive when C(N, n) C(k, n) <= 10^4, else greedy complete pivoting.
    Ties go to the lexicographically first index sets.  Returns
    ``(rows, cols, det)`` with sorted index tuples and the signed determinant.
    """
    D = np.atleast_2d(np.asarray(getattr(D, "matrix", D), dtype=float))
    N, k = D.shape
    if n > min(N, k):
        raise NoFullRankMinor(f"a {N} x {k} matrix has no {n} x {n} minor")
    sv = np.linalg.svd(D, compute_uv=False)
    smax = float(sv[0]) if len(sv) else 0.0
    theta = 1e-6 * smax ** n if theta_rank is None else theta_rank
    if math.comb(N, n) * math.comb(k, n) <= EXHAUSTIVE_LIMIT:
        best, best_rows, best_cols = -1.0, None, None
        best_det = 0.0
        for rows in itertools.combinations(range(N), n):
            sub = D[list(rows)]
            for cols in itertools.combinations(range(k), n):
                det = float(np.linalg.det(sub[:, list(cols)]))
                if abs(det) > best * (1 + 1e-12) + 1e-300:
                    best, best_rows, best_cols, best_det = abs(det), rows, cols, det
    else:
        A = D.copy()
        rows_left, cols_left = list(range(N)), list(range(k))
        picked_r, picked_c = [], []
        for _ in range(n):
            sub = np.abs(A[np.ix_(rows_left, cols_left)])
            i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
            r, c = rows_left[i], cols_left[j]
            picked_r.append(r)
            picked_c.append(c)
            if A[r, c] != 0:
                A = A - np.outer(A[:, c], A[r, :]) / A[r, c]
            rows_left.remove(r)
            cols_left.remove(c)
        best_rows, best_cols = tuple(sorted(picked_r)), tuple(sorted(picked_c))
        best_det = float(np.linalg.det(D[np.ix_(best_rows, best_cols)]))
        best = abs(best_det)
    if smax == 0.0 or best < theta or best_rows is None:
        raise NoFullRankMinor(f"largest {n} x {n} minor {best:.3g} is below {theta:.3g}")
    return tuple(best_rows), tuple(best_cols), best_det


@dataclass
class Chart:
    center: np.ndarray
    n: int
    rows: tuple
    cols: tuple
    box_lo: np.ndarray
    box_hi: np.ndarray
    minor_det: float
    newton_tol: float = NEWTON_TOL
    newton_maxiter: int = NEWTON_MAXITER
    h_fd: float = 1e-5
    kind: str = "map"  # "map": G built from f; "affine": its linearisation at the centre
    G0: Optional[np.ndarray] = None
    DG0: Optional[np.ndarray] = None
    lip_G: float = float("nan")
    lip_G_inv: float = float("nan")
    halvings: int = 0

    @property
    def k(self) -> int:
        return len(self.center)

    @property
    def rest(self) -> tuple:
        return tuple(i for i in range(self.k) if i not in self.cols)

    def pi(self, Z) -> np.ndarray:
        """Projection onto the selected target components."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return Z[:, list(self.rows)]

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(), "n": self.n,
            "image_rows": list(self.rows), "domain_cols": list(self.cols),
            "box": [self.box_lo.tolist(), self.box_hi.tolist()],
            "minor_det_at_center": self.minor_det,
            "newton": {"tol": self.newton_tol, "max_iter": self.newton_maxiter, "h_fd": self.h_fd},
            "kind": self.kind,
            "G0": None if self.G0 is None else self.G0.tolist(),
            "DG0": None if self.DG0 is None else self.DG0.tolist(),
            "bi_lipschitz": {"G": self.lip_G, "G_inv": self.lip_G_inv},
            "halvings": self.halvings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chart":
        newton = d.get("newton", {})
        bl = d.get("bi_lipschitz", {})
        return cls(
            center=np.asarray(d["center"], dtype=float), n=int(d["n"]),
            rows=tuple(d["image_rows"]), cols=tuple(d["domain_cols"]),
            box_lo=np.asarray(d["box"][0], dtype=float), box_hi=np.asarray(d["box"][1], dtype=float),
            minor_det=float(d["minor_det_at_center"]),
            newton_tol=float(newton.get("tol", NEWTON_TOL)),
            newton_maxiter=int(newton.get("max_iter", NEWTON_MAXITER)),
            h_fd=float(newton.get("h_fd", 1e-5)), kind=d.get("kind", "map"),
            G0=None if d.get("G0") is None else np.asarray(d["G0"], dtype=float),
            DG0=None if d.get("DG0") is None else np.asarray(d["DG0"], dtype=float),
            lip_G=float(bl.get("G", float("nan"))), lip_G_inv=float(bl.get("G_inv", float("nan"))),
            halvings=int(d.get("halvings", 0)),
        )


# ---------------------------------------------------------------------------
# G, DG and the Newton inverse


def chart_forward(chart: Chart, fmap: SampledMap, P) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if chart.kind == "affine":
        return chart.G0 + (P - chart.center) @ chart.DG0.T
    out = np.empty_like(P)
    out[:, :chart.n] = fmap.evaluate(P)[:, list(chart.rows)]
    out[:, chart.n:] = P[:, list(chart.rest)]
    return out


def chart_jacobian(chart: Chart, fmap: SampledMap, P) -> np.ndarray:
    """DG at each point, shape (M, k, k), by central differences of f."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    M, k = P.shape
    if chart.kind == "affine":
        return np.broadcast_to(chart.DG0, (M, k, k)).copy()
    h = chart.h_fd
    J = np.zeros((M, k, k))
    rows = list(chart.rows)
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        J[:, :chart.n, j] = (fmap.evaluate(P + e)[:, rows] - fmap.evaluate(P - e)[:, rows]) / (2 * h)
    for i, axis in enumerate(chart.rest):
        J[:, chart.n + i, axis] = 1.0
    return J


def chart_inverse(chart: Chart, fmap: SampledMap, UV, start=None):
    """Solve G(q) = (u, v) by Newton's method from the chart centre.

    Returns ``(Q, converged)``; ``converged`` flags points whose residual
    reached ``chart.newton_tol`` within ``chart.newton_maxiter`` steps.
    """
    UV = np.atleast_2d(np.asarray(UV, dtype=float))
    if chart.kind == "affine":
        Q = chart.center + np.linalg.solve(chart.DG0, (UV - chart.G0).T).T
        return Q, np.ones(len(UV), dtype=bool)
    Q = np.tile(chart.center, (len(UV), 1)) if start is None else np.array(start, dtype=float)
    done = np.zeros(len(UV), dtype=bool)
    failed = np.zeros(len(UV), dtype=bool)
    for _ in range(chart.newton_maxiter + 1):
        live = ~done & ~failed
        if not live.any():
            break
        R = chart_forward(chart, fmap, Q[live]) - UV[live]
        ok = np.max(np.abs(R), axis=1) <= chart.newton_tol
        idx = np.flatnonzero(live)
        done[idx[ok]] = True
        step_idx = idx[~ok]
        if len(step_idx) == 0:
            break
        J = chart_jacobian(chart, fmap, Q[step_idx])
        det = np.linalg.det(J)
        bad = ~np.isfinite(det) | (np.abs(det) < 1e-300)
        failed[step_idx[bad]] = True
        good = step_idx[~bad]
        if len(good):
            Q[good] -= np.linalg.solve(J[~bad], R[~ok][~bad][..., None])[..., 0]
    return Q, done


def _probes(center: np.ndarray, half: float) -> np.ndarray:
    offs = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=len(center))))
    return center + half * offs


def _box_nodes(fmap: SampledMap, lo, hi, stride: int = 1) -> np.ndarray:
    axes = []
    for ax, a, b in zip(fmap.axes(), lo, hi):
        sel = ax[(ax >= a - 1e-12) & (ax <= b + 1e-12)]
        axes.append(sel[::stride])
    if any(len(a) == 0 for a in axes):
        return np.zeros((0, fmap.k))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _minor_dets(chart: Chart, fmap: SampledMap, P) -> np.ndarray:
    J = chart_jacobian(chart, fmap, P)
    return np.linalg.det(J[:, :chart.n][:, :, list(chart.cols)])


def build_chart(fmap: SampledMap, x0, n: Optional[int] = None, h_fd: Optional[float] = None,
                roundtrip_tol: float = 1e-8, theta_rank: Optional[float] = None,
                include_nodes: bool = True) -> Chart:
    """Certified normal-form chart of ``fmap`` around ``x0``."""
    if not fmap.target.is_coordinate:
        raise NonComponentTarget("charts need a componentwise target")
    n = fmap.n if n is None else n
    x0 = np.asarray(x0, dtype=float).ravel()
    step = default_step(fmap) if h_fd is None else h_fd
    step = min(step, 1e-5) if not fmap.affine else step
    ds = approx_derivative(fmap, x0, step)
    rows, cols, det = select_minor(ds.matrix, n, theta_rank)
    chart = Chart(center=x0, n=n, rows=rows, cols=cols, box_lo=x0.copy(), box_hi=x0.copy(),
                  minor_det=det, h_fd=min(step, 1e-5))
    half = 0.5 * float(fmap.reach(x0[None, :])[0])
    min_side = 4 * fmap.h_max
    halvings = 0
    while True:
        if 2 * half < min_side:
            raise ChartShrunkToGrid(f"chart box side {2 * half:.3g} fell below 4h = {min_side:.3g}")
        probes = _probes(x0, half)
        pts = probes
        if include_nodes:
            pts = np.vstack([probes, _box_nodes(fmap, x0 - half, x0 + half)])
        Q, conv = chart_inverse(chart, fmap, chart_forward(chart, fmap, pts))
        roundtrip = np.max(np.abs(Q - pts), axis=1)
        dets = _minor_dets(chart, fmap, probes)
        ok_newton = bool(np.all(conv) and np.all(roundtrip <= roundtrip_tol * max(1.0, half)))
        ok_det = bool(np.all(np.sign(det) * dets >= 0.5 * abs(det)))
        if ok_newton and ok_det:
            break
        half *= 0.5
        halvings += 1
    chart.box_lo, chart.box_hi = x0 - half, x0 + half
    chart.halvings = halvings
    sv = np.linalg.svd(chart_jacobian(chart, fmap, probes), compute_uv=False)
    chart.lip_G = float(sv[:, 0].max())
    chart.lip_G_inv = float((1.0 / sv[:, -1]).max())
    chart.G0 = chart_forward(chart, fmap, x0[None, :])[0]
    chart.DG0 = chart_jacobian(chart, fmap, x0[None, :])[0]
    return chart


def affine_chart(chart: Chart) -> Chart:
    """The chart's linearisation at its centre, extended to all of R^k."""
    d = chart.to_dict()
    d["kind"] = "affine"
    return Chart.from_dict(d)


# ---------------------------------------------------------------------------
# verification


@dataclass
class DetectedSet:
    nodes: np.ndarray        # domain points of K-hat
    uv: np.ndarray           # chart coordinates G(p)
    images: np.ndarray       # f(p)
    residuals: np.ndarray
    measure_fraction: float
    tested: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def to_dict(self) -> dict:
        return {"count": len(self), "tested": self.tested, "measure_fraction": self.measure_fraction,
                "max_residual": float(self.residuals.max()) if len(self) else None}


def detected_from_nodes(chart: Chart, fmap: SampledMap, nodes) -> DetectedSet:
    """Chart coordinates and images of an explicit node set, without thresholding."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    return DetectedSet(nodes, chart_forward(chart, fmap, nodes), fmap.evaluate(nodes),
                       np.zeros(len(nodes)), 1.0, len(nodes))


def verify_normal_form(chart: Chart, fmap: SampledMap, stride: int = 1, tau: Optional[float] = None,
                       region=None):
    """Residual of pi(f(G^-1(G(p)))) = G(p)_u over grid nodes of the chart box.

    The residual of a node is the larger of the normal-form error and the
    round-trip error |G^-1(G(p)) - p|; K-hat keeps nodes with residual
    strictly below ``tau`` (default 10h).  Newton failures are excluded.
    ``region`` (a ``(lo, hi)`` pair) overrides the chart box.
    """
    tau = 10 * fmap.h_max if tau is None else tau
    lo, hi = (chart.box_lo, chart.box_hi) if region is None else map(np.asarray, region)
    P = _box_nodes(fmap, lo, hi, stride)
    P = P[fmap.in_domain(P)] if len(P) else P
    if len(P) == 0:
        raise EmptyInput("no grid nodes inside the chart box")
    UV = chart_forward(chart, fmap, P)
    Q, conv = chart_inverse(chart, fmap, UV)
    nf = np.max(np.abs(chart.pi(fmap.evaluate(Q)) - UV[:, :chart.n]), axis=1)
    rt = np.max(np.abs(Q - P), axis=1)
    resid = np.where(conv, np.maximum(nf, rt), np.inf)
    keep = conv & (resid < tau)
    det_set = DetectedSet(P[keep], UV[keep], fmap.evaluate(P[keep]) if keep.any() else np.zeros((0, fmap.target.dim or 1)),
                          resid[keep], float(keep.mean()), len(P))
    report = {
        "tested": int(len(P)),
        "detected": int(keep.sum()),
        "newton_failures": int((~conv).sum()),
        "tau": tau,
        "measure_fraction": det_set.measure_fraction,
        "max_residual_on_K": float(resid[keep].max()) if keep.any() else None,
        "max_residual": float(resid[conv].max()) if conv.any() else None,
    }
    return report, det_set


def _slices(chart: Chart, K: DetectedSet):
    v = np.round(K.uv[:, chart.n:], 12)
    if v.shape[1] == 0:
        yield np.arange(len(K))
        return
    _, inv = np.unique(v, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(inv.max() + 2))
    for g in range(len(bounds) - 1):
        yield order[bounds[g]:bounds[g + 1]]


def check_404(chart: Chart, fmap: SampledMap, K: DetectedSet, slack: Optional[float] = None) -> dict:
    """Check |x1 - x2|_inf <= d(F(x1, y), F(x2, y)) + slack on every y-slice of K-hat."""
    slack = 10 * fmap.h_max * fmap.grid_lipschitz if slack is None else slack
    violations, pairs = 0, 0
    worst = math.inf
    for idx in _slices(chart, K):
        if len(idx) < 2:
            continue
        u = K.uv[idx, :chart.n]
        du = pairwise(_sup(chart.n), u)
        dF = pairwise(fmap.target, K.images[idx])
        iu = np.triu_indices(len(idx), k=1)
        margin = (dF + slack - du)[iu]
        pairs += len(margin)
        violations += int(np.sum(margin < 0))
        worst = min(worst, float(margin.min()))
    return {"violations": violations, "pairs": pairs, "worst_margin": None if pairs == 0 else worst,
            "slack": slack}


def _sup(dim):
    from .metric import MetricSpace

    return MetricSpace.sup_norm(dim)


def check_preimage_vertical(chart: Chart, fmap: SampledMap, K: DetectedSet, tol_img: float = 1e-6) -> dict:
    """Pairs of K-hat with (nearly) equal images must share their x-coordinates."""
    if len(K) < 2:
        return {"violations": 0, "pairs": 0}
    target = fmap.target
    if target.kind in ("euclidean", "sup_norm"):
        tree = cKDTree(K.images)
        cand = tree.query_pairs(tol_img * (1 + 1e-12), p=2 if target.kind == "euclidean" else np.inf,
                                output_type="ndarray")
    else:
        D = pairwise(target, K.images)
        cand = np.argwhere(np.triu(D <= tol_img, k=1))
    if len(cand) == 0:
        return {"violations": 0, "pairs": 0}
    i, j = cand[:, 0], cand[:, 1]
    du = np.max(np.abs(K.uv[i, :chart.n] - K.uv[j, :chart.n]), axis=1)
    return {"violations": int(np.sum(du > tol_img)), "pairs": int(len(cand))}


def check_image_positive(fmap: SampledMap, K: DetectedSet, n: Optional[int] = None) -> float:
    """Content of f(K-hat) at order n."""
    if len(K) == 0:
        raise EmptyInput("K-hat is empty")
    n = fmap.n if n is None else n
    est = content_estimate(K.images, n, fmap.target, lip=fmap.grid_lipschitz, h=fmap.h_max)
    return est.upper


def normal_form_derivative(chart: Chart, fmap: SampledMap, h: float = 1e-5) -> np.ndarray:
    """Derivative of Psi o f o G^-1 at G(x0), selected components first."""
    uv0 = chart_forward(chart, fmap, chart.center[None, :])[0]
    k = chart.k
    perm = list(chart.rows) + [i for i in range(fmap.values().shape[1]) if i not in chart.rows]
    cols = []
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        Qp, _ = chart_inverse(chart, fmap, (uv0 + e)[None, :])
        Qm, _ = chart_inverse(chart, fmap, (uv0 - e)[None, :])
        cols.append((fmap.evaluate(Qp)[0, perm] - fmap.evaluate(Qm)[0, perm]) / (2 * h))
    return np.array(cols).T
