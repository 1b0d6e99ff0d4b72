"""Finite-difference derivatives, numerical rank and the n-Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .density import LadderSpec, density_field
from .errors import DimensionMismatch, NonComponentTarget, OutOfDomain
from .metric import SampledMap

RANK_TOL = 1e-6


@dataclass
class DerivativeSample:
    x: np.ndarray
    matrix: np.ndarray          # (target components) x (domain axes)
    h_fd: float
    singular_values: np.ndarray  # nonincreasing
    rank: int

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "matrix": self.matrix.tolist(), "h_fd": self.h_fd,
                "singular_values": self.singular_values.tolist(), "rank": self.rank}


def numerical_rank(sv: np.ndarray, tol: float = RANK_TOL) -> int:
    """Number of singular values at least ``tol`` times the largest."""
    if len(sv) == 0 or sv[0] <= 0:
        return 0
    return int(np.sum(sv >= tol * sv[0]))


def default_step(fmap: SampledMap) -> float:
    if fmap.affine:
        # central differences are exact for affine rules at any step
        return 0.25 * float(np.min(fmap.hi - fmap.lo))
    if fmap.rule is None:
        return max(1e-5, 2 * fmap.h_max)
    return 1e-5


def approx_derivative(fmap: SampledMap, x, h_fd: Optional[float] = None,
                      tol_rank: float = RANK_TOL) -> DerivativeSample:
    """Central-difference derivative of every target component along every axis."""
    if not fmap.target.is_coordinate:
        raise NonComponentTarget(f"{fmap.target.kind} targets have no components to differentiate")
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (fmap.k,):
        raise DimensionMismatch(f"expected a point of R^{fmap.k}")
    h = default_step(fmap) if h_fd is None else float(h_fd)
    if not fmap.in_domain(x[None, :])[0]:
        raise OutOfDomain(f"{x.tolist()} lies outside the domain")
    if not fmap.affine and fmap.reach(x[None, :])[0] < h * (1 - 1e-12):
        raise OutOfDomain(f"{x.tolist()} is closer than h_fd = {h} to the boundary")
    E = h * np.eye(fmap.k)
    vals = fmap.evaluate(np.vstack([x + E, x - E]))
    D = ((vals[:fmap.k] - vals[fmap.k:]) / (2 * h)).T
    sv = np.linalg.svd(D, compute_uv=False)
    return DerivativeSample(x, D, h, sv, numerical_rank(sv, tol_rank))


def jacobian_n(sample, n: int) -> float:
    """sqrt(det(D D^T)) for a derivative with n rows; 0 when the rank is below n."""
    if isinstance(sample, DerivativeSample):
        D, sv, rank = sample.matrix, sample.singular_values, sample.rank
    else:
        D = np.atleast_2d(np.asarray(sample, dtype=float))
        sv = np.linalg.svd(D, compute_uv=False)
        rank = numerical_rank(sv)
    if D.shape[0] != n:
        raise DimensionMismatch(f"derivative has {D.shape[0]} rows, expected n = {n}")
    if rank < n:
        return 0.0
    return float(np.prod(sv[:n]))


def check_density_equals_jacobian(fmap: SampledMap, stride: int, ladder: LadderSpec = LadderSpec(),
                                  n: Optional[int] = None, tol: float = 0.05, crease_margin: Optional[float] = None,
                                  threads: int = 1, resolution: Optional[int] = None) -> dict:
    """Compare ladder density estimates with |J^n f| over a density field.

    The gap at a point is |theta - |J^n f|| / max(|J^n f|, 0.1) with theta the
    upper (ladder maximum) estimate; the lower gap is reported alongside.
    Points within ``crease_margin`` (default 2h) of a known crease are left out.
    """
    n = fmap.n if n is None else n
    if fmap.target.kind != "euclidean" or fmap.target.dim != n:
        raise DimensionMismatch(f"density/Jacobian comparison needs a euclidean({n}) target")
    profiles = density_field(fmap, stride, n, ladder, threads=threads, resolution=resolution)
    margin = 2 * fmap.h_max if crease_margin is None else crease_margin
    rows = []
    excluded = 0
    for prof in profiles:
        if fmap.crease_distance is not None and fmap.crease_distance(prof.x[None, :])[0] <= margin:
            excluded += 1
            continue
        jac = jacobian_n(approx_derivative(fmap, prof.x), n)
        scale = max(jac, 0.1)
        rows.append({
            "x": prof.x.tolist(),
            "theta_upper": prof.theta_upper,
            "theta_lower": prof.theta_lower,
            "jacobian": jac,
            "gap": abs(prof.theta_upper - jac) / scale,
            "gap_lower": abs(prof.theta_lower - jac) / scale,
        })
    gaps = np.array([r["gap"] for r in rows]) if rows else np.zeros(0)
    return {
        "points": rows,
        "count": len(rows),
        "excluded_near_creases": excluded,
        "max_gap": float(gaps.max()) if len(gaps) else 0.0,
        "median_gap": float(np.median(gaps)) if len(gaps) else 0.0,
        "tolerance": tol,
        "fraction_within_tol": float(np.mean(gaps <= tol)) if len(gaps) else 1.0,
    }
