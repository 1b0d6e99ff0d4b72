import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mgt.content import (ccv, content_constant, content_estimate, content_greedy, content_oracle_exact,
                         content_pixel_euclidean)
from mgt.errors import DimensionMismatch, EmptyInput, TooManyPoints
from mgt.gallery import gallery_spec, make_map
from mgt.metric import MetricSpace, pairwise


def set_partitions(items):
    """All set partitions of a list (independent brute-force oracle)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def brute_ccv(X, rho, n, space=None):
    space = space or MetricSpace.euclidean(X.shape[1])
    D = pairwise(space, X)
    c = content_constant(n)
    best = math.inf
    for part in set_partitions(list(range(len(X)))):
        total = sum(c * (D[np.ix_(b, b)].max() + 2 * rho) ** n for b in part)
        best = min(best, total)
    return best


point_sets = st.integers(1, 3).flatmap(
    lambda d: arrays(np.float64, st.tuples(st.integers(1, 7), st.just(d)),
                     elements=st.floats(-1, 1, allow_nan=False, width=32)))


def test_single_point():
    assert content_oracle_exact(np.zeros((1, 1)), 0.5, 1).upper == 1.0


def test_two_far_points():
    X = np.array([[0.0], [10.0]])
    assert content_oracle_exact(X, 0.5, 1).upper == 2.0
    assert content_greedy(X, 0.5, 1).upper == 2.0


def test_two_close_points():
    X = np.array([[0.0], [0.1]])
    assert content_oracle_exact(X, 0.5, 1).upper == pytest.approx(1.1)
    assert content_greedy(X, 0.5, 1).upper == pytest.approx(1.1)


def test_ten_points_at_zero_inflation():
    # with rho = 0 every singleton costs 0, so the minimum is 0; one cluster would cost 0.09
    X = 0.01 * np.arange(10.0)[:, None]
    assert content_oracle_exact(X, 0.0, 1).upper == 0.0
    assert content_greedy(X, 0.0, 1).upper == 0.0
    D = pairwise(MetricSpace.euclidean(1), X)
    assert ccv(D, [list(range(10))], 0.0, 1) == pytest.approx(0.09)


def test_oracle_cap():
    with pytest.raises(TooManyPoints):
        content_oracle_exact(np.zeros((13, 1)) + np.arange(13.0)[:, None], 0.1, 1)


def test_greedy_empty():
    with pytest.raises(EmptyInput):
        content_greedy(np.zeros((0, 2)), 0.1, 1)


def test_pixel_unit_interval():
    X = np.linspace(0, 1, 101)[:, None]
    assert content_pixel_euclidean(X, 0.01, 1).upper == pytest.approx(1.0, abs=0.0101)


def test_pixel_empty():
    assert content_pixel_euclidean(np.zeros((0, 1)), 0.01, 1).upper == 0.0


def test_pixel_unit_square():
    g = np.linspace(0, 1, 100)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    assert content_pixel_euclidean(X, 0.01, 2).upper == pytest.approx(1.0, abs=0.03)


def test_pixel_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        content_estimate(np.zeros((3, 2)), 1, MetricSpace.euclidean(2), method="pixel", cell=0.1)


def test_estimate_identity_image():
    f = make_map(gallery_spec("identity", 101))
    est = content_estimate(f.values(), 1, f.target, lip=f.grid_lipschitz, h=f.h_max)
    assert est.method == "pixel"
    assert est.upper == pytest.approx(1.0, abs=0.02)


def test_estimate_fold_image():
    f = make_map(gallery_spec("fold", 129, 2))
    est = content_estimate(f.values(), 1, f.target, lip=f.grid_lipschitz, h=f.h_max)
    assert est.upper == pytest.approx(0.25, abs=0.02)


def test_estimate_sup_norm_greedy_dominates_oracle():
    X = np.array([[0.0, 0.0], [0.3, 0.1], [1.0, 0.2]])
    space = MetricSpace.sup_norm(2)
    g = content_estimate(X, 1, space, method="greedy", rho=0.1)
    o = content_estimate(X, 1, space, method="oracle", rho=0.1)
    assert g.upper >= o.upper - 1e-15


def test_constant_map_has_zero_content():
    f = make_map(gallery_spec("constant", 17))
    assert content_estimate(f.values(), 1, f.target, lip=f.grid_lipschitz, h=f.h_max).upper == 0.0


def test_duplicates_are_merged_without_changing_value():
    X = np.array([[0.0], [0.0], [1.0], [1.0], [1.0], [5.0]])
    est = content_estimate(X, 1, method="oracle", rho=0.25)
    assert est.upper == pytest.approx(content_oracle_exact(np.array([[0.0], [1.0], [5.0]]), 0.25, 1).upper)
    assert sorted(i for c in est.clusters for i in c) == list(range(6))
    D = pairwise(MetricSpace.euclidean(1), X)
    assert ccv(D, est.clusters, 0.25, 1) == pytest.approx(est.upper)


def test_explicit_space_ids():
    space = MetricSpace.explicit([[0, 1, 4], [1, 0, 4], [4, 4, 0]], ids=["a", "b", "c"])
    est = content_estimate(["a", "b", "c"], 1, space, rho=0.5)
    assert est.upper == pytest.approx(2.0 + 1.0)


@settings(max_examples=60, deadline=None)
@given(point_sets, st.floats(0, 0.3), st.integers(1, 3))
def test_oracle_matches_brute_force(X, rho, n):
    assert content_oracle_exact(X, rho, n).upper == pytest.approx(brute_ccv(X, rho, n), rel=1e-12, abs=1e-15)


@settings(max_examples=80, deadline=None)
@given(point_sets, st.floats(0, 0.3), st.integers(1, 3))
def test_greedy_dominates_oracle(X, rho, n):
    assert content_greedy(X, rho, n).upper >= content_oracle_exact(X, rho, n).upper * (1 - 1e-12) - 1e-15


@settings(max_examples=60, deadline=None)
@given(point_sets, st.floats(0, 0.3), st.integers(1, 3))
def test_witness_is_a_partition_and_value_matches(X, rho, n):
    D = pairwise(MetricSpace.euclidean(X.shape[1]), X)
    for est in (content_oracle_exact(X, rho, n), content_greedy(X, rho, n)):
        assert sorted(i for c in est.clusters for i in c) == list(range(len(X)))
        assert est.lower <= est.upper
        assert ccv(D, est.clusters, rho, n) == pytest.approx(est.upper, rel=1e-12, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(point_sets, st.floats(0, 0.3), st.integers(1, 3), st.floats(0.1, 10))
def test_scaling_law(X, rho, n, t):
    base = content_oracle_exact(X, rho, n).upper
    scaled = content_oracle_exact(t * X, t * rho, n).upper
    assert scaled == pytest.approx(t ** n * base, rel=1e-12, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(point_sets, arrays(np.float64, 3, elements=st.floats(-1, 1, width=32)), st.integers(1, 3))
def test_adding_a_point_never_decreases(X, extra, n):
    bigger = np.vstack([X, extra[:X.shape[1]]])
    assert content_oracle_exact(bigger, 0.0, n).upper >= content_oracle_exact(X, 0.0, n).upper
    assert content_oracle_exact(bigger, 0.1, n).upper >= content_oracle_exact(X, 0.1, n).upper - 1e-12


@settings(max_examples=40, deadline=None)
@given(point_sets)
def test_one_dimensional_content_bounded_by_diameter(X):
    D = pairwise(MetricSpace.euclidean(X.shape[1]), X)
    assert content_oracle_exact(X, 0.0, 1).upper <= D.max() + 1e-12


def test_pixel_segment_within_two_cells():
    for length in (0.3, 0.77, 2.5):
        X = np.linspace(0.1, 0.1 + length, 4001)[:, None]
        for cell in (0.01, 0.003):
            v = content_pixel_euclidean(X, cell, 1).upper
            assert length - 2 * cell <= v <= length + 2 * cell
