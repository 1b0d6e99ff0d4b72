import math

import numpy as np
import pytest

from mgt.chart import (Chart, DetectedSet, affine_chart, build_chart, chart_forward, chart_inverse, check_404,
                       check_image_positive, check_preimage_vertical, detected_from_nodes, normal_form_derivative,
                       select_minor, verify_normal_form, _box_nodes)
from mgt.errors import ChartShrunkToGrid, EmptyInput, NoFullRankMinor
from mgt.gallery import MapSpec, gallery_spec, make_map


@pytest.fixture(scope="module")
def projection():
    f = make_map(gallery_spec("projection", 129))
    return f, build_chart(f, (0.5, 0.5))


@pytest.fixture(scope="module")
def fold():
    f = make_map(gallery_spec("fold", 129, 2))
    return f, build_chart(f, (0.375, 0.375))


def test_select_minor_examples():
    assert select_minor(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]), 2) == ((0, 2), (0, 1), 1.0)
    rows, cols, det = select_minor(np.array([[1.0, 1.0]]), 1)
    assert (rows, cols, det) == ((0,), (0,), 1.0)
    with pytest.raises(NoFullRankMinor):
        select_minor(np.zeros((2, 2)), 1)
    with pytest.raises(NoFullRankMinor):
        select_minor(np.eye(2), 3)


def test_select_minor_pivoting_path_agrees_on_dominant_block():
    # 20 x 20 with n = 3 exceeds the exhaustive limit; a dominant block is found by pivoting
    D = np.full((20, 20), 1e-3)
    D[4, 7], D[11, 2], D[15, 19] = 5.0, -4.0, 3.0
    rows, cols, det = select_minor(D, 3)
    assert rows == (4, 11, 15) and cols == (2, 7, 19)
    assert abs(det) == pytest.approx(60.0, rel=1e-2)


def test_projection_chart(projection):
    f, c = projection
    assert c.rows == (0,) and c.cols == (0,)
    assert np.allclose(c.box_lo, 0.25) and np.allclose(c.box_hi, 0.75)
    report, K = verify_normal_form(c, f)
    assert report["max_residual_on_K"] <= 1e-10
    assert report["measure_fraction"] == 1.0
    assert np.allclose(normal_form_derivative(c, f), [[1.0, 0.0]], atol=1e-6)


def test_square_chart_matches_closed_form_inverse():
    f = make_map(gallery_spec("square", 129))
    c = build_chart(f, (1.0, 0.5))
    rng = np.random.default_rng(2)
    P = rng.uniform(c.box_lo, c.box_hi, size=(50, 2))
    UV = chart_forward(c, f, P)
    assert np.allclose(UV[:, 0], P[:, 0] ** 2, atol=1e-12)
    Q, conv = chart_inverse(c, f, UV)
    assert conv.all()
    assert np.allclose(Q[:, 0], np.sqrt(UV[:, 0]), atol=1e-9)
    assert np.allclose(Q[:, 1], UV[:, 1], atol=1e-12)
    report, _ = verify_normal_form(c, f)
    assert report["max_residual_on_K"] <= 1e-8 and report["measure_fraction"] >= 0.9


def test_newton_round_trip(projection, fold):
    for f, c in (projection, fold):
        rng = np.random.default_rng(5)
        P = rng.uniform(c.box_lo, c.box_hi, size=(200, 2))
        UV = chart_forward(c, f, P)
        Q, conv = chart_inverse(c, f, UV)
        assert conv.all()
        assert np.max(np.abs(chart_forward(c, f, Q) - UV)) <= 1e-10


def test_fold_chart_stays_in_one_subsquare(fold):
    f, c = fold
    assert np.all(c.box_lo >= 0.25 - 1e-12) and np.all(c.box_hi <= 0.5 + 1e-12)
    assert c.minor_det == pytest.approx(-1.0)
    report, K = verify_normal_form(c, f)
    assert report["max_residual_on_K"] <= 1e-10
    assert report["measure_fraction"] >= 0.9
    assert check_image_positive(f, K) >= 0.2 * 0.25


def test_fold_residual_exceeds_tau_across_folds(fold):
    f, c = fold
    report, _ = verify_normal_form(c, f, region=((0.0, 0.0), (1.0, 1.0)))
    assert report["max_residual"] > report["tau"]
    assert report["measure_fraction"] < 0.9


def test_slice_inequality_and_verticality(projection, fold):
    for f, c in (projection, fold):
        _, K = verify_normal_form(c, f)
        r = check_404(c, f, K)
        assert r["pairs"] > 0 and r["violations"] == 0
        v = check_preimage_vertical(c, f, K)
        assert v["violations"] == 0


def test_constant_map_violates_slice_inequality():
    f = make_map(gallery_spec("constant", 17))
    nodes = np.array([[0.25, 0.5], [0.75, 0.5]])
    c = Chart(center=np.array([0.5, 0.5]), n=1, rows=(0,), cols=(0,), box_lo=np.zeros(2), box_hi=np.ones(2),
              minor_det=0.0)
    K = DetectedSet(nodes, nodes.copy(), f.evaluate(nodes), np.zeros(2), 1.0, 2)
    assert check_404(c, f, K)["violations"] >= 1


def test_cross_fold_set_is_not_vertical(fold):
    f, c = fold
    nodes = _box_nodes(f, np.array([0.25, 0.25]), np.array([0.75, 0.5]))
    K = detected_from_nodes(affine_chart(c), f, nodes)
    assert check_preimage_vertical(c, f, K)["violations"] >= 1


def test_affine_chart_is_exact():
    f = make_map(MapSpec("linear", {"matrix": [[2.0, 1.0]]}, [[0, 1], [0, 1]], 65))
    c = build_chart(f, (0.5, 0.5))
    a = affine_chart(c)
    P = np.random.default_rng(0).uniform(0.3, 0.7, size=(40, 2))
    assert np.allclose(chart_forward(a, f, P), chart_forward(c, f, P), atol=1e-10)
    report, _ = verify_normal_form(c, f)
    assert report["max_residual_on_K"] <= 1e-10


def test_bi_lipschitz_certificate_and_composition(projection):
    f, c = projection
    assert c.lip_G == pytest.approx(1.0, abs=1e-6) and c.lip_G_inv == pytest.approx(1.0, abs=1e-6)
    P = np.random.default_rng(1).uniform(c.box_lo, c.box_hi, size=(30, 2))
    UV = chart_forward(c, f, P)
    assert np.max(np.abs(c.pi(f.evaluate(P)) - UV[:, :1])) <= 1e-12
    assert abs(np.linalg.det(c.DG0)) == pytest.approx(1.0, abs=1e-6)


def test_chart_round_trip_through_dict(fold):
    _, c = fold
    again = Chart.from_dict(c.to_dict())
    assert again.to_dict() == c.to_dict()
    for key in ("image_rows", "domain_cols", "box", "minor_det_at_center", "newton"):
        assert key in c.to_dict()


def test_image_content_of_projection(projection):
    f, c = projection
    _, K = verify_normal_form(c, f)
    assert check_image_positive(f, K) == pytest.approx(0.5, abs=0.02)
    _, full = verify_normal_form(c, f, region=((0.0, 0.0), (1.0, 1.0)))
    assert check_image_positive(f, full) == pytest.approx(1.0, abs=0.02)


def test_empty_detected_set(projection):
    f, c = projection
    _, K = verify_normal_form(c, f, tau=0.0)
    assert len(K) == 0
    with pytest.raises(EmptyInput):
        check_image_positive(f, K)


def test_chart_shrinks_to_grid_near_boundary():
    f = make_map(gallery_spec("projection", 129))
    with pytest.raises(ChartShrunkToGrid):
        build_chart(f, (0.5, 1e-3))


def test_singular_point_has_no_chart():
    with pytest.raises(NoFullRankMinor):
        build_chart(make_map(gallery_spec("constant", 33)), (0.5, 0.5))
