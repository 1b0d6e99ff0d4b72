import math

import numpy as np
import pytest

from mgt.errors import InvalidDims, InvalidLambda, InvalidSpec
from mgt.gallery import (GALLERY, MapSpec, coarea_lhs, coarea_rhs, fold_crease_distance, fold_intermediate,
                         fold_K_bound, fold_slice_bound, fold_slice_capacity, fold_stage, gallery_spec, make_map)
from mgt.metric import lipschitz_estimate


def test_fold_stage_example():
    x, y = fold_stage(np.array([0.75]), np.array([0.25]), 1)
    assert (x[0], y[0]) == (0.25, 0.25)


def test_fold_stage_half_open_cases():
    x, y = fold_stage(np.array([0.5, 0.4999]), np.array([0.0, 0.0]), 1)
    assert x.tolist() == [0.5, 0.4999]
    x, _ = fold_stage(np.array([0.25]), np.array([0.0]), 2)
    assert x[0] == 0.25


def test_fold_one_value():
    f = make_map(gallery_spec("fold", 65, 1))
    assert f.evaluate([[0.75, 0.25]])[0, 0] == 0.25


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_fold_image_and_intermediate_range(N):
    f = make_map(gallery_spec("fold", 129, N))
    vals = f.values()[:, 0]
    assert vals.min() == pytest.approx(0.0, abs=1e-15)
    assert vals.max() == pytest.approx(2.0 ** -N, abs=1e-15)
    X = np.random.default_rng(N).uniform(0, 1, size=(500, 2))
    x, y = fold_intermediate(X, N)
    assert np.all((x >= 0) & (x <= 2.0 ** -N) & (y >= 0) & (y <= 2.0 ** -N))
    assert np.allclose(f.evaluate(X)[:, 0], x)


def test_fold_is_one_lipschitz():
    for N in (1, 3):
        assert lipschitz_estimate(make_map(gallery_spec("fold", 129, N)), "moore") <= 1.0 + 1e-12


def test_crease_distance():
    d = fold_crease_distance(np.array([[0.25, 0.3], [0.3, 0.0], [0.01, 0.5]]), 2)
    assert d.tolist() == pytest.approx([0.0, 0.05, 0.24])


@pytest.mark.parametrize("lam, N, want", [
    (1.0 + 1e-15, 1, math.sqrt(2.0)),
    (1.0 + 1e-15, 4, 0.17677669529663687),
    (2.0, 10, 0.04419417382415922),
])
def test_fold_K_bound_values(lam, N, want):
    assert fold_K_bound(lam, N) == pytest.approx(want, rel=1e-12)


def test_fold_K_bound_rejects_lambda_one():
    with pytest.raises(InvalidLambda):
        fold_K_bound(1.0, 3)
    with pytest.raises(InvalidLambda):
        fold_slice_capacity(make_map(gallery_spec("fold", 65, 1)), 0.5, 0.25)


@pytest.mark.parametrize("N, want", [(1, 0.5), (3, 0.125)])
def test_slice_capacity_near_one_fold_cell(N, want):
    # 256 nodes keep the crease lines x = j 2^-N off the grid
    grid = 256
    f = make_map(gallery_spec("fold", grid, N))
    cap = fold_slice_capacity(f, 1.000001, 0.25)
    h = 1.0 / (grid - 1)
    assert 0.9 * want <= cap <= want * (1 + 5 * h)
    assert cap <= fold_slice_bound(1.000001, N, h)


def test_slice_capacity_large_lambda_stays_bounded():
    f = make_map(gallery_spec("fold", 257, 1))
    assert fold_slice_capacity(f, 3.0, 0.25) <= 1.5


def test_slice_capacity_needs_fold():
    with pytest.raises(InvalidSpec):
        fold_slice_capacity(make_map(gallery_spec("projection", 33)), 1.1, 0.25)


def test_coarea_examples():
    assert coarea_rhs(2, 1, 1.0, 1.0) == pytest.approx(4 / math.pi)
    assert coarea_lhs(gallery_spec("projection", 33)) == 1.0
    assert coarea_lhs(gallery_spec("diagonal", 33)) == pytest.approx(math.sqrt(2))
    L = lipschitz_estimate(make_map(gallery_spec("diagonal", 33)), "moore")
    assert coarea_rhs(2, 1, L, 1.0) == pytest.approx(math.sqrt(2) * 4 / math.pi)
    assert coarea_lhs(gallery_spec("diagonal", 33)) <= coarea_rhs(2, 1, L, 1.0)
    with pytest.raises(InvalidDims):
        coarea_rhs(1, 2, 1.0, 1.0)


def test_gallery_is_deterministic():
    for name in GALLERY:
        a = make_map(gallery_spec(name, 17)).values()
        b = make_map(gallery_spec(name, 17)).values()
        assert np.array_equal(a, b)


def test_spec_round_trip():
    spec = gallery_spec("fold", 33, 4)
    assert MapSpec.from_dict(spec.to_dict()) == spec


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        gallery_spec("nope")
    with pytest.raises(InvalidSpec):
        make_map(MapSpec("no_such_kind", {}, [[0, 1]], 9))
    with pytest.raises(InvalidSpec):
        coarea_lhs(gallery_spec("square", 33))
