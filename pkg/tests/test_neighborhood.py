import numpy as np
import pytest

from localdti.neighborhood import (
    NeighborhoodConfig,
    NeighborSelector,
    physical_distance,
    select_neighbors,
    similarity_score,
    tensor_distance,
)
from localdti.volume import GridShape, TensorField, linear_index, matrix_to_vector


def _field(d, valid=None):
    g = GridShape(*d.shape[:3])
    valid = np.ones(g.dims, bool) if valid is None else valid
    return TensorField(g, d, valid, valid)


def test_tensor_distance_examples():
    a = np.diag([1.0, 2.0, 3.0])
    assert tensor_distance(a, a) == 0.0
    assert tensor_distance(2.0 * np.eye(3), 0.5 * np.eye(3)) == pytest.approx(np.sqrt(3) * 1.5)
    assert tensor_distance(np.diag([1.0, 0, 0]), np.diag([0, 1.0, 0])) == pytest.approx(np.sqrt(2))


def test_config_validation():
    with pytest.raises(ValueError):
        NeighborhoodConfig(cube=(4, 5, 3))
    with pytest.raises(ValueError):
        NeighborhoodConfig(cube=(3, 3, 1), n=10)
    with pytest.raises(ValueError):
        NeighborhoodConfig(C=-1.0)
    with pytest.raises(ValueError):
        NeighborhoodConfig(distance_unit="inch")


def test_similarity_score_examples():
    g = (5, 5, 3)
    d = np.zeros(g + (6,))
    d[..., :3] = 1e-3
    d[2, 2, 1, :3] = 1e-3 + 1e-4  # centre differs by 1e-4 * I
    tf = _field(d)
    cfg = NeighborhoodConfig()
    assert similarity_score((2, 2, 1), (2, 2, 1), tf, cfg) == 0.0
    assert similarity_score((0, 0, 0), (2, 0, 0), tf, cfg) == 0.0
    assert similarity_score((2, 2, 1), (3, 2, 1), tf, cfg) == pytest.approx(np.sqrt(3) * 1e-4 * np.exp(0.1), rel=1e-9)
    assert np.sqrt(3) * 1e-4 * np.exp(0.1) == pytest.approx(1.9143e-4, abs=1e-8)


def test_mm_distance_unit():
    cfg = NeighborhoodConfig(distance_unit="mm")
    assert physical_distance((1, 0, 1), cfg, (0.5, 2.0, 3.0)) == pytest.approx(np.hypot(0.5, 3.0))


def test_homogeneous_field_takes_nearest_by_index():
    d = np.zeros((9, 9, 5, 6))
    d[..., :3] = 0.7e-3
    tf = _field(d)
    nb = select_neighbors((4, 4, 2), tf, NeighborhoodConfig())
    assert nb.members[0] == linear_index((4, 4, 2), tf.shape)
    # all scores are zero, so ties resolve to the lowest linear indices of the cube
    g = tf.shape
    cube = sorted(
        linear_index((4 + dx, 4 + dy, 2 + dz), g)
        for dz in (-1, 0, 1)
        for dy in range(-2, 3)
        for dx in range(-2, 3)
        if (dx, dy, dz) != (0, 0, 0)
    )
    assert list(nb.members[1:]) == cube[:24]
    assert not nb.short


def test_two_region_boundary():
    d = np.zeros((10, 10, 5, 6))
    d[..., :3] = 0.7e-3
    aniso = matrix_to_vector(np.diag([1.0e-3, 0.55e-3, 0.55e-3]))
    d[5:] = aniso
    tf = _field(d)
    for v in [(4, 5, 2), (5, 5, 2)]:
        nb = select_neighbors(v, tf, NeighborhoodConfig(cube=(5, 5, 3), n=25))
        x = np.array([m % 10 for m in nb.members])
        side = x >= 5
        assert np.all(side == side[0])


def test_short_neighborhood():
    d = np.zeros((5, 5, 3, 6))
    d[..., :3] = 1e-3
    valid = np.zeros((5, 5, 3), bool)
    valid.flat[:10] = True
    valid[2, 2, 1] = True
    tf = _field(d, valid)
    nb = select_neighbors((2, 2, 1), tf, NeighborhoodConfig())
    assert nb.short


def test_invalid_centre():
    d = np.zeros((3, 3, 3, 6))
    valid = np.ones((3, 3, 3), bool)
    valid[1, 1, 1] = False
    with pytest.raises(ValueError):
        select_neighbors((1, 1, 1), _field(d, valid), NeighborhoodConfig(cube=(3, 3, 3), n=5))


def test_vectorised_matches_scalar_scores(rng):
    g = GridShape(7, 6, 4)
    d = rng.normal(scale=1e-3, size=g.dims + (6,))
    tf = _field(d)
    cfg = NeighborhoodConfig(cube=(3, 5, 3), n=12)
    sel = NeighborSelector(d, tf.valid, cfg)
    v = (3, 2, 1)
    f = sel.scores([linear_index(v, g)])[0]
    for k, off in enumerate(sel.offsets):
        assert f[k] == pytest.approx(similarity_score(v, tuple(np.add(v, off)), tf, cfg), rel=1e-12)
    # members are distinct, valid and inside the cube
    members, short = sel.select(np.arange(g.n_voxels)[tf.valid.ravel(order="F")])
    for row, s in zip(members, short):
        if not s:
            assert len(set(row.tolist())) == cfg.n


def test_scale_invariance_and_determinism(rng):
    d = rng.normal(scale=1e-3, size=(8, 8, 4, 6))
    cfg = NeighborhoodConfig()
    a = select_neighbors((4, 4, 2), _field(d), cfg)
    b = select_neighbors((4, 4, 2), _field(3.0 * d), cfg)
    c = select_neighbors((4, 4, 2), _field(d.copy()), cfg)
    assert np.array_equal(a.members, b.members)
    assert np.array_equal(a.members, c.members)
