import numpy as np

from fcoh.baseline import lsh_encode, lsh_init
from fcoh.model import encode, init_model


def test_lsh_weights_are_the_shared_initialisation():
    m = lsh_init(7, 5, 3)
    assert np.array_equal(m.W, init_model(7, 5, 3).W)
    assert (m.d, m.r) == (7, 5)


def test_lsh_encode_matches_learner_encode(rng):
    X = rng.standard_normal((7, 11))
    m = lsh_init(7, 5, 3)
    np.testing.assert_array_equal(lsh_encode(m, X), encode(m.model, X))


def test_lsh_collision_rate_tracks_angle(rng):
    # sign random projections: P[bit differs] = angle / pi
    r = 4000
    m = lsh_init(2, r, 0)
    theta = np.pi / 3
    X = np.array([[1.0, np.cos(theta)], [0.0, np.sin(theta)]])
    B = lsh_encode(m, X)
    assert abs((B[:, 0] != B[:, 1]).mean() - theta / np.pi) < 0.03
