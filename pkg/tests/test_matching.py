import itertools

import numpy as np
import pytest

from stochmatch import autodiff as ad
from stochmatch.autodiff import Tape, Tensor, grad
from stochmatch.matching import (
    NO_DUMMY_SCORE, build_phi, core_block, matched_probabilities, mean_matching, pad_theta,
    transform, transform_reference,
)
from stochmatch.sinkhorn import SinkhornConfig, sinkhorn


def _random_doubly_stochastic(rng, m):
    return sinkhorn(Tensor(rng.normal(size=(m, m)) * 2), 200).data


def test_build_phi_small():
    phi = build_phi(Tensor([[2.0, 3.0]])).data
    np.testing.assert_array_equal(phi, [[2, 3, 0], [0, 0, 0], [0, 0, 0]])


def test_build_phi_zero_and_gradient():
    theta = Tensor(np.zeros((2, 3)), requires_grad=True)
    with Tape() as tape:
        phi = build_phi(theta)
        y = ad.reduce_sum(phi)
    np.testing.assert_array_equal(phi.data, 0.0)
    np.testing.assert_array_equal(grad(tape, y)[theta], np.ones((2, 3)))


def test_build_phi_slice_round_trip(rng):
    theta = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(build_phi(Tensor(theta)).data[:3, :5], theta)


def test_no_dummy_masks_dummy_slots():
    phi = build_phi(Tensor(np.ones((2, 3))), dummy=False).data
    assert np.all(phi[:2, 3:] == NO_DUMMY_SCORE)
    assert np.all(phi[2:, :3] == NO_DUMMY_SCORE)
    assert np.all(phi[2:, 3:] == 0.0)


def test_transform_identity_pair():
    m = transform(Tensor(np.eye(2)), 1, 1).data
    np.testing.assert_array_equal(m, [[1, 0], [0, 0]])


def test_transform_anti_diagonal_sends_source_to_dummy():
    s = np.array([[0.0, 1.0], [1.0, 0.0]])
    # B = I_2 and C = I_2 for n_s = n_t = 1, so B S C = S; corner then zeroed
    m = transform(Tensor(s), 1, 1).data
    np.testing.assert_array_equal(m, [[0, 1], [1, 0]])


def test_transform_matches_explicit_matrices(rng):
    for _ in range(100):
        n_s, n_t = rng.integers(1, 5, size=2)
        s = _random_doubly_stochastic(rng, n_s + n_t)
        fast = transform(Tensor(s), n_s, n_t).data
        np.testing.assert_allclose(fast, transform_reference(s, n_s, n_t), atol=1e-14)
        assert np.all(fast >= 0) and np.all(fast <= 1 + 1e-12)
        assert np.abs(fast[:n_s].sum(axis=1) - 1).max() < 1e-6
        assert np.abs(fast[:, :n_t].sum(axis=0) - 1).max() < 1e-6
        assert fast[n_s, n_t] == 0.0


def test_transform_of_every_hard_permutation_is_valid():
    for n_s, n_t in [(1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (1, 5)]:
        m = n_s + n_t
        for p in itertools.permutations(range(m)):
            s = np.eye(m)[list(p)]
            out = transform(Tensor(s), n_s, n_t).data
            assert set(np.unique(out)) <= {0.0, 1.0}
            np.testing.assert_array_equal(out[:n_s].sum(axis=1), 1.0)
            np.testing.assert_array_equal(out[:, :n_t].sum(axis=0), 1.0)
            assert out[n_s, n_t] == 0.0


def test_transform_shape_mismatch():
    with pytest.raises(ValueError):
        transform(Tensor(np.eye(4)), 2, 3)


def test_mean_matching_without_noise_is_degenerate(rng):
    theta = Tensor(rng.normal(size=(3, 4)))
    cfg = SinkhornConfig(1.0, 20, 0)
    np.testing.assert_allclose(mean_matching(theta, cfg, 1, 0), mean_matching(theta, cfg, 5, 9), atol=1e-15)


def test_mean_matching_strong_diagonal():
    # the zero dummy blocks make Sinkhorn converge like 1/(2L) here, hence L=1000
    m_bar = mean_matching(Tensor(50.0 * np.eye(3)), SinkhornConfig(1.0, 1000), 10, 3)
    np.testing.assert_allclose(m_bar[:3, :3], np.eye(3), atol=1e-3)
    assert np.all(m_bar >= 0) and np.all(m_bar <= 1)


def test_mean_matching_carries_no_gradient(rng):
    theta = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        m_bar = mean_matching(theta, SinkhornConfig(), 3, 0)
    assert isinstance(m_bar, np.ndarray) and len(tape) == 0


def test_matched_probabilities():
    m = np.zeros((4, 4))
    m[:3, :3] = np.eye(3)
    a_s, a_t = matched_probabilities(m)
    np.testing.assert_array_equal(a_s, 1.0)
    np.testing.assert_array_equal(a_t, 1.0)

    m = np.zeros((3, 3))
    m[:2, 2] = 1.0
    assert np.all(matched_probabilities(m)[0] == 0.0)

    m = np.zeros((3, 3))
    m[:2, :2] = [[0.5, 0.0], [0.0, 0.25]]
    a_s, a_t = matched_probabilities(m)
    np.testing.assert_allclose(a_s, [0.5, 0.25])
    np.testing.assert_allclose(a_t, [0.5, 0.25])


def test_pad_theta():
    np.testing.assert_array_equal(pad_theta([[3.0]]), [[3, 0], [0, 0]])
    theta = np.arange(6.0).reshape(2, 3)
    padded = pad_theta(theta)
    assert padded.shape == (3, 4)
    np.testing.assert_array_equal(padded[:2, :3], theta)


def test_core_block_batched(rng):
    m = Tensor(rng.random((3, 4, 5)))
    assert core_block(m).shape == (3, 3, 4)
