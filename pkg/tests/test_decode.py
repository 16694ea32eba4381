import itertools

import numpy as np
import pytest

from stochmatch.decode import (
    DUMMY, DiscreteMatching, decode, hard_soft_match, hungarian, node_correctness, truth_pattern,
)
from stochmatch.matching import build_phi, pad_theta, transform_reference


def brute_force(scores):
    n = scores.shape[0]
    return max(sum(scores[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def all_matchings(n_s, n_t):
    """Every valid assignment of source nodes to targets or DUMMY."""
    options = list(range(n_t)) + [DUMMY]
    for combo in itertools.product(options, repeat=n_s):
        taken = [j for j in combo if j != DUMMY]
        if len(taken) == len(set(taken)):
            yield combo


def test_identity_scores():
    cols, value = hungarian(np.eye(4))
    assert list(cols) == [0, 1, 2, 3] and value == 4


def test_anti_diagonal_scores():
    cols, value = hungarian(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert list(cols) == [1, 0] and value == 2


def test_random_six_by_six_equals_enumeration(rng):
    for _ in range(100):
        s = rng.normal(size=(6, 6))
        assert hungarian(s)[1] == brute_force(s)


@pytest.mark.parametrize("m", range(1, 8))
def test_optimal_up_to_seven(m, rng):
    for _ in range(5 if m == 7 else 20):
        s = rng.integers(-5, 6, size=(m, m)).astype(float)  # integer scores: many ties
        cols, value = hungarian(s)
        assert sorted(cols) == list(range(m))
        assert value == brute_force(s)


def test_rectangular(rng):
    s = rng.normal(size=(3, 5))
    cols, value = hungarian(s)
    best = max(sum(s[i, p[i]] for i in range(3)) for p in itertools.permutations(range(5), 3))
    assert value == pytest.approx(best, abs=1e-12) and len(set(cols)) == 3
    rows, value_t = hungarian(s.T)
    assert value_t == pytest.approx(best, abs=1e-12)


def test_ties_are_deterministic():
    s = np.zeros((4, 4))
    assert list(hungarian(s)[0]) == list(hungarian(s)[0])


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf]]))


def test_decode_strong_diagonal():
    m, score = decode(50.0 * np.eye(3))
    assert m.assignment == (0, 1, 2) and score == 150.0


def test_decode_all_negative_goes_to_dummy():
    theta = -np.ones((2, 2))
    best = max(all_matchings(2, 2), key=lambda a: sum(theta[i, j] for i, j in enumerate(a) if j != DUMMY))
    assert best == (DUMMY, DUMMY)
    m, score = decode(theta)
    assert m.assignment == (DUMMY, DUMMY) and score == 0.0


def test_decode_value_equals_assignment_optimum(rng):
    for _ in range(30):
        n_s, n_t = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        if n_s > n_t:
            n_s, n_t = n_t, n_s
        theta = rng.normal(size=(n_s, n_t))
        m, score = decode(theta)
        _, opt = hungarian(build_phi_data(theta))
        assert score == pytest.approx(opt, abs=1e-12)
        # also the best over all valid matchings, and trace(M^T pad(theta))
        best = max(sum(theta[i, j] for i, j in enumerate(a) if j != DUMMY) for a in all_matchings(n_s, n_t))
        assert score == pytest.approx(best, abs=1e-12)
        assert np.sum(m.as_matrix() * pad_theta(theta)) == pytest.approx(score, abs=1e-12)


def build_phi_data(theta):
    from stochmatch.autodiff import Tensor

    return build_phi(Tensor(theta)).data


def test_decoded_matrix_satisfies_constraints(rng):
    for _ in range(30):
        theta = rng.normal(size=(3, 4))
        m, _ = decode(theta)
        mat = m.as_matrix()
        np.testing.assert_array_equal(mat[:3].sum(axis=1), 1)
        np.testing.assert_array_equal(mat[:, :4].sum(axis=0), 1)
        assert mat[3, 4] == 0


def test_decode_without_dummy_never_uses_dummy(rng):
    for _ in range(20):
        m, _ = decode(-np.abs(rng.normal(size=(4, 4))), dummy=False)
        assert DUMMY not in m.assignment


def test_matching_from_hard_permutation_agrees_with_transform(rng):
    theta = rng.normal(size=(2, 3))
    phi = build_phi_data(theta)
    cols, _ = hungarian(phi)
    s = np.eye(5)[cols]
    m, _ = decode(theta)
    np.testing.assert_array_equal(transform_reference(s, 2, 3), m.as_matrix())


def test_discrete_matching_invariants():
    with pytest.raises(ValueError):
        DiscreteMatching((0, 0), 2)
    with pytest.raises(ValueError):
        DiscreteMatching((3,), 2)
    m = DiscreteMatching((1, DUMMY), 3)
    assert m.reverse() == (DUMMY, 0, DUMMY)
    assert m.oriented(True) == [DUMMY, 0, DUMMY]


def test_node_correctness():
    truth = [(0, 0), (1, 1), (2, 2), (3, 3)]
    assert node_correctness(DiscreteMatching((0, 1, 2, 3), 4), truth) == 1.0
    assert node_correctness(DiscreteMatching((1, 0, 3, 2), 4), truth) == 0.0
    assert node_correctness(DiscreteMatching((0, 1, 2, DUMMY), 4), truth) == 0.75
    with pytest.raises(ValueError):
        node_correctness(DiscreteMatching((0,), 1), None)


def test_hard_soft_match():
    pred = DiscreteMatching((0, 1, DUMMY, 3), 4)
    assert hard_soft_match(pred, [(0, 0), (1, 1), (2, DUMMY)]) == (1, 1.0)
    assert hard_soft_match(pred, [(0, 0), (1, 2), (2, 1), (3, 3)]) == (0, 0.5)
    assert hard_soft_match(pred, []) == (1, 1.0)


def test_truth_pattern_requires_dummy_for_unlisted_sources():
    assert truth_pattern([(0, 2)], 2) == [(0, 2), (1, DUMMY)]


def test_metric_bounds(rng):
    for _ in range(20):
        pred = DiscreteMatching(tuple(rng.permutation(5)), 5)
        truth = list(enumerate(rng.permutation(5).tolist()))
        nc = node_correctness(pred, truth)
        hard, soft = hard_soft_match(pred, truth_pattern(truth, 5))
        assert 0 <= nc <= 1 and 0 <= soft <= 1
        assert hard == 0 or soft == 1.0


def test_package_attributes_are_modules():
    import types

    import stochmatch

    assert isinstance(stochmatch.decode, types.ModuleType)
    assert isinstance(stochmatch.sinkhorn, types.ModuleType)
