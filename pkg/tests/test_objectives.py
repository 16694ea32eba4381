import numpy as np
import pytest

from stochmatch import autodiff as ad
from stochmatch.autodiff import Tape, Tensor, grad
from stochmatch.graph import Graph, GraphPair, generate_ba
from stochmatch.matching import transform
from stochmatch.objectives import (
    ObjectiveConfig, QapKernel, expected_objective, f_combined, f_qap, f_sup,
)
from stochmatch.sinkhorn import SinkhornConfig, sinkhorn

from conftest import central_diff, rel_err


def quadruple_sum(m0, kernel4):
    n_s, n_t = m0.shape
    total = 0.0
    for i in range(n_s):
        for j in range(n_t):
            for i2 in range(n_s):
                for j2 in range(n_t):
                    total += kernel4[i, j, i2, j2] * m0[i, j] * m0[i2, j2]
    return total


def edge_kernel4(a_s, a_t):
    return np.einsum("ik,jl->ijkl", a_s, a_t)


def random_graph(rng, n, p=0.5):
    return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p])


def random_matching(rng, n_s, n_t):
    s = sinkhorn(Tensor(rng.normal(size=(n_s + n_t, n_s + n_t)) * 2), 50)
    return transform(s, n_s, n_t)


def identical_pair(g):
    return GraphPair(g, g, [(i, i) for i in range(g.num_nodes)])


def perfect(n):
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = np.eye(n)
    return Tensor(m)


def test_identity_matching_on_identical_graphs_scores_twice_the_edges(rng):
    for n in range(2, 7):
        g = random_graph(rng, n)
        m = perfect(n)
        k = QapKernel.edge_agreement(identical_pair(g))
        assert f_qap(m, k).item() == 2 * g.num_edges
        assert quadruple_sum(m.data[:n, :n], edge_kernel4(g.adjacency, g.adjacency)) == 2 * g.num_edges


def test_all_dummy_scores_zero(rng):
    g = random_graph(rng, 5)
    m = np.zeros((6, 6))
    m[:5, 5] = 1
    m[5, :5] = 1
    assert f_qap(Tensor(m), QapKernel.edge_agreement(identical_pair(g))).item() == 0.0


def test_fast_qap_equals_quadruple_sum(rng):
    for _ in range(50):
        n_s = int(rng.integers(1, 7))
        n_t = int(rng.integers(n_s, 7))
        pair = GraphPair(random_graph(rng, n_s), random_graph(rng, n_t))
        m = random_matching(rng, n_s, n_t)
        fast = f_qap(m, QapKernel.edge_agreement(pair)).item()
        slow = quadruple_sum(m.data[:n_s, :n_t], edge_kernel4(pair.source.adjacency, pair.target.adjacency))
        assert abs(fast - slow) < 1e-9


def test_custom_kernel_equals_quadruple_sum(rng):
    k4 = rng.normal(size=(3, 4, 3, 4))
    m = random_matching(rng, 3, 4)
    assert abs(f_qap(m, QapKernel.custom(k4)).item() - quadruple_sum(m.data[:3, :4], k4)) < 1e-9


def test_custom_kernel_size_limit():
    with pytest.raises(ValueError):
        QapKernel.custom(np.zeros((9, 9, 9, 9)))


def test_batched_qap(rng):
    g = random_graph(rng, 4)
    k = QapKernel.edge_agreement(identical_pair(g))
    ms = [random_matching(rng, 4, 4).data for _ in range(3)]
    batched = f_qap(Tensor(np.stack(ms)), k).data.ravel()
    np.testing.assert_allclose(batched, [f_qap(Tensor(m), k).item() for m in ms], atol=1e-12)


def test_f_sup_values():
    assert f_sup(perfect(3), [(0, 0), (1, 1), (2, 2)]).item() == 0.0
    m = np.zeros((2, 2))
    m[0, 0] = 0.5
    assert f_sup(Tensor(m), [(0, 0)]).item() == pytest.approx(-0.6931, abs=1e-4)
    assert f_sup(Tensor(np.zeros((2, 2))), [(0, 0)]).item() == pytest.approx(np.log(1e-12))
    assert f_sup(Tensor(np.zeros((2, 2))), [(0, 0)]).item() == pytest.approx(-27.63, abs=0.01)
    with pytest.raises(ValueError):
        f_sup(perfect(2), None)


def test_f_sup_is_non_positive(rng):
    for _ in range(20):
        m = random_matching(rng, 4, 5)
        assert f_sup(m, [(0, 1), (2, 3), (3, 0)]).item() <= 0.0


def test_combined_objective(rng):
    g = random_graph(rng, 5)
    pair = identical_pair(g)
    k = QapKernel.edge_agreement(pair)
    m = random_matching(rng, 5, 5)
    qap = f_qap(m, k).item()
    assert f_combined(m, k, pair.ground_truth, ObjectiveConfig(0.0, True)).item() == qap
    assert f_combined(m, k, pair.ground_truth, ObjectiveConfig(3.0, False)).item() == qap
    assert f_combined(m, k, None, ObjectiveConfig(3.0, False)).item() == qap
    assert f_combined(perfect(5), k, pair.ground_truth, ObjectiveConfig(1.0, True)).item() == 2 * g.num_edges
    with pytest.raises(ValueError):
        f_combined(m, k, None, ObjectiveConfig(1.0, True))
    with pytest.raises(ValueError):
        ObjectiveConfig(lam=-1)


def test_expected_objective_without_noise_is_single_sample(rng):
    g = random_graph(rng, 5)
    pair = identical_pair(g)
    k = QapKernel.edge_agreement(pair)
    theta = Tensor(rng.normal(size=(5, 5)))
    cfg = SinkhornConfig(1.0, 20, 0)
    from stochmatch.matching import sample_matchings

    single = f_qap(sample_matchings(theta, cfg, 1, 0), k).item()
    est = expected_objective(theta, cfg, k, None, ObjectiveConfig(), 7, 3)
    assert est == pytest.approx(single, abs=1e-10)


def test_expected_objective_concentrates_for_strong_diagonal():
    g = generate_ba(12, 2, seed=1)
    pair = identical_pair(g)
    k = QapKernel.edge_agreement(pair)
    est = expected_objective(Tensor(50.0 * np.eye(12)), SinkhornConfig(1.0, 200), k, None, ObjectiveConfig(), 10, 0)
    assert abs(est - 2 * g.num_edges) <= 0.02 * 2 * g.num_edges


def test_expected_objective_is_seed_deterministic(rng):
    g = random_graph(rng, 6)
    k = QapKernel.edge_agreement(identical_pair(g))
    theta = Tensor(rng.normal(size=(6, 6)))
    a = expected_objective(theta, SinkhornConfig(), k, None, ObjectiveConfig(), 5, 11)
    b = expected_objective(theta, SinkhornConfig(), k, None, ObjectiveConfig(), 5, 11)
    assert a == b


def test_more_samples_lower_variance(rng):
    g = generate_ba(8, 2, seed=2)
    k = QapKernel.edge_agreement(identical_pair(g))
    theta = Tensor(rng.normal(size=(8, 8)))
    cfg = SinkhornConfig()

    def spread(n):
        return np.std([expected_objective(theta, cfg, k, None, ObjectiveConfig(), n, s) for s in range(30)])

    assert spread(1) > spread(30)


def test_expected_objective_gradient_matches_finite_differences(rng):
    g = random_graph(rng, 4, 0.6)
    h = random_graph(rng, 5, 0.6)
    pair = GraphPair(g, h, [(0, 1), (1, 0), (3, 4)])
    k = QapKernel.edge_agreement(pair)
    cfg = SinkhornConfig(1.0, 15)
    obj = ObjectiveConfig(0.5, True)
    theta = rng.normal(size=(4, 5))

    def value():
        return expected_objective(Tensor(theta), cfg, k, pair.ground_truth, obj, 3, 99)

    leaf = Tensor(theta, requires_grad=True)
    with Tape() as tape:
        y = expected_objective(leaf, cfg, k, pair.ground_truth, obj, 3, 99, track_gradients=True)
    assert rel_err(grad(tape, y)[leaf], central_diff(value, theta)) < 1e-4
