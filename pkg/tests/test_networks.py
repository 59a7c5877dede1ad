import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relu_landscape.networks import (EffectiveTuple, NetworkConfig, Neuron, as_points, effective_tuple,
                                     eval_response, eval_tuple, network_from_json, network_to_json,
                                     response_jacobian, response_subgradient, tuple_from_json,
                                     tuple_to_json, tuple_to_network)

from conftest import random_network

TENT = NetworkConfig([[0.0, 1.0, 1.0, 1.0]], [1.0, -2.0, 1.0], [0.0, 1.0, 0.0, -1.0])


class TestEvalResponse:
    def test_affine_only(self):
        W = NetworkConfig([[2.0], [1.0]], [], [-1.0])
        assert eval_response(W, [1.0, 1.0]) == 2.0

    def test_tent_values(self):
        assert eval_response(TENT, 0.0) == 1.0
        assert eval_response(TENT, 0.5) == 0.5
        assert eval_response(TENT, 2.0) == 0.0

    def test_batch_1d(self):
        assert np.allclose(eval_response(TENT, np.array([-2.0, -0.5, 0.0, 0.5])), [0.0, 0.5, 1.0, 0.5])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_response(NetworkConfig.zeros(2, 1), [1.0, 2.0, 3.0])

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            NetworkConfig(np.zeros((2, 3)), np.zeros(1), np.zeros(3))

    def test_positive_homogeneity(self, rng):
        W = random_network(rng, 3, 4)
        lam = rng.uniform(0.1, 10, size=4)
        W2 = NetworkConfig(np.column_stack([W.w1[:, 0], W.w1[:, 1:] * lam]), W.w2 / lam,
                           np.concatenate([[W.bias[0]], W.bias[1:] * lam]))
        X = rng.normal(size=(500, 3))
        assert np.max(np.abs(eval_response(W, X) - eval_response(W2, X))) < 1e-10
        for a, b in zip(effective_tuple(W).neurons, effective_tuple(W2).neurons):
            assert np.allclose(a.normal, b.normal, atol=1e-10)
            assert abs(a.offset - b.offset) < 1e-10 and abs(a.kink - b.kink) < 1e-10

    def test_lipschitz_continuity(self, rng):
        W = random_network(rng, 2, 5)
        L = np.linalg.norm(W.w1[:, 0]) + np.sum(np.abs(W.w2) * np.linalg.norm(W.w1[:, 1:], axis=0))
        X = rng.normal(size=(500, 2))
        dx = rng.normal(size=(500, 2))
        dx *= 1e-8 / np.linalg.norm(dx, axis=1, keepdims=True)
        assert np.all(np.abs(eval_response(W, X + dx) - eval_response(W, X)) <= L * 1e-8 * (1 + 1e-6) + 1e-15)


class TestEffectiveTuple:
    def test_single_neuron_arithmetic(self):
        W = NetworkConfig([[0.0, 3.0], [0.0, 4.0]], [2.0], [0.0, -5.0])
        nr = effective_tuple(W).neurons[0]
        assert np.allclose(nr.normal, [0.6, 0.8])
        assert nr.offset == pytest.approx(1.0) and nr.kink == pytest.approx(10.0)

    def test_degenerate_neuron(self):
        W = NetworkConfig([[0.0, 0.0]], [3.0], [0.5, 2.0])
        E = effective_tuple(W)
        assert E.neurons[0].kink == 0.0 and E.neurons[0].offset == 0.0
        assert np.array_equal(E.neurons[0].normal, [1.0])
        assert E.background_const == pytest.approx(6.5)

    def test_degenerate_negative_bias_absorbs_nothing(self):
        E = effective_tuple(NetworkConfig([[0.0, 0.0]], [3.0], [0.0, -2.0]))
        assert E.background_const == 0.0

    def test_roundtrip_random(self, rng):
        for _ in range(30):
            d_in, d = int(rng.integers(1, 6)), int(rng.integers(0, 9))
            W = random_network(rng, d_in, d)
            X = rng.normal(size=(2000, d_in)) * 2
            E = effective_tuple(W)
            assert np.max(np.abs(eval_response(W, X) - eval_tuple(E, X))) < 1e-9
            assert np.max(np.abs(eval_response(tuple_to_network(E), X) - eval_response(W, X))) < 1e-9

    def test_tuple_network_tuple_exact(self, rng):
        neurons = [Neuron(v / np.linalg.norm(v), rng.normal(), rng.normal()) for v in rng.normal(size=(4, 3))]
        E = EffectiveTuple(neurons, rng.normal(size=3), rng.normal())
        E2 = effective_tuple(tuple_to_network(E))
        for a, b in zip(E.neurons, E2.neurons):
            assert np.allclose(a.normal, b.normal, atol=1e-12)
            assert abs(a.offset - b.offset) < 1e-12 and abs(a.kink - b.kink) < 1e-12

    def test_eval_tuple_examples(self):
        E = EffectiveTuple([Neuron([1.0, 0.0], 1.0, 2.0)], [0.0, 0.0], 0.0)
        assert eval_tuple(E, [3.0, 0.0]) == 4.0
        E0 = EffectiveTuple([Neuron([1.0, 0.0], 1.0, 0.0)], [1.0, 2.0], 0.5)
        assert eval_tuple(E0, [1.0, 1.0]) == 3.5

    def test_rejects_non_unit_normal(self):
        with pytest.raises(ValueError):
            EffectiveTuple([Neuron([2.0], 0.0, 1.0)], [0.0], 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 5), st.integers(0, 2**31 - 1))
    def test_roundtrip_property(self, d_in, d, seed):
        rng = np.random.default_rng(seed)
        W = random_network(rng, d_in, d)
        X = rng.normal(size=(200, d_in))
        assert np.max(np.abs(eval_response(W, X) - eval_tuple(effective_tuple(W), X))) < 1e-9


class TestSubgradient:
    def test_affine_gradient(self):
        W = NetworkConfig([[1.0], [2.0]], [], [3.0])
        g = response_subgradient(W, [0.5, -1.5])
        assert np.allclose(g.w1[:, 0], [0.5, -1.5]) and g.bias[0] == 1.0

    def test_kink_convention(self):
        W = NetworkConfig([[0.0, 1.0]], [2.0], [0.0, -1.0])
        g = response_subgradient(W, 1.0)  # pre-activation exactly 0
        assert g.w1[0, 1] == 0.0 and g.bias[1] == 0.0 and g.w2[0] == 0.0

    def test_finite_differences(self, rng):
        h = 1e-5
        checked = 0
        while checked < 20:
            W = random_network(rng, 3, 4)
            x = rng.normal(size=3)
            pre = x @ W.w1[:, 1:] + W.bias[1:]
            if np.min(np.abs(pre)) < 1e-3:
                continue
            g = response_subgradient(W, x).to_vector()
            th = W.to_vector()
            fd = np.empty_like(th)
            for i in range(th.size):
                e = np.zeros_like(th)
                e[i] = h
                fd[i] = (eval_response(NetworkConfig.from_vector(th + e, 3, 4), x)
                         - eval_response(NetworkConfig.from_vector(th - e, 3, 4), x)) / (2 * h)
            assert np.max(np.abs(fd - g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))
            checked += 1

    def test_jacobian_rows_match_single(self, rng):
        W = random_network(rng, 2, 3)
        X = rng.normal(size=(5, 2))
        J = response_jacobian(W, X)
        for i in range(5):
            assert np.allclose(J[i], response_subgradient(W, X[i]).to_vector())

    def test_single_point_only(self):
        with pytest.raises(ValueError):
            response_subgradient(NetworkConfig.zeros(2, 1), np.zeros((2, 2)))


class TestSerialization:
    def test_network_json_roundtrip(self, rng):
        W = random_network(rng, 3, 2)
        W2 = network_from_json(network_to_json(W))
        assert np.array_equal(W.to_vector(), W2.to_vector())

    def test_w1_is_column_major(self):
        obj = network_to_json(NetworkConfig([[1.0, 2.0], [3.0, 4.0]], [1.0], [0.0, 0.0]))
        assert obj["w1"] == [[1.0, 3.0], [2.0, 4.0]]

    def test_bad_shapes_rejected(self):
        with pytest.raises(ValueError):
            network_from_json({"d_in": 1, "d": 1, "w1": [[1.0]], "w2": [1.0], "bias": [0.0, 0.0]})

    def test_tuple_json_roundtrip(self, rng):
        E = effective_tuple(random_network(rng, 2, 3))
        E2 = tuple_from_json(tuple_to_json(E))
        X = rng.normal(size=(100, 2))
        assert np.array_equal(eval_tuple(E, X), eval_tuple(E2, X))

    def test_vector_layout(self):
        W = NetworkConfig([[1.0, 2.0], [3.0, 4.0]], [5.0], [6.0, 7.0])
        assert W.to_vector().tolist() == [1.0, 3.0, 2.0, 4.0, 5.0, 6.0, 7.0]

    def test_as_points(self):
        X, single = as_points(np.array([1.0, 2.0]), 2)
        assert single and X.shape == (1, 2)
        X, single = as_points(np.array([1.0, 2.0, 3.0]), 1)
        assert not single and X.shape == (3, 1)
