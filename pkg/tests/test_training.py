import csv
import json

import numpy as np
import pytest

from relu_landscape.measures import ProblemInstance, QuadratureGrid, eval_error
from relu_landscape.networks import NetworkConfig
from relu_landscape.responses import approximate_response, response_from_json
from relu_landscape.training import (Objective, Schedule, TrainingError, multistart_min, neuron_gain,
                                     pattern_search, subgradient_descent)

from conftest import random_network

AFFINE = {"d_in": 1, "box": {"lo": [0.0], "hi": [1.0]}, "density": {"id": "uniform_box"},
          "loss": {"id": "squared"}, "target": {"id": "affine", "coef": [2.0], "const": 1.0}}
TENT_SQ = {"d_in": 1, "box": {"lo": [-2.0], "hi": [2.0]}, "density": {"id": "uniform_box"},
           "loss": {"id": "squared"}, "target": {"id": "tent"}}
EX48 = {"d_in": 1, "box": {"lo": [-14.0], "hi": [14.0]}, "density": {"id": "uniform_interval_ex48", "ell": 13},
        "loss": {"id": "absolute"}, "target": {"id": "tent"}}


@pytest.fixture(scope="module")
def affine():
    inst = ProblemInstance.from_json(AFFINE)
    return inst, QuadratureGrid.default(inst.box)


class TestSchedule:
    def test_kinds(self):
        assert Schedule(0.1)(100) == 0.1
        assert Schedule(0.1, "inverse_sqrt", 1.0)(3) == pytest.approx(0.05)
        assert Schedule(0.1, "inverse", 1.0)(1) == pytest.approx(0.05)

    @pytest.mark.parametrize("args", [(-1.0,), (float("nan"),), (0.1, "cosine"), (0.1, "inverse", 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            Schedule(*args)


class TestDescent:
    def test_affine_least_squares(self, affine):
        inst, grid = affine
        rec = subgradient_descent(inst, NetworkConfig.zeros(1, 0), Schedule(0.5), 3000, grid)
        W = rec.final
        # normal equations on the same grid: the target is affine, so the optimum is exact
        assert rec.errs[-1] < 1e-6
        assert W.w1[0, 0] == pytest.approx(2.0, abs=1e-3) and W.bias[0] == pytest.approx(1.0, abs=1e-3)

    def test_zero_step(self, affine):
        inst, grid = affine
        W0 = random_network(np.random.default_rng(0), 1, 3)
        rec = subgradient_descent(inst, W0, Schedule(0.0), 10, grid)
        assert all(np.array_equal(s, W0.to_vector()) for s in rec.snapshots)
        assert len(set(rec.errs)) == 1

    def test_small_step_monotone(self, affine):
        inst, grid = affine
        rec = subgradient_descent(inst, NetworkConfig([[0.3]], [], [-2.0]), Schedule(0.1), 300, grid)
        assert all(b <= a + 1e-12 for a, b in zip(rec.errs, rec.errs[1:]))

    def test_record_consistency(self, affine, tmp_path):
        inst, grid = affine
        rec = subgradient_descent(inst, random_network(np.random.default_rng(1), 1, 2), Schedule(0.05), 50, grid)
        for i in np.random.default_rng(2).choice(len(rec.errs), 3, replace=False):
            W = rec.network_at(i)
            assert rec.errs[i] == eval_error(W, inst, grid)
            assert rec.norms[i] == W.norm_inf()
        rec.write_csv(tmp_path / "t.csv")
        rec.write_metadata(tmp_path / "t.json")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["iter", "err", "norm_inf", "step_size"]
        assert float(rows[5][1]) == rec.errs[4]
        meta = json.load(open(tmp_path / "t.json"))
        assert meta["verdict"] == rec.verdict and meta["schedule"]["eta0"] == 0.05

    def test_non_finite_reported(self, affine):
        inst, grid = affine
        with pytest.raises(TrainingError) as exc:
            with np.errstate(all="ignore"):
                subgradient_descent(inst, NetworkConfig([[1.0]], [], [0.0]), Schedule(1e6), 1000, grid)
        assert exc.value.iteration > 0

    def test_converged_verdict(self, affine):
        inst, grid = affine
        rec = subgradient_descent(inst, NetworkConfig([[2.0]], [], [1.0]), Schedule(0.1), 10, grid)
        assert rec.verdict == "converged"

    def test_ex45_divergence_verdict(self):
        cfg = {"d_in": 2, "box": {"lo": [-2.0, -2.0], "hi": [2.0, 2.0]}, "density": {"id": "three_disks_ex45"},
               "loss": {"id": "squared"}, "target": {"id": "plateau_ex45"}}
        inst = ProblemInstance.from_json(cfg)
        grid = QuadratureGrid.tensor_midpoint(inst.box, 96, refine={0: [-1.0, 0.0, 1.0], 1: [0.0]}, finest=1e-7)
        R = response_from_json({"background": {"linear": [0.0, 0.0], "const": 0.0},
                                "terms": [{"normal": [0.0, 1.0], "offset": 0.0, "delta": [0.0, 0.0],
                                           "intercept": 1.0, "multiplicity": 2}]})
        rec = subgradient_descent(inst, approximate_response(R, 64), Schedule(2e-5), 100, grid)
        assert rec.verdict == "norm-diverging"
        assert rec.errs[-1] < 0.05 and rec.norms[-1] > 50 and rec.norms[-1] >= rec.norms[0]


class TestGradient:
    def test_matches_finite_differences(self):
        inst = ProblemInstance.from_json(TENT_SQ)
        rng = np.random.default_rng(7)
        base = QuadratureGrid.default(inst.box)
        for _ in range(10):
            W = random_network(rng, 1, 3)
            pre = base.nodes @ W.w1[:, 1:] + W.bias[1:]
            keep = np.min(np.abs(pre), axis=1) >= 1e-3
            grid = QuadratureGrid(base.nodes[keep], base.weights[keep], "filtered")
            obj = Objective(inst, grid, 1, 3)
            th = W.to_vector()
            _, g = obj.err_and_grad(th)
            fd = np.array([(obj.err(th + 1e-5 * e) - obj.err(th - 1e-5 * e)) / 2e-5 for e in np.eye(th.size)])
            assert np.linalg.norm(fd - g) <= 1e-4 * max(np.linalg.norm(g), 1e-12)


class TestPatternSearch:
    def test_quadratic(self):
        th, val = pattern_search(lambda t: float(np.sum((t - [0.3, -1.2]) ** 2)), np.zeros(2))
        assert np.allclose(th, [0.3, -1.2], atol=1e-6) and val < 1e-11

    def test_budget(self):
        calls = []
        pattern_search(lambda t: calls.append(1) or float(np.sum(t ** 2)), np.ones(3), max_evals=20)
        assert len(calls) <= 27


class TestMultistart:
    def test_affine_target_recovered(self, affine):
        inst, grid = affine
        res = multistart_min(inst, 0, 3, 200, grid, seed=0, schedule=Schedule(0.5))
        assert res.err < 1e-8

    def test_reproducible_and_worker_independent(self, affine):
        inst, grid = affine
        a = multistart_min(inst, 1, 4, 30, grid, seed=5, polish_evals=200, workers=1)
        b = multistart_min(inst, 1, 4, 30, grid, seed=5, polish_evals=200, workers=3)
        assert a.err == b.err and a.restart_errs == b.restart_errs
        assert np.array_equal(a.network.to_vector(), b.network.to_vector())

    def test_env_thread_cap(self, affine, monkeypatch):
        inst, grid = affine
        monkeypatch.setenv("RELU_LANDSCAPE_THREADS", "2")
        a = multistart_min(inst, 1, 3, 20, grid, seed=1, polish_evals=100)
        monkeypatch.delenv("RELU_LANDSCAPE_THREADS")
        b = multistart_min(inst, 1, 3, 20, grid, seed=1, polish_evals=100)
        assert a.err == b.err

    def test_rejects_zero_restarts(self, affine):
        with pytest.raises(ValueError):
            multistart_min(*affine[:1], 1, 0, 10, affine[1])


class TestNeuronGain:
    def test_exact_fit_has_no_gain(self, affine):
        inst, grid = affine
        g = neuron_gain(inst, NetworkConfig([[2.0]], [], [1.0]), grid)
        assert g.first_order < 1e-10 and g.gain < 1e-10

    def test_ex48_zero_network(self):
        inst = ProblemInstance.from_json(EX48)
        grid = QuadratureGrid.default(inst.box)
        g = neuron_gain(inst, NetworkConfig.zeros(1, 2), grid)
        assert g.gain <= 5e-3

    def test_tent_squared_from_affine_fit(self):
        inst = ProblemInstance.from_json(TENT_SQ)
        grid = QuadratureGrid.default(inst.box)
        fit = multistart_min(inst, 0, 1, 500, grid, schedule=Schedule(0.05)).network
        g = neuron_gain(inst, fit, grid)
        assert g.first_order > 0 and g.gain > 0.01
        kink, n, o = g.best
        assert eval_error(fit.widen(n, o, kink), inst, grid) == pytest.approx(g.widened_err, abs=1e-12)

    def test_widening_never_hurts(self):
        inst = ProblemInstance.from_json(TENT_SQ)
        grid = QuadratureGrid.default(inst.box)
        rng = np.random.default_rng(4)
        for _ in range(3):
            W = random_network(rng, 1, 2, 0.5)
            g = neuron_gain(inst, W, grid, search_budget=200)
            kink, n, o = g.best
            assert eval_error(W.widen(n, o, kink), inst, grid) <= eval_error(W, inst, grid) + 1e-12
