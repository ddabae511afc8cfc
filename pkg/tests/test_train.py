import itertools
import math

import numpy as np
import pytest

from nextrec.data import split_chronological, training_instances
from nextrec.evaluation import evaluate
from nextrec.model import Hyperparams, QueryContext, build_meta_index, init_parameters, scores
from nextrec.train import (
    DivergenceError,
    GradientSet,
    TrainConfig,
    TrainInstance,
    forward_state,
    gradient_check,
    gradients_from_state,
    instance_data_loss,
    instance_gradients,
    instance_loss,
    sgd_step,
    to_dense_instances,
    train,
)

from conftest import toy_world
from corpora import BASE_TS, ring_markov_corpus


def make_instance(user=0, prev=1, target=2, dt_hours=2.0, ts=BASE_TS):
    return TrainInstance(user, prev, int(ts - dt_hours * 3600), ts, target)


class TestLoss:
    def test_uniform_model_log_q(self):
        hp = Hyperparams(dim=4, use_meta=False, lam=0.0)
        ds, _, _, params = toy_world(hp.copy(use_meta=True))
        params = init_parameters(hp, params.user_ids, params.poi_ids, [], [], np.random.default_rng(0))
        for t in params.tensors.values():
            t[:] = 0.0
        inst = make_instance()
        assert instance_data_loss(inst, params, hp, None) == pytest.approx(math.log(12))
        assert instance_loss(inst, params, hp, None) == pytest.approx(math.log(12))

    def test_hand_softmax_case(self):
        hp = Hyperparams(dim=2, use_meta=False, use_interval=False, use_timeslot=False, lam=0.0)
        params = init_parameters(hp, ["u0"], ["p0", "p1", "p2"], [], [], np.random.default_rng(0))
        for t in params.tensors.values():
            t[:] = 0.0
        params["W1"][:] = np.eye(2)
        params["W2"][:] = np.eye(2)
        params["W3"][:] = np.eye(2)
        params.Q[:] = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]
        params.U[0] = [0.25, 0.25]
        inst = make_instance(user=0, prev=0, target=1)
        st = forward_state(inst, params, hp, None)
        # h_q = q0, h_u = u0, s = (1.25, 0.25); scores = Q s
        y = params.Q @ np.array([1.25, 0.25])
        expected = -math.log(math.exp(y[1]) / np.sum(np.exp(y)))
        assert st.loss == pytest.approx(expected, abs=1e-12)

    def test_regularizer_included_once(self):
        hp = Hyperparams(dim=3, use_meta=False, lam=0.01)
        ds, _, _, params = toy_world(hp.copy(use_meta=True))
        params = init_parameters(hp, params.user_ids, params.poi_ids, [], [], np.random.default_rng(1))
        inst = make_instance()
        assert instance_loss(inst, params, hp, None) == pytest.approx(
            instance_data_loss(inst, params, hp, None) + 0.01 * params.squared_norm()
        )


class TestGradients:
    def test_dead_user_units_zero_w2_gradient(self):
        hp = Hyperparams(dim=4, use_meta=False)
        ds, _, _, params = toy_world(hp.copy(use_meta=True), seed=3)
        params = init_parameters(hp, params.user_ids, params.poi_ids, [], [], np.random.default_rng(2))
        params["b2"][:] = -100.0  # all user ReLU units inactive
        g = instance_gradients(make_instance(), params, hp, None)
        np.testing.assert_array_equal(g.dense["W2"], np.zeros((4, 4)))
        np.testing.assert_array_equal(g.dense["b2"], np.zeros(4))

    def test_interval_endpoint_gradients(self):
        hp = Hyperparams(dim=4, use_meta=False, pi_hours=6.0)
        ds, _, _, params = toy_world(hp.copy(use_meta=True), seed=4)
        params = init_parameters(hp, params.user_ids, params.poi_ids, [], [], np.random.default_rng(3))
        params["B"][:] = 0.5  # keep the previous-POI ReLU units active
        g0 = instance_gradients(make_instance(dt_hours=0.0), params, hp, None)
        np.testing.assert_array_equal(g0.dense["Wpi"], np.zeros((4, 4)))
        assert np.any(g0.dense["W0"] != 0)
        gpi = instance_gradients(make_instance(dt_hours=9.0), params, hp, None)
        np.testing.assert_array_equal(gpi.dense["W0"], np.zeros((4, 4)))
        assert np.any(gpi.dense["Wpi"] != 0)

    @pytest.mark.parametrize(
        "use_meta,use_interval,use_timeslot",
        list(itertools.product([True, False], repeat=3)),
    )
    def test_finite_difference_all_flag_combos(self, use_meta, use_interval, use_timeslot):
        hp = Hyperparams(
            dim=6,
            alpha=0.4,
            beta=0.3,
            use_meta=use_meta,
            use_interval=use_interval,
            use_timeslot=use_timeslot,
        )
        ds, split, meta, params = toy_world(hp, seed=10)
        inst = make_instance(user=2, prev=5, target=7, dt_hours=2.5)
        err = gradient_check(params, hp, inst, meta, eps=1e-4, samples_per_tensor=40, seed=1)
        assert err < 1e-4

    def test_linear_region_high_precision(self):
        hp = Hyperparams(dim=4, use_meta=False, use_interval=False, use_timeslot=False)
        params = init_parameters(hp, ["u0", "u1"], [f"p{i}" for i in range(5)], [], [],
                                 np.random.default_rng(4))
        for name in ("b1", "b2", "b3"):
            params[name][:] = 1.0  # push every ReLU input well past the kink
        err = gradient_check(params, hp, make_instance(user=1, prev=3, target=0), None,
                             eps=1e-4, samples_per_tensor=100, seed=2)
        assert err < 1e-6

    def test_kink_adjacent_coordinate_excluded(self):
        hp = Hyperparams(dim=3, use_meta=False, use_interval=False, use_timeslot=False)
        params = init_parameters(hp, ["u0"], ["p0", "p1", "p2"], [], [], np.random.default_rng(5))
        inst = make_instance(user=0, prev=1, target=2)
        st = forward_state(inst, params, hp, None)
        params["b2"][0] -= st.z_u[0] - 5e-5  # park one user unit inside the eps window
        st2 = forward_state(inst, params, hp, None)
        assert abs(st2.z_u[0]) < 1e-4
        err = gradient_check(params, hp, inst, None, eps=1e-4, samples_per_tensor=60, seed=3)
        assert err < 1e-4

    def test_gradient_set_lookup(self):
        g = GradientSet(dense={"W2": np.arange(4.0).reshape(2, 2)}, rows={"U": {1: np.array([3.0, 4.0])}})
        assert g.lookup("W2", (1, 0)) == 2.0
        assert g.lookup("U", (1, 1)) == 4.0
        assert g.lookup("U", (0, 1)) == 0.0


class TestSgdStep:
    def test_zero_gradient_fixed_point(self):
        hp = Hyperparams(dim=3, use_meta=False)
        ds, _, _, params = toy_world(hp.copy(use_meta=True), seed=5)
        params = init_parameters(hp, params.user_ids, params.poi_ids, [], [], np.random.default_rng(6))
        before = params.copy()
        grads = GradientSet(
            dense={"W2": np.zeros((3, 3))},
            rows={"U": {0: np.zeros(3)}},
        )
        sgd_step(params, grads, gamma=0.1, lam=0.0)
        np.testing.assert_array_equal(params["W2"], before["W2"])
        np.testing.assert_array_equal(params.U, before.U)

    def test_scalar_update(self):
        hp = Hyperparams(dim=1, use_meta=False, use_interval=False, use_timeslot=False)
        params = init_parameters(hp, ["u"], ["p"], [], [], np.random.default_rng(0))
        params["W2"][:] = 1.0
        sgd_step(params, GradientSet(dense={"W2": np.array([[0.5]])}), gamma=0.1, lam=0.0)
        assert params["W2"][0, 0] == pytest.approx(0.95)

    def test_weight_decay_shrinks(self):
        hp = Hyperparams(dim=3, use_meta=False)
        ds, _, _, params = toy_world(hp.copy(use_meta=True), seed=6)
        params = init_parameters(hp, params.user_ids, params.poi_ids, [], [], np.random.default_rng(7))
        norm_before = np.linalg.norm(params["W3"])
        sgd_step(params, GradientSet(dense={"W3": np.zeros((3, 3))}), gamma=0.1, lam=0.5)
        assert np.linalg.norm(params["W3"]) < norm_before

    def test_small_step_decreases_data_loss(self):
        hp = Hyperparams(dim=5, gamma=1e-4, lam=0.0)
        ds, split, meta, params = toy_world(hp, seed=7)
        inst = make_instance(user=1, prev=2, target=9, dt_hours=1.0)
        before = instance_data_loss(inst, params, hp, meta)
        grads = instance_gradients(inst, params, hp, meta)
        sgd_step(params, grads, gamma=1e-4, lam=0.0)
        after = instance_data_loss(inst, params, hp, meta)
        assert after < before


class TestTrainLoop:
    def _world(self, seed=0):
        ds = ring_markov_corpus(n_pois=10, n_users=12, length=18, seed=seed)
        split = split_chronological(ds)
        hp = Hyperparams(dim=8, use_meta=False, gamma=0.02, lam=0.001)
        params = init_parameters(hp, ds.user_ids(), ds.poi_ids(), [], [], np.random.default_rng(seed))
        return ds, split, hp, params

    def test_deterministic_history(self):
        ds, split, hp, params = self._world()
        cfg = TrainConfig(max_epochs=3, patience=5, seed=2)
        r1 = train(split, ds, params.copy(), hp, cfg, None)
        r2 = train(split, ds, params.copy(), hp, cfg, None)
        assert [(h.epoch, h.train_loss, h.valid_map) for h in r1.history] == [
            (h.epoch, h.train_loss, h.valid_map) for h in r2.history
        ]
        for name in r1.params.tensors:
            np.testing.assert_array_equal(r1.params[name], r2.params[name])

    def test_best_snapshot_rule(self):
        ds, split, hp, params = self._world(seed=1)
        cfg = TrainConfig(max_epochs=4, patience=2, seed=3)
        result = train(split, ds, params, hp, cfg, None)
        best_recorded = max(h.valid_map for h in result.history)
        assert result.history[result.best_epoch - 1].valid_map == best_recorded
        re_eval = evaluate(result.params, hp, split, ds, None, "valid")
        assert re_eval.map == pytest.approx(best_recorded, abs=1e-12)

    def test_early_stop_patience(self):
        ds, split, hp, params = self._world(seed=2)
        cfg = TrainConfig(max_epochs=50, patience=1, seed=4)
        result = train(split, ds, params, hp, cfg, None)
        n = len(result.history)
        assert n < 50 or result.best_epoch == 50
        # stopping happened exactly `patience` epochs after the best one
        if n < 50:
            assert n == result.best_epoch + 1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self):
        ds, split, hp, params = self._world(seed=3)
        hp = hp.copy(gamma=1e6)
        with pytest.raises(DivergenceError):
            train(split, ds, params, hp, TrainConfig(max_epochs=5, patience=5, seed=5), None)

    def test_loss_drops_on_learnable_corpus(self):
        ds, split, hp, params = self._world(seed=4)
        cfg = TrainConfig(max_epochs=6, patience=6, seed=6)
        result = train(split, ds, params, hp, cfg, None)
        assert result.history[-1].train_loss < result.history[0].train_loss

    def test_dense_instances_threading(self):
        ds, split, hp, _ = self._world(seed=5)
        insts = training_instances(split)
        dense = to_dense_instances(insts, ds.user_index, ds.poi_index)
        assert len(dense) == len(insts)
        assert all(
            d.target == ds.poi_index[i.target_poi_id] for d, i in zip(dense, insts)
        )


class TestForwardAgainstModel:
    def test_forward_state_matches_model_scores(self):
        hp = Hyperparams(dim=5)
        ds, split, meta, params = toy_world(hp, seed=11)
        inst = make_instance(user=1, prev=3, target=6, dt_hours=4.0)
        st = forward_state(inst, params, hp, meta)
        ctx = QueryContext(inst.user, inst.prev_poi, inst.prev_ts, inst.target_ts)
        y_model = scores(ctx, params, hp, meta)
        np.testing.assert_allclose(st.C @ st.s, y_model, atol=1e-12)
