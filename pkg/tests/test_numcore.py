import numpy as np
import pytest

from waicflow.errors import ShapeError, TrainingError, UsageError
from waicflow.numcore import (AdamHyper, AdamState, Mlp, adam_step, gaussian_init,
                              init_mlp, make_rng, mlp_backward, mlp_forward,
                              mlp_get_params, mlp_set_params, relu_mask)


def make_net(*layers):
    weights = [np.asarray(w, dtype=np.float64) for w in layers[0]]
    biases = [np.asarray(b, dtype=np.float64) for b in layers[1]]
    return Mlp(weights, biases)


def zero_net(in_dim, hidden, out_dim):
    return Mlp([np.zeros((hidden, in_dim)), np.zeros((hidden, hidden)),
                np.zeros((out_dim, hidden))],
               [np.zeros(hidden), np.zeros(hidden), np.zeros(out_dim)])


def identity_111():
    return make_net(([[1.0]], [[1.0]], [[1.0]]), ([0.0], [0.0], [0.0]))


class TestMlpForward:
    def test_zero_network_maps_to_zero(self):
        net = zero_net(3, 5, 2)
        out, _ = mlp_forward(net, np.array([1.0, -2.0, 3.0]))
        assert np.array_equal(out, np.zeros(2))

    def test_identity_chain_passes_positive(self):
        out, _ = mlp_forward(identity_111(), np.array([2.0]))
        assert out[0] == 2.0

    def test_relu_kills_negative_sign(self):
        out, _ = mlp_forward(identity_111(), np.array([-2.0]))
        assert out[0] == 0.0

    def test_matches_reference_evaluation(self):
        # independent loop-based re-evaluation of a random 4->8->8->4 net
        rng = make_rng(11)
        net = init_mlp(rng, 4, 8, 4)
        x = rng.normal(size=4)
        out, _ = mlp_forward(net, x)

        a = x
        for k in range(3):
            z = np.array([float(sum(net.weights[k][o, i] * a[i]
                                    for i in range(net.weights[k].shape[1])))
                          + net.biases[k][o]
                          for o in range(net.weights[k].shape[0])])
            a = np.maximum(z, 0.0) if k < 2 else z
        assert np.allclose(out, a, rtol=0, atol=1e-12)

    def test_batch_rows_match_single_rows_bitwise(self):
        rng = make_rng(12)
        net = init_mlp(rng, 4, 8, 4)
        xs = rng.normal(size=(50, 4))
        batch_out, _ = mlp_forward(net, xs)
        for i in range(50):
            single, _ = mlp_forward(net, xs[i])
            assert np.array_equal(single, batch_out[i])

    def test_dimension_mismatch_names_layer(self):
        net = zero_net(3, 5, 2)
        with pytest.raises(ShapeError, match="layer 0"):
            mlp_forward(net, np.zeros(4))

    def test_bad_composition_rejected(self):
        with pytest.raises(ShapeError, match="layer 1"):
            Mlp([np.zeros((5, 3)), np.zeros((4, 4)), np.zeros((2, 4))],
                [np.zeros(5), np.zeros(4), np.zeros(2)])


class TestMlpBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = make_rng(13)
        net = init_mlp(rng, 3, 6, 2)
        out, cache = mlp_forward(net, rng.normal(size=3))
        grads, gx = mlp_backward(net, cache, np.zeros_like(out))
        assert np.array_equal(grads, np.zeros(net.n_params))
        assert np.array_equal(gx, np.zeros(3))

    def test_single_weight_chain_rule(self):
        # loss = output of a 1-1-1 net; d loss / d W3 equals the
        # post-activation value W3 multiplies
        net = make_net(([[2.0]], [[3.0]], [[4.0]]), ([0.0], [0.0], [0.0]))
        x = np.array([1.5])
        out, cache = mlp_forward(net, x)
        grads, _ = mlp_backward(net, cache, np.array([1.0]))
        # flat layout: W1, b1, W2, b2, W3, b3
        a2 = 3.0 * (2.0 * 1.5)
        assert grads[4] == a2
        assert out[0] == 4.0 * a2

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_central_differences(self, seed):
        rng = make_rng(seed)
        net = init_mlp(rng, 3, 6, 2)           # 80 parameters
        assert net.n_params <= 200
        x = rng.normal(size=(4, 3))
        w_loss = rng.normal(size=(4, 2))

        def loss_of(params):
            mlp_set_params(net, params)
            out, _ = mlp_forward(net, x)
            return float((out * w_loss).sum())

        base = mlp_get_params(net)
        out, cache = mlp_forward(net, x)
        grads, _ = mlp_backward(net, cache, w_loss)
        h = 1e-5
        for i in range(base.size):
            p = base.copy()
            p[i] += h
            up = loss_of(p)
            p[i] -= 2 * h
            down = loss_of(p)
            numeric = (up - down) / (2 * h)
            rel = abs(numeric - grads[i]) / max(1e-8, abs(numeric) + abs(grads[i]))
            assert rel < 1e-3, f"seed {seed} param {i}: {rel}"
        mlp_set_params(net, base)

    def test_cache_mismatch_rejected(self):
        rng = make_rng(14)
        net = init_mlp(rng, 3, 6, 2)
        _, cache = mlp_forward(net, rng.normal(size=3))
        with pytest.raises(ShapeError):
            mlp_backward(net, cache, np.zeros(5))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        state = AdamState.initial(4)
        params = np.array([1.0, -2.0, 3.0, 0.5])
        new_params, new_state = adam_step(state, params, np.zeros(4))
        assert np.array_equal(new_params, params)
        assert new_state.step_count == 1

    def test_first_step_matches_hand_computation(self):
        # bias correction makes m_hat = g and v_hat = g^2 on step one, so the
        # update is -lr * g / (|g| + eps)
        state = AdamState.initial(1)
        params = np.zeros(1)
        new_params, _ = adam_step(state, params, np.array([0.1]))
        expected = -1e-3 * 0.1 / (0.1 + 1e-8)
        assert new_params[0] == pytest.approx(expected, abs=1e-15)
        assert new_params[0] == pytest.approx(-9.99999e-4, abs=1e-9)

    def test_constant_gradient_keeps_step_near_lr(self):
        state = AdamState.initial(1)
        params = np.zeros(1)
        for _ in range(2):
            prev = params.copy()
            params, state = adam_step(state, params, np.array([0.1]))
            assert abs(params[0] - prev[0]) == pytest.approx(1e-3, rel=1e-3)

    def test_step_size_bound_for_constant_gradients(self):
        state = AdamState.initial(8)
        params = np.zeros(8)
        grad = make_rng(5).normal(size=8)
        for _ in range(50):
            prev = params.copy()
            params, state = adam_step(state, params, grad)
            assert np.all(np.abs(params - prev) <= 1e-3 * (1 + 1e-6))

    def test_nonfinite_gradient_names_component(self):
        state = AdamState.initial(3)
        grad = np.array([0.0, np.nan, 1.0])
        with pytest.raises(TrainingError, match="component 1"):
            adam_step(state, np.zeros(3), grad)

    def test_length_mismatch_rejected(self):
        state = AdamState.initial(3)
        with pytest.raises(ShapeError):
            adam_step(state, np.zeros(4), np.zeros(4))


class TestInitAndRng:
    def test_gaussian_init_reproducible(self):
        a = gaussian_init(make_rng(7), 6, 4)
        b = gaussian_init(make_rng(7), 6, 4)
        assert np.array_equal(a, b)

    def test_gaussian_init_different_seeds_differ(self):
        a = gaussian_init(make_rng(7), 6, 4)
        b = gaussian_init(make_rng(8), 6, 4)
        assert not np.array_equal(a, b)

    def test_gaussian_init_std(self):
        # fan_in 4 => std 0.5; 1e5 draws land within 2%
        w = gaussian_init(make_rng(9), 1000, 100).ravel()
        sub = w[:100000]
        assert abs(sub.std() - 0.1) / 0.1 < 0.02
        w4 = gaussian_init(make_rng(9), 25000, 4).ravel()[:100000]
        assert abs(w4.std() - 0.5) / 0.5 < 0.02

    def test_zero_fan_in_rejected(self):
        with pytest.raises(UsageError, match="invalid architecture"):
            gaussian_init(make_rng(0), 4, 0)

    def test_relu_subgradient_zero_at_zero(self):
        assert relu_mask(np.array([0.0]))[0] == 0.0
        assert relu_mask(np.array([-1e-300]))[0] == 0.0
        assert relu_mask(np.array([1e-300]))[0] == 1.0

    def test_fixed_seed_bitwise_identical_trajectory(self):
        def run():
            rng = make_rng(42)
            net = init_mlp(rng, 3, 6, 2)
            params = mlp_get_params(net)
            state = AdamState.initial(params.size, AdamHyper())
            outs = []
            for _ in range(5):
                x = rng.normal(size=(8, 3))
                out, cache = mlp_forward(net, x)
                grads, _ = mlp_backward(net, cache, out / 8)
                params, state = adam_step(state, params, grads)
                mlp_set_params(net, params)
                outs.append(out)
            return params, np.concatenate([o.ravel() for o in outs])

        p1, o1 = run()
        p2, o2 = run()
        assert np.array_equal(p1, p2)
        assert np.array_equal(o1, o2)
