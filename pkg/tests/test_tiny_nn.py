import numpy as np
import pytest

from angionav import tiny_nn as nn


def finite_diff_check(params, x, dlogits, h=1e-5, per_layer_samples=8):
    """Norm-relative error between analytic and numeric gradients.

    Components whose perturbation flips a ReLU activation pattern are
    skipped: finite differences are only meaningful where the network is
    locally smooth.
    """
    logits, cache = nn.forward(params, x)
    gw, gb = nn.backward(params, cache, dlogits)

    def total(p):
        out, _ = nn.forward(p, x)
        return float((out * dlogits).sum())

    def pattern(p):
        _, c = nn.forward(p, x)
        return [z > 0 for z in c["pre"][:-1]]

    nums, anas = [], []
    rng = np.random.default_rng(0)
    for li in range(params.n_layers):
        for arr, g in ((params.weights[li], gw[li]), (params.biases[li], gb[li])):
            flat = arr.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            picks = rng.choice(flat.size, size=min(per_layer_samples, flat.size), replace=False)
            for idx in picks:
                old = flat[idx]
                flat[idx] = old + h
                pat_p, lp = pattern(params), total(params)
                flat[idx] = old - h
                pat_m, lm = pattern(params), total(params)
                flat[idx] = old
                if any(not np.array_equal(a, b) for a, b in zip(pat_p, pat_m)):
                    continue
                nums.append((lp - lm) / (2 * h))
                anas.append(gflat[idx])
    nums, anas = np.array(nums), np.array(anas)
    denom = max(np.linalg.norm(nums), np.linalg.norm(anas), 1e-12)
    return np.linalg.norm(nums - anas) / denom


class TestForward:
    def test_zero_params_uniform_softmax(self):
        p = nn.init_mlp([3, 4, 4], seed=0)
        for w in p.weights:
            w[:] = 0.0
        for b in p.biases:
            b[:] = 0.0
        logits, _ = nn.forward(p, np.array([0.3, -0.2, 0.9]))
        assert np.array_equal(logits, np.zeros(4))
        assert np.allclose(nn.softmax(logits), 0.25)

    def test_identity_net(self):
        p = nn.MlpParams((1, 1), [np.array([[1.0]])], [np.array([0.0])])
        logits, _ = nn.forward(p, np.array([0.7]))
        assert logits[0] == 0.7

    def test_hand_computed_chain(self):
        w0 = np.array([[1.0, -1.0], [0.5, 0.5]])
        b0 = np.array([0.1, -0.2])
        w1 = np.array([[2.0, 0.0], [0.0, 3.0]])
        b1 = np.array([0.0, 1.0])
        p = nn.MlpParams((2, 2, 2), [w0, w1], [b0, b1])
        x = np.array([1.0, 2.0])
        # pre0 = (1 - 2 + 0.1, 0.5 + 1 - 0.2) = (-0.9, 1.3); relu -> (0, 1.3)
        # out = (2*0, 3*1.3 + 1) = (0, 4.9)
        logits, _ = nn.forward(p, x)
        assert np.allclose(logits, [0.0, 4.9])

    def test_shape_mismatch(self):
        p = nn.init_mlp([4, 3], seed=0)
        with pytest.raises(ValueError):
            nn.forward(p, np.zeros(5))


class TestBackward:
    def test_zero_upstream_zero_grads(self):
        p = nn.init_mlp([4, 6, 2], seed=1)
        x = np.random.default_rng(0).normal(size=(5, 4))
        _, cache = nn.forward(p, x)
        gw, gb = nn.backward(p, cache, np.zeros((5, 2)))
        assert all(not g.any() for g in gw)
        assert all(not g.any() for g in gb)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for seed in range(20):
            p = nn.init_mlp([5, 8, 6, 3], seed=seed)
            x = rng.normal(size=(4, 5))
            d = rng.normal(size=(4, 3))
            worst = max(worst, finite_diff_check(p, x, d))
        assert worst <= 1e-4

    def test_dead_relu_zero_gradient(self):
        p = nn.init_mlp([1, 1, 1], seed=0)
        p.weights[0][:] = 1.0
        p.biases[0][:] = 0.0
        p.weights[1][:] = 1.0
        x = np.array([-2.0])  # pre-activation negative: unit dead
        _, cache = nn.forward(p, x)
        gw, _gb = nn.backward(p, cache, np.array([1.0]))
        assert gw[0][0, 0] == 0.0


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = nn.init_mlp([3, 2], seed=3)
        st = nn.init_adam(p)
        before = [w.copy() for w in p.weights]
        nn.adam_step(p, ([np.zeros((2, 3))], [np.zeros(2)]), st)
        assert all(np.array_equal(a, b) for a, b in zip(before, p.weights))
        assert st.step == 1

    def test_first_step_closed_form(self):
        p = nn.MlpParams((1, 1), [np.array([[0.5]])], [np.array([0.0])])
        st = nn.init_adam(p, lr=0.1)
        nn.adam_step(p, ([np.array([[1.0]])], [np.array([0.0])]), st)
        # m_hat = 1, v_hat = 1 -> step of -lr / (1 + eps)
        assert p.weights[0][0, 0] == pytest.approx(0.5 - 0.1 / (1.0 + 1e-8), abs=1e-15)

    def test_two_steps_match_scripted_recursion(self):
        p = nn.MlpParams((1, 1), [np.array([[1.0]])], [np.array([0.0])])
        st = nn.init_adam(p, lr=0.05)
        g = 0.7
        for _ in range(2):
            nn.adam_step(p, ([np.array([[g]])], [np.array([0.0])]), st)
        # independent scripted recursion
        m = v = 0.0
        w = 1.0
        for k in range(1, 3):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.05 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
        assert p.weights[0][0, 0] == pytest.approx(w, abs=1e-15)

    def test_nonfinite_gradient_aborts(self):
        p = nn.init_mlp([2, 2], seed=4)
        st = nn.init_adam(p)
        with pytest.raises(nn.NumericsError):
            nn.adam_step(p, ([np.array([[np.nan, 0], [0, 0]])], [np.zeros(2)]), st)


class TestDeterminism:
    def test_same_seed_same_init(self):
        a = nn.init_mlp([16, 256, 128, 64, 4], seed=11)
        b = nn.init_mlp([16, 256, 128, 64, 4], seed=11)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_different_seed_differs(self):
        a = nn.init_mlp([4, 4], seed=1)
        b = nn.init_mlp([4, 4], seed=2)
        assert not np.array_equal(a.weights[0], b.weights[0])


class TestHeads:
    def test_log_softmax_normalizes(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(7, 4)) * 30
        assert np.allclose(np.exp(nn.log_softmax(z)).sum(axis=1), 1.0)

    def test_entropy_bounds(self):
        assert nn.categorical_entropy(np.zeros(4)) == pytest.approx(np.log(4))
        assert nn.categorical_entropy(np.array([100.0, 0, 0, 0])) == pytest.approx(0.0, abs=1e-9)

    def test_sigmoid_saturation_finite(self):
        z = np.array([-1000.0, 1000.0])
        assert np.all(np.isfinite(nn.log_sigmoid(z)))
        assert nn.sigmoid(z)[0] == 0.0 and nn.sigmoid(z)[1] == 1.0

    def test_sampling_follows_probabilities(self):
        rng = np.random.default_rng(6)
        logits = np.log(np.array([0.7, 0.1, 0.1, 0.1]))
        draws = [nn.categorical_sample(logits, rng) for _ in range(2000)]
        assert abs(np.mean([d == 0 for d in draws]) - 0.7) < 0.05


class TestCheckpoints:
    def test_roundtrip_bit_exact(self, tmp_path):
        p = nn.init_mlp([16, 32, 4], seed=7)
        nn.save_checkpoint(p, tmp_path / "c.json", meta={"kind": "policy"})
        q, meta = nn.load_checkpoint(tmp_path / "c.json")
        assert meta == {"kind": "policy"}
        assert q.layer_sizes == p.layer_sizes
        assert all(np.array_equal(a, b) for a, b in zip(p.weights, q.weights))
        assert all(np.array_equal(a, b) for a, b in zip(p.biases, q.biases))

    def test_shape_chain_rejected(self, tmp_path):
        p = nn.init_mlp([16, 32, 4], seed=7)
        nn.save_checkpoint(p, tmp_path / "c.json")
        with pytest.raises(ValueError):
            nn.load_checkpoint(tmp_path / "c.json", expect_layer_sizes=(16, 16, 4))

    def test_wrong_format_rejected(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"format": "other", "version": 1}')
        with pytest.raises(ValueError):
            nn.load_checkpoint(tmp_path / "bad.json")
