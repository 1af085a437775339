import math
import os
import sys
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np

# 添加 src 目录到模块搜索路径，以便可以导入 src 目录中的模块
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

import kernels
import network
from bagdata import Bag, BagBatch, Dataset, pad_and_mask
from network import (  # 导入要测试的网络组件
    ModelConfig, StaleTraceError, attention_pool, attention_scores, backward, batch_norm, dropout, dropout_scale,
    forward, init_model, locally_fc, parameter_shapes, residual_block,
)

VARIANT_FLAGS = ((False, False), (True, False), (False, True), (True, True))


def random_dataset(n, p, max_size, seed):
    rng = np.random.default_rng(seed)
    bags = tuple(
        Bag(bag_id=f"b{i}", label=i % 2, instances=rng.normal(size=(int(rng.integers(1, max_size + 1)), p)))
        for i in range(n)
    )
    return Dataset(bags=bags, p=p)


def relative_error(actual, expected):
    a, e = np.linalg.norm(actual), np.linalg.norm(expected)
    if a < 1e-10 and e < 1e-10:
        return 0.0
    return np.linalg.norm(actual - expected) / max(a, e)


class TestModelSetup(unittest.TestCase):
    def test_config_validation(self):
        with self.assertRaises(ValueError):
            ModelConfig(p=0)
        with self.assertRaises(ValueError):
            ModelConfig(p=3, dropout_rate=1.0)
        with self.assertRaises(ValueError):
            ModelConfig(p=3, n_blocks=0)

    def test_variant_names(self):
        names = [ModelConfig(p=2, use_skip=s, use_sparse=a).variant for s, a in VARIANT_FLAGS]
        self.assertEqual(names, ["FC", "Skip", "Sparse", "Proposed"])

    def test_init_shapes_and_bounds(self):
        cfg = ModelConfig(p=6, n_blocks=3, attn_hidden=10, seed=4)
        model = init_model(cfg)
        self.assertEqual(model.parameter_names, list(parameter_shapes(cfg)))
        for name, shape in parameter_shapes(cfg).items():
            self.assertEqual(model.params[name].shape, shape)
        self.assertLessEqual(np.abs(model.params["W0"]).max(), np.sqrt(6.0 / 6))
        self.assertLessEqual(np.abs(model.params["w"]).max(), np.sqrt(6.0 / 10))
        np.testing.assert_array_equal(model.params["b0"], 0.0)
        np.testing.assert_array_equal(model.params["gamma"], 1.0)
        np.testing.assert_array_equal(model.running_var, 1.0)

    def test_init_is_deterministic(self):
        cfg = ModelConfig(p=4, seed=9)
        a, b = init_model(cfg), init_model(cfg)
        for name in a.parameter_names:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_weight_scale_matches_fan_in(self):
        model = init_model(ModelConfig(p=200, n_blocks=1, seed=0))
        self.assertAlmostEqual(model.params["W0"].std(), np.sqrt(2.0 / 200), delta=0.005)

    def test_copy_is_independent(self):
        model = init_model(ModelConfig(p=3))
        clone = model.copy()
        clone.params["W0"][0, 0] += 1.0
        clone.running_mean[0] = 5.0
        self.assertNotEqual(model.params["W0"][0, 0], clone.params["W0"][0, 0])
        self.assertEqual(model.running_mean[0], 0.0)


class TestLayers(unittest.TestCase):
    def test_locally_fc_leaves_masked_rows_zero(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(2, 3, 4))
        mask = np.array([[True, True, False], [True, False, False]])
        W, b = rng.normal(size=(4, 4)), rng.normal(size=4)
        out = locally_fc(X, mask, W, b)
        np.testing.assert_allclose(out[0, 1], W @ X[0, 1] + b)
        np.testing.assert_array_equal(out[~mask], 0.0)
        with self.assertRaises(ValueError):
            locally_fc(X, mask, rng.normal(size=(3, 4)), b)

    def test_dropout_is_identity_in_eval_mode(self):
        X = np.ones((3, 4))
        rng = np.random.default_rng(0)
        self.assertIs(dropout(X, 0.3, "eval", rng), X)
        self.assertIsNone(dropout_scale((3, 4), 0.0, "train", rng))

    def test_dropout_rescales_kept_units(self):
        scale = dropout_scale((200, 200), 0.3, "train", np.random.default_rng(1))
        kept = scale[scale > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.7)
        self.assertAlmostEqual(np.count_nonzero(scale) / scale.size, 0.7, delta=0.01)
        self.assertAlmostEqual(scale.mean(), 1.0, delta=0.02)

    def test_attention_pool_is_convex_combination(self):
        Z = np.arange(12.0).reshape(1, 3, 4)
        alpha = np.array([[0.25, 0.75, 0.0]])
        mask = np.array([[True, True, False]])
        np.testing.assert_allclose(attention_pool(Z, alpha, mask)[0], 0.25 * Z[0, 0] + 0.75 * Z[0, 1])

    def test_batch_norm_modes(self):
        rng = np.random.default_rng(2)
        F = rng.normal(loc=3.0, size=(16, 4))
        gamma, beta = np.ones(4), np.zeros(4)
        running_mean, running_var = np.zeros(4), np.ones(4)
        out, _ = batch_norm(F, gamma, beta, running_mean, running_var, "train", update_stats=False)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_array_equal(running_mean, 0.0)

        batch_norm(F, gamma, beta, running_mean, running_var, "train")
        np.testing.assert_allclose(running_mean, 0.1 * F.mean(axis=0))
        np.testing.assert_allclose(running_var, 0.9 + 0.1 * F.var(axis=0, ddof=1))

        out, _ = batch_norm(F, gamma, beta, running_mean, running_var, "eval")
        np.testing.assert_allclose(out, (F - running_mean) / np.sqrt(running_var + 1e-5))
        with self.assertRaises(ValueError):
            batch_norm(F[:1], gamma, beta, running_mean, running_var, "train")

    def test_residual_block_with_zero_weights(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(2, 4, 3))
        mask = np.array([[True, True, True, False], [True, False, False, False]])
        X[~mask] = 0.0
        W, b = np.zeros((3, 3)), np.zeros(3)
        # 零权重时 relu 输出为 0，训练模式的 dropout 也不会改变它
        out, _ = residual_block(X, mask, W, b, True, 0.3, "train", np.random.default_rng(0))
        np.testing.assert_array_equal(out, X)
        out, _ = residual_block(X, mask, W, b, False, 0.3, "train", np.random.default_rng(0))
        np.testing.assert_array_equal(out, 0.0)

    def test_residual_block_eval_mode_is_repeatable(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(3, 5, 4))
        mask = np.ones((3, 5), dtype=bool)
        mask[1, 2:] = False
        W, b = rng.normal(size=(4, 4)), rng.normal(size=4)
        first, _ = residual_block(X, mask, W, b, True, 0.5, "eval", None)
        second, _ = residual_block(X, mask, W, b, True, 0.5, "eval", None)
        np.testing.assert_array_equal(first, second)
        np.testing.assert_allclose(first[0, 1], np.maximum(W @ X[0, 1] + b, 0.0) + X[0, 1], atol=1e-12)

    def test_zero_attention_vector_gives_uniform_weights(self):
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(2, 3, 4))
        mask = np.array([[True, True, False], [True, True, True]])
        scores = attention_scores(Z, mask, rng.normal(size=(6, 4)), np.zeros(6))
        np.testing.assert_array_equal(scores, 0.0)
        alpha = kernels.sparsemax(scores, mask)
        np.testing.assert_allclose(alpha, [[0.5, 0.5, 0.0], [1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_attention_score_matches_scalar_loop(self):
        # 单个示例、p=2：逐元素循环计算 wᵀ·tanh(V·z)
        z = [0.7, -1.2]
        V = [[0.5, -0.3], [1.1, 0.4], [-0.8, 0.9]]
        w = [0.6, -1.5, 0.25]
        expected = 0.0
        for k in range(3):
            pre = 0.0
            for j in range(2):
                pre += V[k][j] * z[j]
            expected += w[k] * math.tanh(pre)
        Z = np.array([[z]])
        mask = np.array([[True]])
        scores = attention_scores(Z, mask, np.array(V), np.array(w))
        self.assertEqual(scores.shape, (1, 1))
        self.assertAlmostEqual(scores[0, 0], expected, places=12)
        self.assertAlmostEqual(kernels.sparsemax(scores, mask)[0, 0], 1.0, places=15)

    def test_batch_norm_running_stats_converge(self):
        gamma, beta = np.ones(3), np.zeros(3)
        # 反复输入同一个批次时，滑动统计量收敛到该批次的均值和无偏方差
        F = np.random.default_rng(6).normal(loc=[1.0, -2.0, 0.5], scale=[0.5, 2.0, 1.0], size=(32, 3))
        running_mean, running_var = np.zeros(3), np.ones(3)
        for _ in range(400):
            batch_norm(F, gamma, beta, running_mean, running_var, "train")
        np.testing.assert_allclose(running_mean, F.mean(axis=0), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(running_var, F.var(axis=0, ddof=1), rtol=1e-9)

        # 来自同一分布的不同批次时，收敛到总体均值和方差附近
        rng = np.random.default_rng(7)
        running_mean, running_var = np.zeros(3), np.ones(3)
        for _ in range(300):
            batch = rng.normal(loc=[3.0, -1.0, 0.0], scale=[2.0, 1.0, 0.5], size=(256, 3))
            batch_norm(batch, gamma, beta, running_mean, running_var, "train")
        np.testing.assert_allclose(running_mean, [3.0, -1.0, 0.0], atol=0.15)
        np.testing.assert_allclose(running_var, [4.0, 1.0, 0.25], rtol=0.1)


class TestForward(unittest.TestCase):
    def setUp(self):
        """
        在每个测试方法之前运行，构造 100 个随机 bag 和一个已初始化的模型。
        """
        self.ds = random_dataset(100, 5, 9, seed=0)
        self.model = init_model(ModelConfig(p=5, m_star=9, attn_hidden=8, seed=1))

    def test_outputs_are_well_formed(self):
        trace = forward(self.model, pad_and_mask(self.ds, 9))
        self.assertEqual(trace.logits.shape, (100,))
        self.assertTrue(((trace.probabilities > 0) & (trace.probabilities < 1)).all())
        np.testing.assert_allclose(trace.attention.sum(axis=1), 1.0, atol=1e-9)
        self.assertTrue((trace.attention[~trace.mask] == 0.0).all())
        self.assertEqual(trace.features.shape, (100, 5))

    def test_padding_invariance_is_bit_exact(self):
        tight = forward(self.model, pad_and_mask(self.ds, 9))
        loose = forward(self.model, pad_and_mask(self.ds, 20))
        np.testing.assert_array_equal(tight.logits, loose.logits)
        np.testing.assert_array_equal(tight.attention, loose.attention[:, :9])

    def test_masked_content_is_ignored(self):
        batch = pad_and_mask(self.ds, 12)
        noisy = np.where(batch.mask[:, :, None], batch.data, 1e6)
        dirty = BagBatch(data=noisy, mask=batch.mask, labels=batch.labels, bag_ids=batch.bag_ids)
        np.testing.assert_array_equal(forward(self.model, batch).logits, forward(self.model, dirty).logits)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        shuffled = Dataset(
            bags=tuple(Bag(bag_id=b.bag_id, label=b.label, instances=b.instances[rng.permutation(b.size)])
                       for b in self.ds.bags),
            p=self.ds.p,
        )
        original = forward(self.model, pad_and_mask(self.ds, 9)).logits
        permuted = forward(self.model, pad_and_mask(shuffled, 9)).logits
        np.testing.assert_allclose(permuted, original, atol=1e-9, rtol=0)

    def test_eval_forward_does_not_touch_running_stats(self):
        before = self.model.running_mean.copy()
        forward(self.model, pad_and_mask(self.ds, 9), mode="eval")
        np.testing.assert_array_equal(self.model.running_mean, before)
        forward(self.model, pad_and_mask(self.ds, 9), mode="train", rng=np.random.default_rng(0))
        self.assertFalse(np.array_equal(self.model.running_mean, before))

    def test_dense_variant_routes_through_softmax(self):
        dense = init_model(replace(self.model.config, use_sparse=False))
        batch = pad_and_mask(self.ds, 9)
        with patch.object(network.kernels, "softmax", wraps=kernels.softmax) as mocked_softmax:
            trace = forward(dense, batch)
            mocked_softmax.assert_called_once()
            forward(self.model, batch)
            mocked_softmax.assert_called_once()
        self.assertEqual(trace.kernel, "softmax")

    def test_sparse_attention_has_more_exact_zeros(self):
        batch = pad_and_mask(self.ds, 9)
        dense = init_model(replace(self.model.config, use_sparse=False))
        sparse_zeros = np.count_nonzero(forward(self.model, batch).attention[batch.mask] == 0.0)
        dense_zeros = np.count_nonzero(forward(dense, batch).attention[batch.mask] == 0.0)
        self.assertEqual(dense_zeros, 0)
        self.assertGreaterEqual(sparse_zeros, dense_zeros)

    def test_feature_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            forward(self.model, pad_and_mask(random_dataset(4, 3, 2, seed=0), 4))


class TestBackward(unittest.TestCase):
    def test_gradients_match_finite_differences_for_all_variants(self):
        ds = random_dataset(8, 5, 6, seed=11)
        batch = pad_and_mask(ds, 4)
        upstream = np.random.default_rng(12).normal(size=8)
        h = 1e-6

        def objective(model):
            trace = forward(model, batch, mode="train", update_stats=False)
            return float(upstream @ trace.logits)

        for use_skip, use_sparse in VARIANT_FLAGS:
            cfg = ModelConfig(p=5, m_star=4, n_blocks=2, attn_hidden=8, dropout_rate=0.0,
                              use_skip=use_skip, use_sparse=use_sparse, seed=13)
            model = init_model(cfg)
            trace = forward(model, batch, mode="train", update_stats=False)
            analytic = backward(model, batch, trace, upstream)
            self.assertEqual(list(analytic), model.parameter_names)
            for name in model.parameter_names:
                param = model.params[name]
                numeric = np.zeros_like(param)
                for index in np.ndindex(param.shape):
                    original = param[index]
                    param[index] = original + h
                    plus = objective(model)
                    param[index] = original - h
                    minus = objective(model)
                    param[index] = original
                    numeric[index] = (plus - minus) / (2 * h)
                with self.subTest(variant=cfg.variant, parameter=name):
                    self.assertEqual(analytic[name].shape, param.shape)
                    self.assertLess(relative_error(analytic[name], numeric), 1e-4)

    def test_stale_trace_is_rejected(self):
        ds = random_dataset(6, 3, 4, seed=0)
        batch = pad_and_mask(ds, 4)
        model = init_model(ModelConfig(p=3, m_star=4, attn_hidden=4))
        trace = forward(model, batch, mode="train", update_stats=False)
        model.mark_updated()
        with self.assertRaises(StaleTraceError):
            backward(model, batch, trace, np.ones(6))
        other = init_model(ModelConfig(p=3, m_star=4, attn_hidden=4))
        with self.assertRaises(StaleTraceError):
            backward(other, batch, forward(model, batch), np.ones(6))

    def test_masked_rows_receive_no_gradient_signal(self):
        ds = random_dataset(6, 3, 4, seed=1)
        model = init_model(ModelConfig(p=3, m_star=4, attn_hidden=4, dropout_rate=0.0))
        tight = pad_and_mask(ds, 4)
        loose = pad_and_mask(ds, 7)
        g = np.linspace(-1.0, 1.0, 6)
        a = backward(model, tight, forward(model, tight, mode="train", update_stats=False), g)
        b = backward(model, loose, forward(model, loose, mode="train", update_stats=False), g)
        for name in model.parameter_names:
            np.testing.assert_allclose(a[name], b[name], atol=1e-12)


if __name__ == '__main__':
    unittest.main()
