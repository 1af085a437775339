import os
import sys
import unittest

import numpy as np

# 添加 src 目录到模块搜索路径，以便可以导入 src 目录中的模块
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from kernels import (  # 导入要测试的注意力核函数
    EmptyMaskError, project_simplex_pgd, softmax, softmax_backward, sparsemax, sparsemax_backward,
)

SLOW = os.getenv("BAGSENTINEL_SLOW_TESTS") == "1"


def random_masked_rows(rng, rows, width):
    scores = rng.normal(scale=3.0, size=(rows, width))
    mask = rng.random((rows, width)) < 0.7
    mask[np.arange(rows), rng.integers(width, size=rows)] = True
    return scores, mask


def numerical_vjp(func, z, out_grad, h=1e-6):
    grad = np.zeros_like(z)
    for i in range(z.size):
        step = np.zeros_like(z)
        step[i] = h
        grad[i] = out_grad @ (func(z + step) - func(z - step)) / (2 * h)
    return grad


class TestSparsemax(unittest.TestCase):
    def test_examples(self):
        np.testing.assert_allclose(sparsemax(np.array([1.0, 1.0, 1.0])), [1 / 3, 1 / 3, 1 / 3], atol=1e-15)
        np.testing.assert_allclose(sparsemax(np.array([0.6, 0.4])), [0.6, 0.4], atol=1e-15)
        np.testing.assert_array_equal(sparsemax(np.array([2.0, 0.0])), [1.0, 0.0])
        np.testing.assert_allclose(sparsemax(np.array([10.6, 10.4])), [0.6, 0.4], atol=1e-12)

    def test_two_dimensional_closed_form_on_grid(self):
        # 二进制有理数网格上所有运算都是精确的
        values = np.arange(-50, 50) / 32.0
        z1, z2 = np.meshgrid(values, values, indexing="ij")
        scores = np.stack([z1.ravel(), z2.ravel()], axis=1)
        self.assertEqual(scores.shape[0], 10_000)
        weights = sparsemax(scores)
        expected = np.clip((scores[:, 0] - scores[:, 1] + 1.0) / 2.0, 0.0, 1.0)
        np.testing.assert_array_equal(weights[:, 0], expected)
        np.testing.assert_array_equal(weights[:, 1], 1.0 - expected)

    def test_matches_projected_gradient_reference(self):
        rng = np.random.default_rng(0)
        draws = 1000 if SLOW else 150
        for _ in range(draws):
            z = rng.normal(scale=2.0, size=int(rng.integers(1, 11)))
            reference = project_simplex_pgd(z, tol=1e-10)
            self.assertLess(np.max(np.abs(sparsemax(z) - reference)), 1e-6)

    def test_masked_positions_are_excluded_from_projection(self):
        scores = np.array([0.5, 100.0, 0.3])
        mask = np.array([True, False, True])
        weights = sparsemax(scores, mask)
        self.assertEqual(weights[1], 0.0)
        np.testing.assert_allclose(weights[[0, 2]], sparsemax(np.array([0.5, 0.3])), atol=1e-15)

    def test_all_masked_row_is_rejected(self):
        with self.assertRaises(EmptyMaskError):
            sparsemax(np.zeros(3), np.zeros(3, dtype=bool))
        with self.assertRaises(EmptyMaskError):
            softmax(np.zeros((2, 3)), np.array([[True, False, False], [False, False, False]]))

    def test_sparsity_contrast(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(scale=10.0, size=(1000, 20))
        sparse_zero_rows = np.count_nonzero((sparsemax(scores) == 0.0).any(axis=1))
        self.assertGreater(sparse_zero_rows / 1000, 0.99)
        self.assertFalse((softmax(scores) == 0.0).any())


class TestSimplexInvariants(unittest.TestCase):
    def setUp(self):
        """
        在每个测试方法之前运行，生成 10⁴ 个带掩码的随机分数向量。
        """
        rng = np.random.default_rng(3)
        self.scores, self.mask = random_masked_rows(rng, 10_000, 12)
        self.permutation = rng.permutation(12)

    def test_simplex_membership(self):
        for kernel in (sparsemax, softmax):
            with self.subTest(kernel=kernel.__name__):
                weights = kernel(self.scores, self.mask)
                self.assertTrue((weights >= 0.0).all())
                np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)
                self.assertTrue((weights[~self.mask] == 0.0).all())

    def test_permutation_equivariance(self):
        for kernel in (sparsemax, softmax):
            with self.subTest(kernel=kernel.__name__):
                base = kernel(self.scores, self.mask)
                permuted = kernel(self.scores[:, self.permutation], self.mask[:, self.permutation])
                np.testing.assert_allclose(permuted, base[:, self.permutation], atol=1e-12)

    def test_shift_invariance(self):
        for kernel in (sparsemax, softmax):
            with self.subTest(kernel=kernel.__name__):
                np.testing.assert_allclose(kernel(self.scores + 2.5, self.mask), kernel(self.scores, self.mask),
                                           atol=1e-12)

    def test_monotonicity(self):
        for kernel in (sparsemax, softmax):
            with self.subTest(kernel=kernel.__name__):
                weights = kernel(self.scores, self.mask)
                masked_scores = np.where(self.mask, self.scores, -np.inf)
                order = np.argsort(-masked_scores, axis=1, kind="stable")
                sorted_weights = np.take_along_axis(weights, order, axis=1)
                sorted_mask = np.take_along_axis(self.mask, order, axis=1)
                steps = np.diff(sorted_weights, axis=1)
                valid = sorted_mask[:, 1:]
                self.assertTrue((steps[valid] <= 0.0).all())

    def test_softmax_unmasked_weights_are_positive(self):
        weights = softmax(self.scores, self.mask)
        self.assertTrue((weights[self.mask] > 0.0).all())


class TestSoftmax(unittest.TestCase):
    def test_examples(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(softmax(np.array([np.log(3.0), 0.0])), [0.75, 0.25], atol=1e-15)
        weights = softmax(np.array([1000.0, 0.0]))
        self.assertTrue(np.isfinite(weights).all())
        self.assertAlmostEqual(weights[0], 1.0)


class TestBackward(unittest.TestCase):
    def test_sparsemax_constant_gradient_is_annihilated(self):
        z = np.array([0.1, 0.2, 0.15])
        self.assertTrue((sparsemax(z) > 0).all())
        np.testing.assert_allclose(sparsemax_backward(z, None, np.full(3, 2.5)), 0.0, atol=1e-15)

    def test_sparsemax_vertex_has_zero_gradient(self):
        z = np.array([3.0, 0.0, -1.0])
        np.testing.assert_array_equal(sparsemax(z), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(sparsemax_backward(z, None, np.array([1.0, -2.0, 5.0])), 0.0)

    def test_sparsemax_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 20:
            z = rng.normal(scale=0.5, size=5)
            weights = sparsemax(z)
            support = weights > 0
            tau = np.mean(z[support]) - 1.0 / support.sum()
            # 跳过支撑集边界附近的点
            if np.min(np.abs(z - tau)) < 1e-3:
                continue
            out_grad = rng.normal(size=5)
            expected = numerical_vjp(sparsemax, z, out_grad)
            actual = sparsemax_backward(z, None, out_grad)
            scale = max(np.max(np.abs(expected)), 1e-8)
            self.assertLess(np.max(np.abs(actual - expected)) / scale, 1e-5)
            checked += 1

    def test_softmax_backward_cases(self):
        z = np.array([0.3, -1.2, 2.0, 0.0, 0.7])
        np.testing.assert_allclose(softmax_backward(z, None, np.full(5, 3.0)), 0.0, atol=1e-15)
        single = np.array([True, False, False, False, False])
        np.testing.assert_allclose(softmax_backward(z, single, np.arange(5.0)), 0.0, atol=1e-15)

    def test_softmax_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            z = rng.normal(size=5)
            out_grad = rng.normal(size=5)
            expected = numerical_vjp(softmax, z, out_grad)
            actual = softmax_backward(z, None, out_grad)
            scale = max(np.max(np.abs(expected)), 1e-8)
            self.assertLess(np.max(np.abs(actual - expected)) / scale, 1e-6)

    def test_masked_positions_get_zero_gradient(self):
        rng = np.random.default_rng(6)
        scores, mask = random_masked_rows(rng, 50, 6)
        out_grad = rng.normal(size=(50, 6))
        for backward in (sparsemax_backward, softmax_backward):
            with self.subTest(kernel=backward.__name__):
                self.assertTrue((backward(scores, mask, out_grad)[~mask] == 0.0).all())


if __name__ == '__main__':
    unittest.main()
