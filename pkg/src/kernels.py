"""
掩码注意力归一化核：sparsemax 与 softmax，各自带前向计算和精确的反向传播。

所有函数既接受单个向量 (m,)，也接受按行批量的矩阵 (batch, m)；mask 形状与 scores 相同。
mask 为 False 的位置不参与投影，输出权重恰好为 0，梯度也恰好为 0。
"""

import numpy as np


class EmptyMaskError(ValueError):
    """某一行的掩码全部为 False，没有可归一化的分数。"""


def _as_rows(scores, mask):
    scores = np.asarray(scores, dtype=np.float64)
    if mask is None:
        mask = np.ones(scores.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != mask.shape:
        raise ValueError(f"scores 形状 {scores.shape} 与 mask 形状 {mask.shape} 不一致")
    squeeze = scores.ndim == 1
    scores2 = np.atleast_2d(scores)
    mask2 = np.atleast_2d(mask)
    if not mask2.any(axis=-1).all():
        raise EmptyMaskError("存在掩码全部为 False 的行")
    # 被屏蔽的位置先置零，避免 inf/nan 参与后续运算
    return np.where(mask2, scores2, 0.0), mask2, squeeze


def _restore(array, squeeze):
    return array[0] if squeeze else array


def sparsemax(scores, mask=None):
    """
    sparsemax：把未屏蔽的分数欧氏投影到概率单纯形上（排序加阈值算法）。

    z(1) ≥ … ≥ z(K) 为降序排列的未屏蔽分数，
    k = max{j : 1 + j·z(j) > Σ_{r≤j} z(r)}，τ = (Σ_{r≤k} z(r) − 1)/k，p_i = max(z_i − τ, 0)。
    """
    z, mask, squeeze = _as_rows(scores, mask)
    m = z.shape[-1]
    # 屏蔽位置用 -inf 排在最后；稳定排序保证支撑集确定
    filled = np.where(mask, z, -np.inf)
    order = np.argsort(-filled, axis=-1, kind="stable")
    z_sorted = np.take_along_axis(filled, order, axis=-1)
    valid = np.isfinite(z_sorted)
    z_sorted = np.where(valid, z_sorted, 0.0)

    # 前缀和按顺序累加，尾部补零不会改变前面的任何一位
    cumulative = np.cumsum(z_sorted, axis=-1)
    ranks = np.arange(1, m + 1, dtype=np.float64)
    in_support = (1.0 + ranks * z_sorted > cumulative) & valid
    k = np.count_nonzero(in_support, axis=-1)
    tau = (np.take_along_axis(cumulative, (k - 1)[:, None], axis=-1)[:, 0] - 1.0) / k

    weights = np.where(mask, np.maximum(z - tau[:, None], 0.0), 0.0)
    return _restore(weights, squeeze)


def sparsemax_backward(scores, mask, out_grad, weights=None):
    """
    sparsemax 的向量-雅可比积：g_i = s_i·(out_grad_i − Σ_{j∈S} out_grad_j / |S|)。

    支撑集 S 取前向结果中严格为正的位置；恰好落在边界上的点使用该支撑集对应的闭式雅可比。
    """
    if weights is None:
        weights = sparsemax(scores, mask)
    _, mask2, squeeze = _as_rows(scores, mask)
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    grad = np.atleast_2d(np.asarray(out_grad, dtype=np.float64))
    support = (weights > 0.0) & mask2
    size = np.count_nonzero(support, axis=-1)
    mean = np.where(support, grad, 0.0).sum(axis=-1) / size
    result = np.where(support, grad - mean[:, None], 0.0)
    return _restore(result, squeeze)


def softmax(scores, mask=None):
    """带掩码、减去最大值的数值稳定 softmax。"""
    z, mask, squeeze = _as_rows(scores, mask)
    shift = np.where(mask, z, -np.inf).max(axis=-1, keepdims=True)
    exps = np.where(mask, np.exp(np.where(mask, z - shift, 0.0)), 0.0)
    # 用前缀和的最后一项求和：顺序累加，使补零的屏蔽位置不改变结果的任何一位
    total = np.cumsum(exps, axis=-1)[:, -1:]
    return _restore(exps / total, squeeze)


def softmax_backward(scores, mask, out_grad, weights=None):
    """softmax 的向量-雅可比积：g_i = p_i·(out_grad_i − Σ_j p_j·out_grad_j)。"""
    if weights is None:
        weights = softmax(scores, mask)
    _, mask2, squeeze = _as_rows(scores, mask)
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    grad = np.atleast_2d(np.asarray(out_grad, dtype=np.float64))
    grad = np.where(mask2, grad, 0.0)
    inner = (weights * grad).sum(axis=-1, keepdims=True)
    result = np.where(mask2, weights * (grad - inner), 0.0)
    return _restore(result, squeeze)


KERNELS = {
    "sparsemax": (sparsemax, sparsemax_backward),
    "softmax": (softmax, softmax_backward),
}


def project_simplex_pgd(z, tol=1e-10, max_iter=100000):
    """
    用投影梯度法求 argmin ||p − z||² s.t. p 在单纯形上，作为 sparsemax 的参照解。

    每一步对 p − step·(p − z) 做一次基于二分的单纯形投影（与排序阈值算法无关），
    直到相邻两步的 ∞-范数差小于 tol。
    """
    z = np.asarray(z, dtype=np.float64)
    p = np.full(z.shape, 1.0 / z.size)
    step = 0.5
    for _ in range(max_iter):
        target = p - step * (p - z)
        updated = _bisect_simplex(target, tol * 1e-2)
        if np.max(np.abs(updated - p)) < tol:
            return updated
        p = updated
    return p


def _bisect_simplex(v, tol):
    # 二分求阈值 τ 使 Σ max(v − τ, 0) = 1
    low, high = v.min() - 1.0, v.max()
    while high - low > tol:
        tau = 0.5 * (low + high)
        if np.maximum(v - tau, 0.0).sum() > 1.0:
            low = tau
        else:
            high = tau
    return np.maximum(v - 0.5 * (low + high), 0.0)
