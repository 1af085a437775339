"""
稀疏注意力多示例神经网络的前向计算图与精确的反向传播。

结构：n_blocks 个残差块（示例内全连接、ReLU、反向缩放 dropout、可选的跳跃连接）
→ 注意力打分头 wᵀtanh(V·z) → sparsemax / softmax → 注意力池化 → 批归一化 → 单个 logit。

示例内全连接层在所有示例之间共享权重，只对掩码为 True 的行做计算：先把有效行按顺序
取出成 (n_valid, p) 的矩阵再做矩阵乘法，因此尾部再多补多少行零都不会改变任何一位结果。
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

import kernels  # 按模块属性调用核函数（测试中会被替换）
from logger import LOG  # 导入日志模块
from seeding import make_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
MODES = ("train", "eval")

# (use_skip, use_sparse) -> 消融实验中的模型名称
VARIANTS = {
    (False, False): "FC",
    (True, False): "Skip",
    (False, True): "Sparse",
    (True, True): "Proposed",
}


class StaleTraceError(ValueError):
    """前向轨迹与当前模型参数不匹配（模型已更新或不是同一个模型）。"""


@dataclass(frozen=True)
class ModelConfig:
    p: int
    m_star: int = 30
    n_blocks: int = 2
    attn_hidden: int = 64
    dropout_rate: float = 0.3
    use_skip: bool = True
    use_sparse: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"p 必须为正整数，实际为 {self.p}")
        if self.m_star < 1:
            raise ValueError(f"m_star 必须 ≥ 1，实际为 {self.m_star}")
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks 必须 ≥ 1，实际为 {self.n_blocks}")
        if self.attn_hidden < 1:
            raise ValueError(f"attn_hidden 必须 ≥ 1，实际为 {self.attn_hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate 必须位于 [0,1)，实际为 {self.dropout_rate}")
        if self.seed < 0:
            raise ValueError(f"seed 必须为非负整数，实际为 {self.seed}")

    @property
    def variant(self):
        return VARIANTS[(bool(self.use_skip), bool(self.use_sparse))]

    def to_dict(self):
        return asdict(self)


def parameter_shapes(cfg):
    """按固定顺序列出所有可学习参数的名称和形状。"""
    shapes = {}
    for layer in range(cfg.n_blocks):
        shapes[f"W{layer}"] = (cfg.p, cfg.p)
        shapes[f"b{layer}"] = (cfg.p,)
    shapes["V"] = (cfg.attn_hidden, cfg.p)
    shapes["w"] = (cfg.attn_hidden,)
    shapes["gamma"] = (cfg.p,)
    shapes["beta"] = (cfg.p,)
    shapes["c"] = (cfg.p,)
    shapes["c0"] = ()
    return shapes


@dataclass
class Model:
    config: ModelConfig
    params: dict
    running_mean: np.ndarray
    running_var: np.ndarray
    step: int = 0

    @property
    def parameter_names(self):
        return list(parameter_shapes(self.config))

    @property
    def variant(self):
        return self.config.variant

    def mark_updated(self):
        # 参数被原地修改后调用，使旧的前向轨迹失效
        self.step += 1

    def copy(self):
        return Model(
            config=self.config,
            params={name: value.copy() for name, value in self.params.items()},
            running_mean=self.running_mean.copy(),
            running_var=self.running_var.copy(),
            step=self.step,
        )


def init_model(cfg):
    """
    初始化模型参数：权重取 U(−√(6/fan_in), √(6/fan_in))（与 ReLU 匹配的按扇入缩放），
    偏置为 0，γ=1，β=0，滑动均值 0、滑动方差 1。给定种子时结果完全确定。
    """
    rng = make_rng(cfg.seed)

    def uniform(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = {}
    for layer in range(cfg.n_blocks):
        params[f"W{layer}"] = uniform((cfg.p, cfg.p), cfg.p)
        params[f"b{layer}"] = np.zeros(cfg.p)
    params["V"] = uniform((cfg.attn_hidden, cfg.p), cfg.p)
    params["w"] = uniform((cfg.attn_hidden,), cfg.attn_hidden)
    params["gamma"] = np.ones(cfg.p)
    params["beta"] = np.zeros(cfg.p)
    params["c"] = uniform((cfg.p,), cfg.p)
    params["c0"] = np.zeros(())
    LOG.debug(f"初始化 {cfg.variant} 模型：p={cfg.p}，n_blocks={cfg.n_blocks}，attn_hidden={cfg.attn_hidden}")
    return Model(config=cfg, params=params, running_mean=np.zeros(cfg.p), running_var=np.ones(cfg.p))


# ---------------------------------------------------------------------------
# 各个层
# ---------------------------------------------------------------------------

def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"未知的模式: {mode}，可选值为 {MODES}")


def locally_fc(X, mask, W, b):
    """示例内全连接：对掩码为 True 的行计算 X·Wᵀ + b，其余行为 0。"""
    if X.ndim != 3 or X.shape[:2] != mask.shape:
        raise ValueError(f"输入形状 {X.shape} 与掩码形状 {mask.shape} 不匹配")
    if W.shape != (X.shape[2], X.shape[2]) or b.shape != (X.shape[2],):
        raise ValueError(f"权重形状 {W.shape} / 偏置形状 {b.shape} 与特征维度 {X.shape[2]} 不匹配")
    out = np.zeros_like(X, dtype=np.float64)
    out[mask] = X[mask] @ W.T + b
    return out


def dropout_scale(shape, rate, mode, rng):
    """反向缩放 dropout 的乘子：保留的元素乘 1/(1−rate)。评估模式或 rate=0 时返回 None（恒等）。"""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout 比例必须位于 [0,1)，实际为 {rate}")
    if mode == "eval" or rate == 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(X, rate, mode, rng):
    scale = dropout_scale(X.shape, rate, mode, rng)
    return X if scale is None else X * scale


@dataclass
class BlockCache:
    inputs: np.ndarray  # 有效行的输入 (n_valid, p)
    pre: np.ndarray  # 有效行的 ReLU 前激活 (n_valid, p)
    scale: object  # dropout 乘子 (n_valid, p) 或 None


def residual_block(X, mask, W, b, use_skip, dropout_rate, mode, rng):
    """
    残差块：inner = dropout(relu(locally_fc(X)))，use_skip 时输出 inner + X，否则输出 inner。

    :return: (输出 (batch, m, p), BlockCache)
    """
    inputs = X[mask]
    pre = locally_fc(X, mask, W, b)[mask]
    activation = np.maximum(pre, 0.0)
    scale = dropout_scale(activation.shape, dropout_rate, mode, rng)
    inner = activation if scale is None else activation * scale
    out = np.zeros_like(X, dtype=np.float64)
    out[mask] = inner + inputs if use_skip else inner
    return out, BlockCache(inputs=inputs, pre=pre, scale=scale)


def _attention_scores(Z, mask, V, w):
    hidden = np.tanh(Z[mask] @ V.T)
    scores = np.zeros(mask.shape)
    scores[mask] = hidden @ w
    return scores, hidden


def attention_scores(Z, mask, V, w):
    """注意力打分：e[b,j] = wᵀ·tanh(V·Z[b,j,:])；屏蔽位置为 0，由核函数的掩码忽略。"""
    return _attention_scores(Z, mask, V, w)[0]


def attention_pool(Z, alpha, mask):
    """注意力池化：pooled[b,:] = Σ_j α[b,j]·Z[b,j,:]。"""
    alpha = np.where(mask, alpha, 0.0)
    pooled = np.zeros((Z.shape[0], Z.shape[2]))
    # 沿示例方向顺序累加，补零的尾部行只会加上精确的 0
    for j in range(Z.shape[1]):
        pooled += alpha[:, j, None] * Z[:, j, :]
    return pooled


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    mode: str


def batch_norm(F, gamma, beta, running_mean, running_var, mode, update_stats=True,
               eps=BN_EPS, momentum=BN_MOMENTUM):
    """
    批归一化。训练模式用批内均值/有偏方差归一化，并（可选）以 momentum 原地更新滑动统计量
    （滑动方差使用无偏估计）；评估模式直接使用滑动统计量。

    :return: (输出, BatchNormCache)
    """
    _check_mode(mode)
    if mode == "train":
        n = F.shape[0]
        if n < 2:
            raise ValueError("训练模式的批归一化要求批大小至少为 2")
        mean = F.mean(axis=0)
        var = F.var(axis=0)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (F - mean) * inv_std
    return gamma * xhat + beta, BatchNormCache(xhat=xhat, inv_std=inv_std, mode=mode)


# ---------------------------------------------------------------------------
# 完整前向与反向
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    logits: np.ndarray  # (batch,)
    probabilities: np.ndarray  # (batch,)
    attention: np.ndarray  # (batch, m)
    scores: np.ndarray  # (batch, m)
    pooled: np.ndarray  # 池化后、批归一化前 (batch, p)
    features: np.ndarray  # 批归一化后、分类层输入 (batch, p)
    mask: np.ndarray
    instance_features: np.ndarray  # 最后一个残差块的输出 Z (batch, m, p)
    hidden: np.ndarray  # 打分头 tanh 输出，有效行 (n_valid, attn_hidden)
    blocks: list = field(default_factory=list)
    norm: BatchNormCache = None
    kernel: str = "sparsemax"
    mode: str = "eval"
    model_id: int = 0
    model_step: int = 0


def forward(model, batch, mode="eval", rng=None, update_stats=True):
    """
    完整前向：残差块 → 注意力打分 → sparsemax/softmax → 池化 → 批归一化 → logit。

    :param model: Model。
    :param batch: BagBatch（m 可以不同于 model.config.m_star）。
    :param mode: "train" 或 "eval"。
    :param rng: 训练模式下 dropout 使用的随机数生成器。
    :param update_stats: 训练模式下是否更新批归一化的滑动统计量。
    """
    _check_mode(mode)
    cfg = model.config
    if batch.p != cfg.p:
        raise ValueError(f"数据特征维度 {batch.p} 与模型的 p={cfg.p} 不一致")
    mask = np.asarray(batch.mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise kernels.EmptyMaskError("存在不包含任何有效示例的 bag")
    if mode == "train" and rng is None:
        rng = make_rng(cfg.seed)

    hidden_state = np.where(mask[:, :, None], batch.data, 0.0)
    blocks = []
    for layer in range(cfg.n_blocks):
        hidden_state, cache = residual_block(
            hidden_state, mask, model.params[f"W{layer}"], model.params[f"b{layer}"],
            use_skip=cfg.use_skip, dropout_rate=cfg.dropout_rate, mode=mode, rng=rng,
        )
        blocks.append(cache)

    scores, hidden = _attention_scores(hidden_state, mask, model.params["V"], model.params["w"])
    if cfg.use_sparse:
        kernel_name, attention = "sparsemax", kernels.sparsemax(scores, mask)
    else:
        kernel_name, attention = "softmax", kernels.softmax(scores, mask)
    pooled = attention_pool(hidden_state, attention, mask)
    features, norm = batch_norm(
        pooled, model.params["gamma"], model.params["beta"], model.running_mean, model.running_var,
        mode=mode, update_stats=update_stats,
    )
    logits = features @ model.params["c"] + model.params["c0"]
    probabilities = expit(logits)

    return ForwardTrace(
        logits=logits, probabilities=probabilities, attention=attention, scores=scores,
        pooled=pooled, features=features, mask=mask, instance_features=hidden_state, hidden=hidden,
        blocks=blocks, norm=norm, kernel=kernel_name, mode=mode,
        model_id=id(model), model_step=model.step,
    )


def backward(model, batch, trace, loss_grad):
    """
    反向传播：给定损失对 logit 的梯度，返回损失对每个参数的精确梯度（名称与 model.params 一致）。
    """
    if trace.model_id != id(model) or trace.model_step != model.step:
        raise StaleTraceError("前向轨迹已过期：模型参数在前向之后被更新过，或不是同一个模型")
    if trace.mask.shape != np.shape(batch.mask):
        raise StaleTraceError("前向轨迹与当前批次的形状不一致")
    cfg = model.config
    params = model.params
    mask = trace.mask
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise ValueError(f"loss_grad 形状 {g.shape} 与 logits 形状 {trace.logits.shape} 不一致")
    grads = {}

    # 分类层
    grads["c"] = trace.features.T @ g
    grads["c0"] = np.asarray(g.sum())
    d_features = g[:, None] * params["c"][None, :]

    # 批归一化
    xhat, inv_std = trace.norm.xhat, trace.norm.inv_std
    grads["gamma"] = (d_features * xhat).sum(axis=0)
    grads["beta"] = d_features.sum(axis=0)
    d_xhat = d_features * params["gamma"]
    if trace.norm.mode == "train":
        n = d_xhat.shape[0]
        d_pooled = inv_std / n * (n * d_xhat - d_xhat.sum(axis=0) - xhat * (d_xhat * xhat).sum(axis=0))
    else:
        d_pooled = d_xhat * inv_std

    # 注意力池化与归一化核
    Z = trace.instance_features
    d_attention = np.einsum("bp,bmp->bm", d_pooled, Z)
    d_Z = trace.attention[:, :, None] * d_pooled[:, None, :]
    if trace.kernel == "sparsemax":
        d_scores = kernels.sparsemax_backward(trace.scores, mask, d_attention, trace.attention)
    else:
        d_scores = kernels.softmax_backward(trace.scores, mask, d_attention, trace.attention)

    # 打分头，只在有效行上计算
    d_scores_valid = d_scores[mask]
    grads["w"] = trace.hidden.T @ d_scores_valid
    d_pre_tanh = d_scores_valid[:, None] * params["w"][None, :] * (1.0 - trace.hidden ** 2)
    grads["V"] = d_pre_tanh.T @ Z[mask]
    d_hidden = d_Z[mask] + d_pre_tanh @ params["V"]

    # 残差块（逆序）
    for layer in reversed(range(cfg.n_blocks)):
        cache = trace.blocks[layer]
        d_activation = d_hidden if cache.scale is None else d_hidden * cache.scale
        d_pre = d_activation * (cache.pre > 0.0)
        grads[f"W{layer}"] = d_pre.T @ cache.inputs
        grads[f"b{layer}"] = d_pre.sum(axis=0)
        d_inputs = d_pre @ params[f"W{layer}"]
        d_hidden = d_inputs + d_hidden if cfg.use_skip else d_inputs

    return {name: grads[name] for name in model.parameter_names}
