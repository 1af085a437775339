"""
二元交叉熵损失、Adam 优化器、带最佳模型选择的训练循环以及批量预测。
"""

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

import evaluation  # 以模块方式导入，避免与 evaluation 的循环导入
from bagdata import pad_and_mask
from logger import LOG  # 导入日志模块
from network import forward, backward
from seeding import make_rng

SELECTION_METRICS = ("val_auc", "train_loss")
PREDICT_CHUNK = 256  # 预测时每次前向的 bag 数


class NonFiniteGradientError(ValueError):
    """梯度中出现 NaN 或 inf。"""

    def __init__(self, parameter):
        self.parameter = parameter
        super().__init__(f"参数 {parameter} 的梯度包含非有限值")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    selection_metric: str = "val_auc"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs 必须 ≥ 1，实际为 {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size 必须 ≥ 2（训练模式的批归一化需要），实际为 {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate 不能为负数，实际为 {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"beta1/beta2 必须位于 [0,1)，实际为 {self.beta1}/{self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps 必须为正数，实际为 {self.eps}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"未知的模型选择指标: {self.selection_metric}，可选值为 {SELECTION_METRICS}")
        if self.seed < 0:
            raise ValueError(f"seed 必须为非负整数，实际为 {self.seed}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    metric_name: str
    train_loss: list = field(default_factory=list)
    metric: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_metric(self):
        return self.metric[self.best_epoch]

    def to_frame(self):
        return pd.DataFrame({
            "epoch": np.arange(1, len(self.train_loss) + 1),
            "train_loss": self.train_loss,
            "metric": self.metric,
        })


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class Prediction:
    bag_ids: tuple
    labels: np.ndarray
    probabilities: np.ndarray
    logits: np.ndarray
    attention: np.ndarray  # (n, m*)
    mask: np.ndarray  # (n, m*)
    pooled: np.ndarray  # (n, p)，批归一化之前
    features: np.ndarray  # (n, p)，分类层的输入


def bce_loss(logits, labels):
    """
    数值稳定的二元交叉熵：loss_i = max(ℓ,0) − ℓ·y + log(1 + e^{−|ℓ|})。

    :return: (批平均损失, 对 logits 的梯度 (σ(ℓ) − y)/batch)
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise ValueError(f"logits 形状 {logits.shape} 与 labels 形状 {labels.shape} 不一致")
    n = logits.shape[0]
    losses = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    grad = (expit(logits) - labels) / n
    return float(losses.mean()), grad


def optimizer_step(params, grads, state, cfg):
    """
    带偏差修正的 Adam 更新，原地修改 params 和 state：
    m ← β₁m + (1−β₁)g，v ← β₂v + (1−β₂)g²，θ ← θ − lr·m̂/(√v̂ + ε)。
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            LOG.error(f"参数 {name} 的梯度包含非有限值")
            raise NonFiniteGradientError(name)
        if params[name].shape != np.shape(grad):
            raise ValueError(f"参数 {name} 的形状 {params[name].shape} 与梯度形状 {np.shape(grad)} 不一致")

    state.step += 1
    correction1 = 1.0 - cfg.beta1 ** state.step
    correction2 = 1.0 - cfg.beta2 ** state.step
    for name, grad in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad ** 2
        state.m[name], state.v[name] = m, v
        params[name] -= cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
    return params, state


def _minibatches(order, batch_size):
    # 末尾只剩 1 个 bag 时并入上一批，避免训练模式下出现大小为 1 的批
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def train(model, train_ds, val_ds, cfg):
    """
    训练模型，按 selection_metric 在每个 epoch 结束后评估，并返回最佳 epoch 的参数快照。

    :param model: 初始模型（会被原地训练）。
    :param train_ds: 训练集 Dataset。
    :param val_ds: 验证集 Dataset（selection_metric 为 val_auc 时必需）。
    :param cfg: TrainConfig。
    :return: (最佳模型, TrainHistory)
    """
    if train_ds is None or train_ds.n == 0:
        raise ValueError("训练集为空")
    if train_ds.n < 2:
        raise ValueError("训练集至少需要 2 个 bag（训练模式的批归一化需要）")
    if cfg.selection_metric == "val_auc":
        if val_ds is None or val_ds.n == 0:
            raise ValueError("selection_metric=val_auc 时必须提供验证集")
        if len(set(val_ds.labels.tolist())) < 2:
            raise ValueError("验证集必须同时包含阳性和阴性 bag 才能计算 AUC")

    m_star = model.config.m_star
    train_batch = pad_and_mask(train_ds, m_star)
    rng = make_rng(cfg.seed)
    state = AdamState()
    history = TrainHistory(metric_name=cfg.selection_metric)
    best_model = model.copy()
    best_value = None

    for epoch in range(cfg.epochs):
        order = rng.permutation(train_batch.size)
        total_loss = 0.0
        for indices in _minibatches(order, cfg.batch_size):
            batch = train_batch.take(indices)
            trace = forward(model, batch, mode="train", rng=rng)
            loss, loss_grad = bce_loss(trace.logits, batch.labels)
            grads = backward(model, batch, trace, loss_grad)
            optimizer_step(model.params, grads, state, cfg)
            model.mark_updated()
            total_loss += loss * len(indices)
        epoch_loss = total_loss / train_batch.size
        history.train_loss.append(epoch_loss)

        if cfg.selection_metric == "val_auc":
            prediction = predict(model, val_ds)
            value = evaluation.auc(prediction.probabilities, prediction.labels)
            improved = best_value is None or value > best_value
        else:
            value = epoch_loss
            improved = best_value is None or value < best_value
        history.metric.append(value)
        LOG.debug(f"epoch {epoch + 1}/{cfg.epochs}: train_loss={epoch_loss:.6f} {cfg.selection_metric}={value:.6f}")

        # 严格更优才替换，平局保留更早的 epoch
        if improved:
            best_value = value
            history.best_epoch = epoch
            best_model = model.copy()

    LOG.info(
        f"{model.variant} 训练结束：最佳 epoch {history.best_epoch + 1}，"
        f"{cfg.selection_metric}={history.best_metric:.6f}"
    )
    return best_model, history


def predict(model, ds):
    """评估模式下对所有 bag 做前向，返回概率、注意力权重和提取的特征。"""
    if ds.p != model.config.p:
        LOG.error(f"数据特征维度 {ds.p} 与模型的 p={model.config.p} 不一致")
        raise ValueError(f"数据特征维度 {ds.p} 与模型的 p={model.config.p} 不一致")
    batch = pad_and_mask(ds, model.config.m_star)
    parts = []
    for start in range(0, batch.size, PREDICT_CHUNK):
        chunk = batch.take(np.arange(start, min(start + PREDICT_CHUNK, batch.size)))
        parts.append(forward(model, chunk, mode="eval"))
    return Prediction(
        bag_ids=tuple(batch.bag_ids),
        labels=np.asarray(batch.labels),
        probabilities=np.concatenate([t.probabilities for t in parts]),
        logits=np.concatenate([t.logits for t in parts]),
        attention=np.concatenate([t.attention for t in parts]),
        mask=np.concatenate([t.mask for t in parts]),
        pooled=np.concatenate([t.pooled for t in parts]),
        features=np.concatenate([t.features for t in parts]),
    )
