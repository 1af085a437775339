# src/bagdata.py

"""
多示例（bag）数据的表示、文件读写、补零掩码、场景抽样、分层交叉验证划分以及合成数据生成。

Bag 文件格式（CSV, UTF-8）：
    表头 ``bag_id,label,f0,...,f{p-1}``，每个示例一行，同一个 bag 的行必须连续，
    bag 内 label 保持不变。文件开头允许以 ``#`` 开头的注释行。写出时浮点数保留 9 位有效数字。
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from logger import LOG  # 导入日志模块
from seeding import make_rng

FLOAT_FORMAT = "{:.9g}"  # 写出 bag 文件时的浮点格式
SCENARIOS = ("balanced", "imbalanced")
SIZE_BINS = ((1, 1), (2, 2), (3, 3), (4, 4), (5, 9), (10, 29), (30, None))


class BagFileError(ValueError):
    """bag 文件解析错误，携带出错的行号（从 1 开始，0 表示整个文件）。"""

    def __init__(self, message, line_number=0):
        self.line_number = line_number
        prefix = f"第 {line_number} 行: " if line_number else ""
        super().__init__(prefix + message)


class InsufficientBagsError(ValueError):
    """某一类别的 bag 数量不足以完成抽样或划分。"""


def _readonly(array):
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Bag:
    bag_id: str
    label: int
    instances: np.ndarray  # (m_i, p)

    def __post_init__(self):
        instances = _readonly(self.instances)
        if instances.ndim != 2:
            raise ValueError(f"bag {self.bag_id} 的示例矩阵必须是二维的，实际维度为 {instances.ndim}")
        if instances.shape[0] < 1:
            raise ValueError(f"bag {self.bag_id} 不包含任何示例")
        if self.label not in (0, 1):
            raise ValueError(f"bag {self.bag_id} 的标签必须是 0 或 1，实际为 {self.label}")
        object.__setattr__(self, "instances", instances)
        object.__setattr__(self, "label", int(self.label))

    @property
    def size(self):
        return self.instances.shape[0]

    @property
    def p(self):
        return self.instances.shape[1]


@dataclass(frozen=True)
class Dataset:
    bags: tuple
    p: int

    def __post_init__(self):
        bags = tuple(self.bags)
        if self.p < 1:
            raise ValueError(f"特征维度 p 必须为正整数，实际为 {self.p}")
        seen = set()
        for bag in bags:
            if bag.p != self.p:
                raise ValueError(f"bag {bag.bag_id} 的特征维度为 {bag.p}，与数据集的 p={self.p} 不一致")
            if bag.bag_id in seen:
                raise ValueError(f"bag_id 重复: {bag.bag_id}")
            seen.add(bag.bag_id)
        object.__setattr__(self, "bags", bags)

    def __len__(self):
        return len(self.bags)

    @property
    def n(self):
        return len(self.bags)

    @property
    def labels(self):
        return np.array([bag.label for bag in self.bags], dtype=np.int64)

    @property
    def sizes(self):
        return np.array([bag.size for bag in self.bags], dtype=np.int64)

    @property
    def bag_ids(self):
        return [bag.bag_id for bag in self.bags]

    def subset(self, indices):
        return Dataset(bags=tuple(self.bags[int(i)] for i in indices), p=self.p)


@dataclass(frozen=True)
class BagBatch:
    data: np.ndarray  # (batch, m*, p)
    mask: np.ndarray  # (batch, m*)
    labels: np.ndarray  # (batch,)
    bag_ids: tuple = field(default=())

    @property
    def size(self):
        return self.data.shape[0]

    @property
    def m_star(self):
        return self.data.shape[1]

    @property
    def p(self):
        return self.data.shape[2]

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        ids = tuple(self.bag_ids[i] for i in indices) if self.bag_ids else ()
        return BagBatch(data=self.data[indices], mask=self.mask[indices], labels=self.labels[indices], bag_ids=ids)


@dataclass(frozen=True)
class SynthConfig:
    n_bags: int = 400
    positive_fraction: float = 0.5
    p: int = 30
    bag_size_mean: float = 4.0
    bag_size_max: int = 100
    witness_rate: float = 0.5
    signal_shift: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_bags < 1:
            raise ValueError(f"n_bags 必须为正整数，实际为 {self.n_bags}")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError(f"positive_fraction 必须位于 (0,1)，实际为 {self.positive_fraction}")
        if self.p < 1:
            raise ValueError(f"p 必须为正整数，实际为 {self.p}")
        if self.bag_size_mean < 1.0:
            raise ValueError(f"bag_size_mean 不能小于 1，实际为 {self.bag_size_mean}")
        if self.bag_size_max < 1:
            raise ValueError(f"bag_size_max 必须 ≥ 1，实际为 {self.bag_size_max}")
        if not 0.0 < self.witness_rate <= 1.0:
            raise ValueError(f"witness_rate 必须位于 (0,1]，实际为 {self.witness_rate}")
        if self.seed < 0:
            raise ValueError(f"seed 必须为非负整数，实际为 {self.seed}")


def _round_half_up(numerator, denominator):
    # 整数运算实现 numerator/denominator 的四舍五入（0.5 向上）
    return (2 * numerator + denominator) // (2 * denominator)


# ---------------------------------------------------------------------------
# 文件读写
# ---------------------------------------------------------------------------

def _parse_header(header, line_number):
    if len(header) < 3 or header[0] != "bag_id" or header[1] != "label":
        raise BagFileError("表头必须以 bag_id,label 开头并至少包含一个特征列", line_number)
    p = len(header) - 2
    expected = [f"f{j}" for j in range(p)]
    if header[2:] != expected:
        raise BagFileError(f"特征列名必须依次为 f0..f{p - 1}", line_number)
    return p


def parse_bag_file(source):
    """
    从字节流解析 bag 文件。

    :param source: UTF-8 编码的字节流（例如 open(path, 'rb') 或 io.BytesIO）。
    :return: Dataset，bag 顺序与示例顺序都与文件一致。
    """
    text = io.TextIOWrapper(source, encoding="utf-8-sig", newline="")
    try:
        rows = list(enumerate(csv.reader(text), start=1))
    except UnicodeDecodeError as e:
        raise BagFileError(f"文件不是合法的 UTF-8 文本: {e}") from e
    finally:
        text.detach()

    # 跳过开头的注释行和空行
    position = 0
    while position < len(rows) and (not rows[position][1] or rows[position][1][0].startswith("#")):
        position += 1
    if position == len(rows):
        raise BagFileError("文件为空，缺少表头")

    header_line, header = rows[position]
    p = _parse_header(header, header_line)

    bags = []
    finished_ids = set()
    current_id, current_label, current_rows = None, None, []

    def close_current():
        if current_id is not None:
            bags.append(Bag(bag_id=current_id, label=current_label, instances=np.array(current_rows)))
            finished_ids.add(current_id)

    for line_number, row in rows[position + 1:]:
        if not row:
            continue
        if len(row) != p + 2:
            raise BagFileError(f"期望 {p + 2} 个字段（p={p}），实际为 {len(row)} 个", line_number)
        bag_id, label_text = row[0], row[1]
        if not bag_id:
            raise BagFileError("bag_id 不能为空", line_number)
        try:
            label = int(label_text)
        except ValueError:
            raise BagFileError(f"无法解析标签: {label_text!r}", line_number) from None
        if label not in (0, 1):
            raise BagFileError(f"标签必须是 0 或 1，实际为 {label}", line_number)
        try:
            values = [float(v) for v in row[2:]]
        except ValueError as e:
            raise BagFileError(f"无法解析特征值: {e}", line_number) from None
        if not np.all(np.isfinite(values)):
            raise BagFileError("特征值必须是有限实数", line_number)

        if bag_id != current_id:
            if bag_id in finished_ids:
                raise BagFileError(f"bag {bag_id} 的行不连续（该 bag 已在前面结束）", line_number)
            close_current()
            current_id, current_label, current_rows = bag_id, label, []
        elif label != current_label:
            raise BagFileError(f"bag {bag_id} 内的标签不一致: {current_label} 与 {label}", line_number)
        current_rows.append(values)
    close_current()

    if not bags:
        raise BagFileError("文件中没有任何 bag", header_line)
    LOG.debug(f"解析 bag 文件完成：{len(bags)} 个 bag，p={p}")
    return Dataset(bags=tuple(bags), p=p)


def write_bag_file(ds, sink, comments=()):
    """
    将数据集按 bag 文件格式写入字节流。

    :param ds: 要写出的 Dataset。
    :param sink: 可写的字节流。
    :param comments: 写在表头之前的注释行（不含 '#'）。
    """
    text = io.TextIOWrapper(sink, encoding="utf-8", newline="")
    try:
        for comment in comments:
            text.write(f"# {comment}\n")
        writer = csv.writer(text, lineterminator="\n")
        writer.writerow(["bag_id", "label"] + [f"f{j}" for j in range(ds.p)])
        for bag in ds.bags:
            for instance in bag.instances:
                writer.writerow([bag.bag_id, bag.label] + [FLOAT_FORMAT.format(x) for x in instance])
        text.flush()
    finally:
        text.detach()


def load_bag_file(path):
    LOG.debug(f"读取 bag 文件: {path}")
    with open(path, "rb") as f:
        return parse_bag_file(f)


def save_bag_file(ds, path, comments=()):
    with open(path, "wb") as f:
        write_bag_file(ds, f, comments=comments)
    LOG.info(f"bag 文件已保存到 {path}")
    return path


# ---------------------------------------------------------------------------
# 补零与掩码
# ---------------------------------------------------------------------------

def pad_and_mask(ds, m_star):
    """
    将每个 bag 补零或截断到 m_star 个示例，并生成前缀掩码。

    超过 m_star 的 bag 只保留文件顺序中的前 m_star 个示例。
    """
    if m_star < 1:
        raise ValueError(f"m_star 必须 ≥ 1，实际为 {m_star}")
    n = ds.n
    data = np.zeros((n, m_star, ds.p), dtype=np.float64)
    mask = np.zeros((n, m_star), dtype=bool)
    for b, bag in enumerate(ds.bags):
        kept = min(bag.size, m_star)
        data[b, :kept] = bag.instances[:kept]
        mask[b, :kept] = True
    data.setflags(write=False)
    mask.setflags(write=False)
    labels = ds.labels
    labels.setflags(write=False)
    return BagBatch(data=data, mask=mask, labels=labels, bag_ids=tuple(ds.bag_ids))


def auto_m_star(ds):
    # 直接取数据中最大的 bag 大小
    return int(ds.sizes.max())


# ---------------------------------------------------------------------------
# 场景抽样与交叉验证划分
# ---------------------------------------------------------------------------

def scenario_counts(scenario, target_n):
    """返回 (阳性数, 阴性数)。平衡场景取一半（向下取整），不平衡场景取 10% 并四舍五入。"""
    if target_n < 1:
        raise ValueError(f"target_n 必须为正整数，实际为 {target_n}")
    if scenario == "balanced":
        n_pos = target_n // 2
    elif scenario == "imbalanced":
        n_pos = _round_half_up(target_n, 10)
    else:
        raise ValueError(f"未知的场景: {scenario}，可选值为 {SCENARIOS}")
    return n_pos, target_n - n_pos


def subsample_scenario(ds, scenario, target_n, seed):
    """
    按平衡/不平衡场景无放回抽样，结果中 bag 保持原数据集中的相对顺序。
    """
    n_pos, n_neg = scenario_counts(scenario, target_n)
    labels = ds.labels
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    shortfalls = []
    if len(positives) < n_pos:
        shortfalls.append(f"阳性 bag 需要 {n_pos} 个，仅有 {len(positives)} 个")
    if len(negatives) < n_neg:
        shortfalls.append(f"阴性 bag 需要 {n_neg} 个，仅有 {len(negatives)} 个")
    if shortfalls:
        message = f"{scenario} 场景抽样失败：" + "；".join(shortfalls)
        LOG.error(message)
        raise InsufficientBagsError(message)

    rng = make_rng(seed)
    chosen = np.concatenate([
        rng.choice(positives, size=n_pos, replace=False),
        rng.choice(negatives, size=n_neg, replace=False),
    ])
    LOG.info(f"{scenario} 场景抽样：{n_pos} 个阳性，{n_neg} 个阴性")
    return ds.subset(np.sort(chosen))


def stratified_kfold(ds, k, seed):
    """
    分层 k 折划分。每个类别内部先打乱，再轮流分配到各折；阴性类从阳性类结束的位置继续轮转，
    使各折总大小也尽量均衡。

    :return: [(train_indices, test_indices), ...]，索引均已排序。
    """
    labels = ds.labels if isinstance(ds, Dataset) else np.asarray(ds)
    if k < 2:
        raise ValueError(f"k 必须 ≥ 2，实际为 {k}")
    rng = make_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in (1, 0):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            message = f"类别 {cls} 只有 {len(members)} 个 bag，少于折数 k={k}"
            LOG.error(message)
            raise InsufficientBagsError(message)
        members = rng.permutation(members)
        fold_of[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    all_indices = np.arange(len(labels))
    return [(all_indices[fold_of != f], all_indices[fold_of == f]) for f in range(k)]


def stratified_holdout(labels, fraction, seed):
    """
    从给定标签中按类别分层留出验证集，每个类别至少留出 1 个、至少保留 1 个用于训练。

    :return: (fit 位置, val 位置)，都是相对 labels 的下标。
    """
    labels = np.asarray(labels)
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"验证集比例必须位于 (0,1)，实际为 {fraction}")
    rng = make_rng(seed)
    val_parts = []
    for cls in (1, 0):
        members = np.flatnonzero(labels == cls)
        if len(members) < 2:
            raise InsufficientBagsError(f"类别 {cls} 只有 {len(members)} 个 bag，无法同时用于训练和验证")
        n_val = min(max(1, int(np.floor(fraction * len(members) + 0.5))), len(members) - 1)
        val_parts.append(rng.choice(members, size=n_val, replace=False))
    val = np.sort(np.concatenate(val_parts))
    fit = np.setdiff1d(np.arange(len(labels)), val)
    return fit, val


# ---------------------------------------------------------------------------
# 合成数据
# ---------------------------------------------------------------------------

def synth_generate(cfg):
    """
    按主示例假设生成合成 bag 数据。

    - bag 大小服从均值约为 bag_size_mean 的几何分布，并截断到 bag_size_max；
    - 阴性 bag 的示例全部来自标准正态背景分布；
    - 阳性 bag 中每个示例以 witness_rate 的概率成为主示例（至少一个），
      主示例均值为 signal_shift·u，u 是由种子确定的单位方向。
    """
    rng = make_rng(cfg.seed)
    direction = rng.standard_normal(cfg.p)
    direction /= np.linalg.norm(direction)

    n_pos = int(np.floor(cfg.positive_fraction * cfg.n_bags + 0.5))
    labels = np.zeros(cfg.n_bags, dtype=np.int64)
    labels[:n_pos] = 1
    labels = rng.permutation(labels)

    success = 1.0 / cfg.bag_size_mean
    sizes = np.minimum(rng.geometric(success, size=cfg.n_bags), cfg.bag_size_max)

    width = len(str(cfg.n_bags - 1))
    bags = []
    for i in range(cfg.n_bags):
        m = int(sizes[i])
        instances = rng.standard_normal((m, cfg.p))
        if labels[i] == 1:
            primary = rng.random(m) < cfg.witness_rate
            if not primary.any():
                primary[rng.integers(m)] = True
            instances[primary] += cfg.signal_shift * direction
        bags.append(Bag(bag_id=f"bag{i:0{width}d}", label=int(labels[i]), instances=instances))

    LOG.info(f"生成合成数据：{cfg.n_bags} 个 bag（阳性 {n_pos} 个），p={cfg.p}，平均大小 {sizes.mean():.2f}")
    return Dataset(bags=tuple(bags), p=cfg.p)


def synth_direction(cfg):
    # 与 synth_generate 使用同一随机流的第一步，得到主示例方向 u
    rng = make_rng(cfg.seed)
    direction = rng.standard_normal(cfg.p)
    return direction / np.linalg.norm(direction)


def bag_size_summary(ds):
    """bag 大小统计：各类别数量、最小/中位/平均/最大大小以及分箱直方图。"""
    sizes = ds.sizes
    labels = ds.labels
    histogram = []
    for low, high in SIZE_BINS:
        upper = sizes.max() if high is None else high
        count = int(np.count_nonzero((sizes >= low) & (sizes <= upper)))
        name = f"{low}+" if high is None else (str(low) if low == high else f"{low}-{high}")
        histogram.append((name, count))
    return {
        "n_bags": ds.n,
        "n_positive": int(np.count_nonzero(labels == 1)),
        "n_negative": int(np.count_nonzero(labels == 0)),
        "min_size": int(sizes.min()),
        "median_size": float(np.median(sizes)),
        "mean_size": float(sizes.mean()),
        "max_size": int(sizes.max()),
        "histogram": histogram,
    }

