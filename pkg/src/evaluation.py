"""
评估工具：ROC/AUC、Wilcoxon 符号秩检验、分层交叉验证、消融实验、m* 扫描、方法排名比较，
以及注意力权重矩阵和提取特征矩阵的导出。
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import norm, rankdata

import network
import training  # 以模块方式导入，避免与 training 的循环导入
from bagdata import Bag, Dataset, save_bag_file, stratified_holdout, stratified_kfold
from job_runner import run_jobs
from logger import LOG  # 导入日志模块
from report_generator import write_csv
from seeding import derive_seed

EXACT_MAX_N = 25  # 不超过该样本量时 Wilcoxon 使用精确分布
DEFAULT_M_STARS = (30, 60, 90, 120, 150)
DEFAULT_LOG_CONSTANT = 100.0
PAIRINGS = ("fold", "dataset")
FEATURE_STAGES = ("features", "pooled")
SCORE_COLUMNS = ("method", "dataset", "fold", "auc")

# 消融实验的四个变体，行顺序固定
ABLATION_GRID = ((False, False), (True, False), (False, True), (True, True))


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    validation_fraction: float = 0.1
    m_stars: tuple = DEFAULT_M_STARS
    ablation_seeds: tuple = tuple(range(10))
    pairing: str = "fold"
    log_constant: float = DEFAULT_LOG_CONSTANT
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "m_stars", tuple(int(m) for m in self.m_stars))
        object.__setattr__(self, "ablation_seeds", tuple(int(s) for s in self.ablation_seeds))
        if self.k < 2:
            raise ValueError(f"k 必须 ≥ 2，实际为 {self.k}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction 必须位于 [0,1)，实际为 {self.validation_fraction}")
        if not self.m_stars or min(self.m_stars) < 1:
            raise ValueError(f"m_stars 必须是非空的正整数列表，实际为 {self.m_stars}")
        if not self.ablation_seeds or min(self.ablation_seeds) < 0:
            raise ValueError(f"ablation_seeds 必须是非空的非负整数列表，实际为 {self.ablation_seeds}")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"未知的配对方式: {self.pairing}，可选值为 {PAIRINGS}")
        if self.log_constant <= 1.0:
            raise ValueError(f"log_constant 必须大于 1，实际为 {self.log_constant}")
        if self.jobs < 1:
            raise ValueError(f"jobs 必须 ≥ 1，实际为 {self.jobs}")
        if self.seed < 0:
            raise ValueError(f"seed 必须为非负整数，实际为 {self.seed}")

    def to_dict(self):
        return {
            "k": self.k,
            "validation_fraction": self.validation_fraction,
            "m_stars": list(self.m_stars),
            "ablation_seeds": list(self.ablation_seeds),
            "pairing": self.pairing,
            "log_constant": self.log_constant,
            "jobs": self.jobs,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------

def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores 长度 {scores.size} 与 labels 长度 {labels.size} 不一致")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores 中包含 NaN 或 inf")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels 只能包含 0 和 1")
    labels = labels.astype(np.int64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("计算 AUC 需要同时包含阳性和阴性样本")
    return scores, labels, n_pos, n_neg


def auc(scores, labels):
    """
    Mann–Whitney 形式的 AUC：阳性得分高于阴性得分的 (阳性, 阴性) 对所占比例，平局计 0.5。
    通过平均秩计算，复杂度 O(n log n)。
    """
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # 第一个点的阈值为 +inf

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def area(self):
        return trapezoid_area(self)


def roc_curve(scores, labels):
    """ROC 阶梯：从 (0,0) 出发，每个不同的得分阈值一步，终点为 (1,1)。"""
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    # 每组相同阈值取最后一个位置
    last = np.r_[np.flatnonzero(np.diff(sorted_scores)), sorted_scores.size - 1]
    true_positives = np.cumsum(sorted_labels)[last]
    false_positives = (last + 1) - true_positives
    return RocCurve(
        fpr=np.r_[0.0, false_positives / n_neg],
        tpr=np.r_[0.0, true_positives / n_pos],
        thresholds=np.r_[np.inf, sorted_scores[last]],
    )


def trapezoid_area(curve):
    return float(trapezoid(curve.tpr, curve.fpr))


# ---------------------------------------------------------------------------
# Wilcoxon 符号秩检验
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # 正差值的秩和 W+
    p_value: float
    n: int  # 去掉零差值后的样本量
    method: str  # "exact" 或 "normal"

    def __iter__(self):
        # 支持 statistic, p = wilcoxon_signed_rank(a, b)
        return iter((self.statistic, self.p_value))


def _exact_null_counts(doubled_ranks):
    # counts[s] = 使正秩（已乘 2）之和恰为 s 的符号组合数
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        counts[r:] = counts[r:] + counts[:total + 1 - r]
    return counts


def wilcoxon_signed_rank(a, b):
    """
    双侧 Wilcoxon 符号秩检验。

    去掉零差值，|差值| 按平均秩处理平局；n ≤ 25 时用精确的零分布（秩乘 2 后为整数，
    按动态规划计数），否则用带平局修正的正态近似。

    :return: WilcoxonResult(statistic=W+, p_value, n, method)
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"配对样本长度不一致: {a.size} 与 {b.size}")
    differences = a - b
    differences = differences[differences != 0.0]
    n = differences.size
    if n == 0:
        raise ValueError("所有配对差值均为 0，无法进行 Wilcoxon 检验")

    ranks = rankdata(np.abs(differences), method="average")
    w_plus = float(ranks[differences > 0].sum())

    if n <= EXACT_MAX_N:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        counts = _exact_null_counts(doubled)
        observed = int(round(2.0 * w_plus))
        at_most = int(counts[:observed + 1].sum())
        at_least = int(counts[observed:].sum())
        p_value = min(1.0, 2 * min(at_most, at_least) / 2 ** n)
        return WilcoxonResult(statistic=w_plus, p_value=p_value, n=n, method="exact")

    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(differences), return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    z = (w_plus - mean) / np.sqrt(variance)
    p_value = min(1.0, float(2.0 * norm.sf(abs(z))))
    return WilcoxonResult(statistic=w_plus, p_value=p_value, n=n, method="normal")


# ---------------------------------------------------------------------------
# 交叉验证
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    n_fit: int
    n_val: int
    n_test: int
    test_indices: np.ndarray
    auc: float
    roc: RocCurve
    prediction: object  # training.Prediction
    history: object  # training.TrainHistory
    elapsed_seconds: float = 0.0  # 本折训练与评分耗时


@dataclass
class EvalReport:
    variant: str
    k: int
    seed: int
    n_bags: int
    m_star: int
    p: int
    folds: list = field(default_factory=list)
    elapsed_seconds: float = 0.0

    @property
    def fold_aucs(self):
        return np.array([f.auc for f in self.folds], dtype=np.float64)

    @property
    def mean_auc(self):
        return float(self.fold_aucs.mean())

    @property
    def std_auc(self):
        return _spread(self.fold_aucs)

    @property
    def roc_curves(self):
        return [f.roc for f in self.folds]

    @property
    def predictions(self):
        return [f.prediction for f in self.folds]

    @property
    def histories(self):
        return [f.history for f in self.folds]

    def attention_matrix(self):
        """把各折测试集上的注意力拼回原数据顺序，得到 (n, m*) 矩阵，被屏蔽位置为 NaN。"""
        matrix = np.full((self.n_bags, self.m_star), np.nan)
        for f in self.folds:
            matrix[f.test_indices] = np.where(f.prediction.mask, f.prediction.attention, np.nan)
        return matrix

    def feature_matrix(self):
        matrix = np.full((self.n_bags, self.p), np.nan)
        for f in self.folds:
            matrix[f.test_indices] = f.prediction.features
        return matrix

    def to_score_table(self, method, dataset):
        return pd.DataFrame({
            "method": method,
            "dataset": dataset,
            "fold": [f.fold for f in self.folds],
            "auc": self.fold_aucs,
        })


def _spread(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def _run_fold(task):
    """单个折的完整流程：留出验证集 → 初始化 → 训练并选择最佳 epoch → 在测试集上评分。"""
    started = time.perf_counter()
    ds = task["dataset"]
    fold, seed = task["fold"], task["seed"]
    train_idx, test_idx = task["train_indices"], task["test_indices"]

    if task["validation_fraction"] > 0:
        fit_pos, val_pos = stratified_holdout(
            ds.labels[train_idx], task["validation_fraction"], derive_seed(seed, "holdout", fold)
        )
        fit_ds, val_ds = ds.subset(train_idx[fit_pos]), ds.subset(train_idx[val_pos])
    else:
        fit_ds, val_ds = ds.subset(train_idx), None
    test_ds = ds.subset(test_idx)

    model_cfg = replace(task["model_cfg"], seed=derive_seed(seed, "init", fold))
    train_cfg = replace(task["train_cfg"], seed=derive_seed(seed, "train", fold))
    model = network.init_model(model_cfg)
    best_model, history = training.train(model, fit_ds, val_ds, train_cfg)
    prediction = training.predict(best_model, test_ds)
    fold_auc = auc(prediction.probabilities, prediction.labels)
    LOG.debug(f"{model_cfg.variant} 第 {fold + 1} 折 AUC={fold_auc:.4f}")
    return FoldResult(
        fold=fold,
        n_fit=fit_ds.n,
        n_val=0 if val_ds is None else val_ds.n,
        n_test=test_ds.n,
        test_indices=np.asarray(test_idx),
        auc=fold_auc,
        roc=roc_curve(prediction.probabilities, prediction.labels),
        prediction=prediction,
        history=history,
        elapsed_seconds=time.perf_counter() - started,
    )


def _fold_tasks(ds, model_cfg, train_cfg, k, seed, validation_fraction):
    if validation_fraction == 0 and train_cfg.selection_metric == "val_auc":
        raise ValueError("validation_fraction=0 时只能使用 selection_metric=train_loss")
    if model_cfg.p != ds.p:
        raise ValueError(f"模型配置的 p={model_cfg.p} 与数据特征维度 {ds.p} 不一致")
    splits = stratified_kfold(ds, k, derive_seed(seed, "folds"))
    return [
        {
            "dataset": ds,
            "fold": fold,
            "seed": seed,
            "train_indices": train_idx,
            "test_indices": test_idx,
            "model_cfg": model_cfg,
            "train_cfg": train_cfg,
            "validation_fraction": validation_fraction,
        }
        for fold, (train_idx, test_idx) in enumerate(splits)
    ]


def _collect(ds, model_cfg, k, seed, folds, elapsed):
    report = EvalReport(
        variant=model_cfg.variant, k=k, seed=seed, n_bags=ds.n, m_star=model_cfg.m_star, p=ds.p,
        folds=list(folds), elapsed_seconds=elapsed,
    )
    LOG.info(f"{report.variant} {k} 折交叉验证：平均 AUC={report.mean_auc:.4f}（±{report.std_auc:.4f}）")
    return report


def cross_validate(ds, model_cfg, train_cfg, k=10, seed=0, validation_fraction=0.1, jobs=1):
    """
    分层 k 折交叉验证。每一折在训练部分中再分层留出 validation_fraction 作为验证集，
    用于选择最佳 epoch，然后在测试折上计算 AUC。所有随机性都由 seed 派生。

    :return: EvalReport
    """
    started = time.perf_counter()
    tasks = _fold_tasks(ds, model_cfg, train_cfg, k, seed, validation_fraction)
    folds = run_jobs(_run_fold, tasks, jobs)
    return _collect(ds, model_cfg, k, seed, folds, time.perf_counter() - started)


# ---------------------------------------------------------------------------
# 消融实验与 m* 扫描
# ---------------------------------------------------------------------------

@dataclass
class AblationResult:
    table: pd.DataFrame  # 每个变体一行，每个场景一组 mean/std 列
    runs: pd.DataFrame  # scenario, variant, use_skip, use_sparse, seed, mean_auc
    reports: dict = field(default_factory=dict)  # (scenario, variant, seed) -> EvalReport
    elapsed_seconds: float = 0.0  # 整个消融实验的墙钟时间


def ablation_run(datasets, base_cfg, train_cfg, seeds=(0,), k=10, validation_fraction=0.1, jobs=1):
    """
    四个变体（FC / Skip / Sparse / Proposed）在相同的折划分和种子下做交叉验证。

    :param datasets: Dataset，或 {场景名: Dataset}。
    :return: AblationResult，table 的列为 variant,use_skip,use_sparse,{场景}_mean_auc,{场景}_std_auc。
    """
    if isinstance(datasets, Dataset):
        datasets = {"data": datasets}
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("ablation_run 至少需要一个种子")

    started = time.perf_counter()
    cells, tasks = [], []
    for scenario, ds in datasets.items():
        for seed in seeds:
            for use_skip, use_sparse in ABLATION_GRID:
                cfg = replace(base_cfg, use_skip=use_skip, use_sparse=use_sparse)
                cell_tasks = _fold_tasks(ds, cfg, train_cfg, k, seed, validation_fraction)
                cells.append((scenario, ds, cfg, seed, len(cell_tasks)))
                tasks.extend(cell_tasks)
    LOG.info(f"消融实验：{len(datasets)} 个场景 × {len(seeds)} 个种子 × 4 个变体，共 {len(tasks)} 个折任务")
    results = run_jobs(_run_fold, tasks, jobs)
    elapsed = time.perf_counter() - started
    LOG.info(f"消融实验完成，总耗时 {elapsed:.1f} 秒")

    reports, rows, offset = {}, [], 0
    for scenario, ds, cfg, seed, count in cells:
        cell_folds = results[offset:offset + count]
        offset += count
        # 并行执行时各单元格的墙钟时间互相重叠，这里记录该单元格各折耗时之和
        report = _collect(ds, cfg, k, seed, cell_folds, sum(f.elapsed_seconds for f in cell_folds))
        reports[(scenario, cfg.variant, seed)] = report
        rows.append({
            "scenario": scenario,
            "variant": cfg.variant,
            "use_skip": cfg.use_skip,
            "use_sparse": cfg.use_sparse,
            "seed": seed,
            "mean_auc": report.mean_auc,
        })
    runs = pd.DataFrame(rows)

    table = pd.DataFrame({
        "variant": [network.VARIANTS[flags] for flags in ABLATION_GRID],
        "use_skip": [flags[0] for flags in ABLATION_GRID],
        "use_sparse": [flags[1] for flags in ABLATION_GRID],
    })
    for scenario in datasets:
        subset = runs[runs["scenario"] == scenario]
        grouped = [subset[subset["variant"] == v]["mean_auc"].to_numpy() for v in table["variant"]]
        table[f"{scenario}_mean_auc"] = [float(values.mean()) for values in grouped]
        table[f"{scenario}_std_auc"] = [_spread(values) for values in grouped]
    return AblationResult(table=table, runs=runs, reports=reports, elapsed_seconds=elapsed)


def bagsize_sweep(ds, base_cfg, train_cfg, m_stars=DEFAULT_M_STARS, k=10, seed=0, validation_fraction=0.1, jobs=1):
    """对每个 m* 做同一划分下的交叉验证，返回 m_star,mean_auc,std_auc,min_auc,max_auc 表。"""
    rows = []
    for m_star in m_stars:
        report = cross_validate(
            ds, replace(base_cfg, m_star=int(m_star)), train_cfg,
            k=k, seed=seed, validation_fraction=validation_fraction, jobs=jobs,
        )
        truncated = int(np.count_nonzero(ds.sizes > m_star))
        if truncated:
            LOG.info(f"m*={m_star}：{truncated} 个 bag 被截断到前 {m_star} 个示例")
        aucs = report.fold_aucs
        rows.append({
            "m_star": int(m_star),
            "mean_auc": report.mean_auc,
            "std_auc": report.std_auc,
            "min_auc": float(aucs.min()),
            "max_auc": float(aucs.max()),
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# 方法比较
# ---------------------------------------------------------------------------

def load_score_table(path):
    """读取外部方法的分数文件（CSV 列 method,dataset,fold,auc；fold 可省略）。"""
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        LOG.error(f"无法读取分数文件 {path}: {e}")
        raise ValueError(f"无法读取分数文件 {path}: {e}") from e
    if "fold" not in table.columns:
        table["fold"] = 0
    missing = [c for c in SCORE_COLUMNS if c not in table.columns]
    if missing:
        LOG.error(f"分数文件 {path} 缺少列: {missing}")
        raise ValueError(f"分数文件 {path} 缺少列: {missing}")
    table = table[list(SCORE_COLUMNS)].copy()
    table["method"] = table["method"].astype(str)
    table["dataset"] = table["dataset"].astype(str)
    table["auc"] = pd.to_numeric(table["auc"], errors="coerce")
    if table["auc"].isna().any() or not table["auc"].between(0.0, 1.0).all():
        raise ValueError(f"分数文件 {path} 中的 auc 必须是 [0,1] 内的数值")
    if table.duplicated(subset=["method", "dataset", "fold"]).any():
        raise ValueError(f"分数文件 {path} 中存在重复的 (method, dataset, fold) 记录")
    return table


def _pivot(score_table, index):
    wide = score_table.pivot_table(index=index, columns="method", values="auc", aggfunc="mean")
    if wide.isna().any().any():
        incomplete = sorted(wide.columns[wide.isna().any()].tolist())
        raise ValueError(f"以下方法缺少部分 {index} 的分数，无法配对: {incomplete}")
    return wide


def average_ranks(score_table):
    """每个数据集内按平均 AUC 排名（1 为最好，平局取平均秩），返回各方法的平均名次（升序）。"""
    wide = _pivot(score_table, "dataset")
    ranks = np.vstack([rankdata(-row, method="average") for row in wide.to_numpy()])
    result = pd.Series(ranks.mean(axis=0), index=wide.columns, name="average_rank")
    return result.sort_index().sort_values(kind="stable")


@dataclass(frozen=True)
class MethodComparison:
    ranks: pd.Series
    best: str
    second: str
    pairing: str
    test: WilcoxonResult


def compare_methods(score_table, pairing="fold"):
    """
    按平均名次选出最好和第二好的方法，并对二者做 Wilcoxon 符号秩检验。

    :param pairing: "fold" 按 (数据集, 折) 配对；"dataset" 按每个数据集的平均 AUC 配对。
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"未知的配对方式: {pairing}，可选值为 {PAIRINGS}")
    ranks = average_ranks(score_table)
    if len(ranks) < 2:
        raise ValueError("至少需要两个方法才能比较")
    best, second = ranks.index[0], ranks.index[1]
    wide = _pivot(score_table, ["dataset", "fold"] if pairing == "fold" else "dataset")
    test = wilcoxon_signed_rank(wide[best].to_numpy(), wide[second].to_numpy())
    LOG.info(f"最佳方法 {best} 与次佳方法 {second}（按 {pairing} 配对，n={test.n}）：p={test.p_value:.4g}")
    return MethodComparison(ranks=ranks, best=best, second=second, pairing=pairing, test=test)


# ---------------------------------------------------------------------------
# 注意力与特征导出
# ---------------------------------------------------------------------------

def attention_frames(model, ds):
    """
    生成注意力权重表和掩码表，行按示例数降序（稳定）排列。

    :return: (attention DataFrame, mask DataFrame)；注意力表中被屏蔽的单元格为 NaN。
    """
    prediction = training.predict(model, ds)
    sizes = ds.sizes
    order = np.argsort(-sizes, kind="stable")
    m_star = model.config.m_star
    head = pd.DataFrame({
        "bag_id": [prediction.bag_ids[i] for i in order],
        "label": prediction.labels[order],
        "n_instances": sizes[order],
    })
    weights = np.where(prediction.mask, prediction.attention, np.nan)[order]
    attention = pd.concat([head, pd.DataFrame(weights, columns=[f"a{j}" for j in range(m_star)])], axis=1)
    mask = pd.concat(
        [head[["bag_id"]], pd.DataFrame(prediction.mask[order].astype(np.int64), columns=[f"m{j}" for j in range(m_star)])],
        axis=1,
    )
    return attention, mask


def export_attention(model, ds, attention_path, mask_path):
    attention, mask = attention_frames(model, ds)
    write_csv(attention, attention_path)
    write_csv(mask, mask_path)
    return attention_path, mask_path


def minmax_log_transform(matrix, log_constant=DEFAULT_LOG_CONSTANT):
    """
    按列 min-max 归一化到 [0,1]（常数列定义为全 0），再做 v = log(1 + u·(K−1)) / log(K)。
    """
    if log_constant <= 1.0:
        raise ValueError(f"log_constant 必须大于 1，实际为 {log_constant}")
    matrix = np.asarray(matrix, dtype=np.float64)
    low = matrix.min(axis=0)
    span = matrix.max(axis=0) - low
    safe = np.where(span > 0, span, 1.0)
    unit = np.where(span > 0, (matrix - low) / safe, 0.0)
    return np.log1p(unit * (log_constant - 1.0)) / np.log(log_constant)


def export_features(model, ds, path, normalize=False, log_constant=DEFAULT_LOG_CONSTANT, stage="features"):
    """
    导出每个 bag 的提取特征（n × p），格式与 bag 文件相同（每个 bag 一行），可直接被 parse_bag_file 读回。

    :param stage: "features" 为分类层的输入（批归一化之后），"pooled" 为注意力池化的输出。
    :param normalize: 是否做 min-max + 对数变换，变换常数写在文件头的注释中。
    """
    if stage not in FEATURE_STAGES:
        raise ValueError(f"未知的特征阶段: {stage}，可选值为 {FEATURE_STAGES}")
    prediction = training.predict(model, ds)
    matrix = prediction.features if stage == "features" else prediction.pooled
    comments = [f"stage={stage}"]
    if normalize:
        matrix = minmax_log_transform(matrix, log_constant)
        comments += [
            "transform=minmax+log",
            "u=(x-min)/(max-min) per column; constant column -> 0",
            f"v=log(1+u*(K-1))/log(K); K={log_constant:g}",
        ]
    bags = tuple(
        Bag(bag_id=bag_id, label=int(label), instances=matrix[i:i + 1])
        for i, (bag_id, label) in enumerate(zip(prediction.bag_ids, prediction.labels))
    )
    return save_bag_file(Dataset(bags=bags, p=ds.p), path, comments=comments)
