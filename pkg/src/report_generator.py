import hashlib
import json
import os

import numpy as np
import pandas as pd

from logger import LOG  # 导入日志模块

CSV_FLOAT_FORMAT = "%.9g"
MISSING_SENTINEL = "NA"  # 被屏蔽的注意力单元格写成该标记，与 0 区分


def write_csv(frame, path, na_rep=MISSING_SENTINEL):
    """用统一的浮点格式把 DataFrame 写成 CSV（无索引列，换行符固定为 \\n）。"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep=na_rep, lineterminator="\n")
    LOG.info(f"表格已保存到 {path}")
    return path


def config_hash(config):
    # 对 key 排序后的紧凑 JSON 求 sha256，作为配置的指纹
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_to_builtin)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _to_builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"无法序列化的类型: {type(value).__name__}")


class ReportGenerator:
    def __init__(self, output_dir):
        self.output_dir = output_dir  # 所有结果文件都写到这个目录下
        os.makedirs(output_dir, exist_ok=True)

    def path(self, filename):
        return os.path.join(self.output_dir, filename)

    def write_table(self, frame, filename):
        return write_csv(frame, self.path(filename))

    def write_history(self, history, filename="history.csv"):
        return self.write_table(history.to_frame(), filename)

    def write_cv_report(self, report, prefix="cv", method=None, dataset="data"):
        """
        写出交叉验证结果：每折 AUC、ROC 点、测试集预测以及 method,dataset,fold,auc 格式的分数表。

        :return: {名称: 路径}
        """
        folds = pd.DataFrame({
            "fold": [f.fold for f in report.folds],
            "n_fit": [f.n_fit for f in report.folds],
            "n_val": [f.n_val for f in report.folds],
            "n_test": [f.n_test for f in report.folds],
            "best_epoch": [f.history.best_epoch + 1 for f in report.folds],
            "auc": report.fold_aucs,
        })
        mean_row = pd.DataFrame({"fold": ["mean"], "auc": [report.mean_auc]})
        folds = pd.concat([folds, mean_row], ignore_index=True)

        roc = pd.concat([
            pd.DataFrame({"fold": f.fold, "fpr": f.roc.fpr, "tpr": f.roc.tpr, "threshold": f.roc.thresholds})
            for f in report.folds
        ], ignore_index=True)

        predictions = pd.concat([
            pd.DataFrame({
                "fold": f.fold,
                "bag_id": list(f.prediction.bag_ids),
                "label": f.prediction.labels,
                "probability": f.prediction.probabilities,
            })
            for f in report.folds
        ], ignore_index=True)

        scores = report.to_score_table(method=method or report.variant, dataset=dataset)
        return {
            "folds": self.write_table(folds, f"{prefix}_folds.csv"),
            "roc": self.write_table(roc, f"{prefix}_roc.csv"),
            "predictions": self.write_table(predictions, f"{prefix}_predictions.csv"),
            "scores": self.write_table(scores, f"{prefix}_scores.csv"),
        }

    def write_summary(self, config, seeds, fold_aucs=(), elapsed_seconds=0.0, extra=None, filename="summary.json"):
        """
        生成运行摘要 JSON：配置指纹、使用的种子、每折 AUC 与耗时。
        """
        summary = {
            "config_hash": config_hash(config),
            "config": config,
            "seeds": seeds,
            "fold_aucs": [float(a) for a in fold_aucs],
            "wall_clock_seconds": round(float(elapsed_seconds), 3),
        }
        if extra:
            summary.update(extra)
        summary_path = self.path(filename)
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=4, ensure_ascii=False, default=_to_builtin)
        LOG.info(f"运行摘要已保存到 {summary_path}")
        return summary_path
