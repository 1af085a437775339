import json

import numpy as np

from logger import LOG  # 导入日志模块
from network import Model, ModelConfig, parameter_shapes

FORMAT_VERSION = "bagsentinel-checkpoint/1"


class CheckpointError(ValueError):
    """检查点文件格式错误或与配置不一致。"""


def save_checkpoint(model, path):
    """
    把模型保存为单个自描述的 .npz 文件：格式版本、完整 ModelConfig（JSON）、
    以及所有参数和批归一化滑动统计量（float64，行优先）。
    """
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "config_json": np.array(json.dumps(model.config.to_dict(), sort_keys=True)),
        "state.running_mean": np.ascontiguousarray(model.running_mean, dtype=np.float64),
        "state.running_var": np.ascontiguousarray(model.running_var, dtype=np.float64),
    }
    for name in model.parameter_names:
        arrays[f"param.{name}"] = np.ascontiguousarray(model.params[name], dtype=np.float64)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    LOG.info(f"模型检查点已保存到 {path}")
    return path


def load_checkpoint(path):
    """读取检查点，并按其中的配置逐一校验参数形状。"""
    try:
        with np.load(path, allow_pickle=False) as data:
            contents = {key: data[key] for key in data.files}
    except (OSError, ValueError) as e:
        LOG.error(f"无法读取检查点 {path}: {e}")
        raise CheckpointError(f"无法读取检查点 {path}: {e}") from e

    version = str(contents.get("format_version", ""))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"不支持的检查点格式版本: {version!r}")
    try:
        config = ModelConfig(**json.loads(str(contents["config_json"])))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"检查点中的模型配置无效: {e}") from e

    params = {}
    for name, shape in parameter_shapes(config).items():
        key = f"param.{name}"
        if key not in contents:
            raise CheckpointError(f"检查点缺少参数 {name}")
        if contents[key].shape != shape:
            raise CheckpointError(f"参数 {name} 的形状 {contents[key].shape} 与配置要求的 {shape} 不一致")
        params[name] = np.array(contents[key], dtype=np.float64)
    extra = {k for k in contents if k.startswith("param.")} - {f"param.{n}" for n in params}
    if extra:
        raise CheckpointError(f"检查点包含未知参数: {sorted(extra)}")

    stats = {}
    for name in ("running_mean", "running_var"):
        value = contents.get(f"state.{name}")
        if value is None or value.shape != (config.p,):
            raise CheckpointError(f"检查点中的 {name} 缺失或形状错误")
        stats[name] = np.array(value, dtype=np.float64)
    if np.any(stats["running_var"] < 0):
        raise CheckpointError("running_var 存在负值")

    LOG.debug(f"已读取检查点 {path}（{config.variant}）")
    return Model(config=config, params=params, **stats)
