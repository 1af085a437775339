import copy
import json
import os
from dataclasses import MISSING, fields

from bagdata import SynthConfig, auto_m_star
from evaluation import EvalConfig
from logger import LOG  # 导入日志模块
from network import ModelConfig
from training import TrainConfig

DEFAULT_CONFIG_FILE = "config.json"
DEFAULT_OUTPUT_DIR = "outputs"

SECTIONS = {
    "synth": SynthConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}
# p 来自数据；模型初始化与训练的种子由 eval.seed 派生
EXCLUDED = {"model": ("p", "seed"), "train": ("seed",)}


def section_defaults(name):
    """某个配置节的全部字段及其默认值（取自对应 dataclass）。"""
    values = {}
    for f in fields(SECTIONS[name]):
        if f.name in EXCLUDED.get(name, ()):
            continue
        if f.default is not MISSING:
            values[f.name] = f.default
        elif f.default_factory is not MISSING:
            values[f.name] = f.default_factory()
    # JSON 中没有元组，统一用列表
    return {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}


class Config:
    def __init__(self, config_file=None):
        self.config_file = config_file or os.getenv("BAGSENTINEL_CONFIG", DEFAULT_CONFIG_FILE)
        self.load_config()

    @classmethod
    def from_dict(cls, data):
        # 用于按 manifest 中保存的完整配置重放运行，不读取任何文件
        config = cls.__new__(cls)
        config.config_file = None
        config._apply(data)
        return config

    def load_config(self):
        if not os.path.exists(self.config_file):
            LOG.warning(f"配置文件 {self.config_file} 不存在，使用默认配置")
            data = {}
        else:
            try:
                with open(self.config_file, "r", encoding="utf-8") as f:
                    data = json.load(f)
            except json.JSONDecodeError as e:
                LOG.error(f"配置文件 {self.config_file} 不是合法的 JSON: {e}")
                raise ValueError(f"配置文件 {self.config_file} 不是合法的 JSON: {e}") from e
        self._apply(data)

    def _apply(self, data):
        unknown = set(data) - set(SECTIONS) - {"output"}
        if unknown:
            LOG.error(f"配置中存在未知的配置节: {sorted(unknown)}")
            raise ValueError(f"配置中存在未知的配置节: {sorted(unknown)}")

        self.sections = {}
        for name in SECTIONS:
            section = dict(data.get(name, {}))
            defaults = section_defaults(name)
            extra = set(section) - set(defaults)
            if extra:
                LOG.error(f"配置节 {name} 中存在未知字段: {sorted(extra)}")
                raise ValueError(f"配置节 {name} 中存在未知字段: {sorted(extra)}")
            self.sections[name] = {**defaults, **section}

        # 环境变量优先于配置文件
        output_config = data.get("output", {})
        self.output_dir = os.getenv("BAGSENTINEL_OUTPUT_DIR", output_config.get("dir", DEFAULT_OUTPUT_DIR))

    def resolve(self, section, key, flag_value=None):
        """命令行参数 > 配置文件 > 默认值。"""
        return flag_value if flag_value is not None else self.sections[section][key]

    def _build(self, name, flags, **fixed):
        values = {key: self.resolve(name, key, (flags or {}).get(key)) for key in self.sections[name]}
        values.update(fixed)
        try:
            return SECTIONS[name](**values)
        except (TypeError, ValueError) as e:
            LOG.error(f"配置节 {name} 无效: {e}")
            raise ValueError(f"配置节 {name} 无效: {e}") from e

    def synth_config(self, flags=None):
        return self._build("synth", flags)

    def model_config(self, ds, flags=None, seed=0):
        """按数据集补全 p；m_star 为 "auto" 时取数据中最大的 bag 大小。"""
        m_star = self.resolve("model", "m_star", (flags or {}).get("m_star"))
        if m_star == "auto":
            m_star = auto_m_star(ds)
            LOG.info(f"m_star=auto，取最大 bag 大小 {m_star}")
        return self._build("model", flags, p=ds.p, m_star=int(m_star), seed=seed)

    def train_config(self, flags=None, seed=0):
        return self._build("train", flags, seed=seed)

    def eval_config(self, flags=None):
        return self._build("eval", flags)

    def to_dict(self):
        data = copy.deepcopy(self.sections)
        data["output"] = {"dir": self.output_dir}
        return data
