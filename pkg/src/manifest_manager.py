import json
import os
import subprocess
from dataclasses import asdict, dataclass, field

from logger import LOG  # 导入日志模块

MANIFEST_FILE = "manifest.json"
FALLBACK_VERSION = "bagsentinel-0.1.0"


def describe_version():
    # 形如 git describe 的版本号；不在 git 仓库中时使用固定版本
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True, text=True, timeout=5, check=True,
        )
        return result.stdout.strip() or FALLBACK_VERSION
    except (OSError, subprocess.SubprocessError):
        return FALLBACK_VERSION


@dataclass
class RunManifest:
    subcommand: str
    argv: list  # 已补全所有默认值的命令行，rerun 时原样重放
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = FALLBACK_VERSION

    @classmethod
    def from_dict(cls, data):
        missing = [key for key in ("subcommand", "argv") if key not in data]
        if missing:
            raise ValueError(f"manifest 缺少字段: {missing}")
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class ManifestManager:
    def __init__(self, manifest_file):
        self.manifest_file = manifest_file

    def load_manifest(self):
        try:
            with open(self.manifest_file, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            LOG.error(f"无法读取 manifest {self.manifest_file}: {e}")
            raise ValueError(f"无法读取 manifest {self.manifest_file}: {e}") from e
        return RunManifest.from_dict(data)

    def save_manifest(self, manifest):
        directory = os.path.dirname(self.manifest_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self.manifest_file, "w", encoding="utf-8") as f:
            json.dump(asdict(manifest), f, indent=4, ensure_ascii=False)
        LOG.info(f"运行 manifest 已保存到 {self.manifest_file}")
        return self.manifest_file
