"""
随机数种子派生工具。

所有随机性都从一个主种子出发，通过 SeedSequence 的 spawn_key 路径派生子种子，
因此每个折、每个消融变体、每个 m* 取值都可以单独复现，与执行顺序无关。
"""

import zlib

import numpy as np


def _key_to_int(key):
    # 字符串键用 crc32 映射为稳定的整数（跨进程、跨平台一致）
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"种子派生键不能为负数: {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(master_seed, *keys):
    """
    从主种子和一组键派生一个 32 位无符号整数种子。

    :param master_seed: 主种子（非负整数）。
    :param keys: 派生路径，例如 ("fold", 3) 或 ("variant", "Proposed")。
    :return: 派生出的种子。
    """
    if master_seed < 0:
        raise ValueError(f"主种子不能为负数: {master_seed}")
    sequence = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def make_rng(seed):
    return np.random.default_rng(seed)
