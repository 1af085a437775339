import os
import sys
import tempfile
import unittest

import numpy as np

# 添加 src 目录到模块搜索路径，以便可以导入 src 目录中的模块
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from checkpoint import FORMAT_VERSION, CheckpointError, load_checkpoint, save_checkpoint  # 导入要测试的检查点函数
from network import ModelConfig, init_model


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        """
        在每个测试方法之前运行，准备临时目录和一个非默认统计量的模型。
        """
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "model.npz")
        self.model = init_model(ModelConfig(p=4, m_star=7, n_blocks=3, attn_hidden=5, use_skip=False, seed=3))
        self.model.running_mean[:] = [0.1, 0.2, 0.3, 0.4]
        self.model.running_var[:] = [1.5, 2.5, 3.5, 4.5]

    def tearDown(self):
        """
        在每个测试方法之后运行，清理临时目录。
        """
        self.tmp.cleanup()

    def test_round_trip_restores_everything(self):
        save_checkpoint(self.model, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.config, self.model.config)
        self.assertEqual(loaded.variant, "Sparse")
        for name in self.model.parameter_names:
            np.testing.assert_array_equal(loaded.params[name], self.model.params[name])
        np.testing.assert_array_equal(loaded.running_mean, self.model.running_mean)
        np.testing.assert_array_equal(loaded.running_var, self.model.running_var)

    def _rewrite(self, **changes):
        save_checkpoint(self.model, self.path)
        with np.load(self.path) as data:
            contents = {key: data[key] for key in data.files}
        contents.update(changes)
        for key in [k for k, v in changes.items() if v is None]:
            del contents[key]
        with open(self.path, "wb") as f:
            np.savez(f, **contents)

    def test_wrong_version_is_rejected(self):
        self._rewrite(format_version=np.array("other/9"))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_shape_mismatch_is_rejected(self):
        self._rewrite(**{"param.W0": np.zeros((3, 3))})
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_missing_and_unknown_parameters_are_rejected(self):
        self._rewrite(**{"param.V": None})
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
        self._rewrite(**{"param.extra": np.zeros(2)})
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_negative_variance_is_rejected(self):
        self._rewrite(**{"state.running_var": -np.ones(4)})
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_unreadable_file(self):
        with open(self.path, "w") as f:
            f.write("not an archive")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_format_version_is_recorded(self):
        save_checkpoint(self.model, self.path)
        with np.load(self.path) as data:
            self.assertEqual(str(data["format_version"]), FORMAT_VERSION)


if __name__ == '__main__':
    unittest.main()
