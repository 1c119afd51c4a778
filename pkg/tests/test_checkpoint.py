#!/usr/bin/env python3
"""
Unit tests for checkpoint I/O
"""

import unittest
import sys
import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

# Add hiprssm/src to Python path for imports
src_dir = Path(__file__).parent.parent / "hiprssm" / "src"
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from checkpoint import load_checkpoint, restore_into, save_checkpoint
from errors import CheckpointMismatch, ManifestMismatch, ShortFile
from nn import ParamStore


def make_store(rng, second_shape=(3, 2)):
    store = ParamStore()
    store.add("layer.W", rng.normal(size=second_shape))
    store.add("layer.b", rng.normal(size=second_shape[0]))
    m, v = store.moments()
    for name in store.names():
        m[name][...] = rng.normal(size=m[name].shape)
        v[name][...] = rng.uniform(size=v[name].shape)
    return store


class TestCheckpoint(unittest.TestCase):
    """Save, load and restore"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.rng = np.random.default_rng(0)

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_restore_is_bit_exact(self):
        """Parameters and Adam moments come back identical"""
        store = make_store(self.rng)
        save_checkpoint(self.temp_dir, store, step=7, metadata={"epoch": 2, "history": [{"epoch": 1}]})
        ckpt = load_checkpoint(self.temp_dir)
        self.assertEqual(ckpt.step, 7)
        self.assertEqual(ckpt.epoch, 2)
        self.assertEqual(ckpt.history, [{"epoch": 1}])

        fresh = make_store(np.random.default_rng(99))
        restore_into(ckpt, fresh)
        for name in store.names():
            np.testing.assert_array_equal(fresh.value(name), store.value(name))
            np.testing.assert_array_equal(fresh.moments()[0][name], store.moments()[0][name])
            np.testing.assert_array_equal(fresh.moments()[1][name], store.moments()[1][name])

    def test_manifest_layout(self):
        """Manifest lists parameters in store order with their shapes"""
        save_checkpoint(self.temp_dir, make_store(self.rng), step=0)
        manifest = json.loads((self.temp_dir / "checkpoint.json").read_text())
        self.assertEqual(manifest["dtype"], "float64-le")
        self.assertEqual([p["name"] for p in manifest["parameters"]], ["layer.W", "layer.b"])
        self.assertEqual(manifest["parameters"][0]["shape"], [3, 2])
        self.assertEqual((self.temp_dir / "params.bin").stat().st_size, 9 * 8)

    def test_without_optimizer_state(self):
        """Moments are optional"""
        save_checkpoint(self.temp_dir, make_store(self.rng), step=0, include_optimizer=False)
        self.assertFalse((self.temp_dir / "adam_m.bin").exists())
        self.assertIsNone(load_checkpoint(self.temp_dir).adam_m)

    def test_truncated_file(self):
        """Fewer values than declared is a short file"""
        save_checkpoint(self.temp_dir, make_store(self.rng), step=0)
        path = self.temp_dir / "params.bin"
        path.write_bytes(path.read_bytes()[:-8])
        with self.assertRaises(ShortFile):
            load_checkpoint(self.temp_dir)

    def test_oversized_file(self):
        """More values than declared is a manifest mismatch"""
        save_checkpoint(self.temp_dir, make_store(self.rng), step=0)
        path = self.temp_dir / "adam_v.bin"
        path.write_bytes(path.read_bytes() + b"\0" * 8)
        with self.assertRaises(ManifestMismatch):
            load_checkpoint(self.temp_dir)

    def test_unknown_format_version(self):
        save_checkpoint(self.temp_dir, make_store(self.rng), step=0)
        manifest_path = self.temp_dir / "checkpoint.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["format_version"] = 99
        manifest_path.write_text(json.dumps(manifest))
        with self.assertRaises(ManifestMismatch):
            load_checkpoint(self.temp_dir)

    def test_shape_mismatch_on_restore(self):
        """A model with different shapes refuses the checkpoint"""
        save_checkpoint(self.temp_dir, make_store(self.rng), step=0)
        other = make_store(self.rng, second_shape=(4, 2))
        with self.assertRaises(CheckpointMismatch):
            restore_into(load_checkpoint(self.temp_dir), other)

    def test_missing_directory(self):
        with self.assertRaises(FileNotFoundError):
            load_checkpoint(self.temp_dir / "nowhere")


if __name__ == '__main__':
    unittest.main()
