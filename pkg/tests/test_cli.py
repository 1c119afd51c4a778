#!/usr/bin/env python3
"""
Unit tests for CLI commands
Tests command parsing, the end-to-end pipeline and exit codes
"""

import unittest
import sys
import csv
import json
import shutil
import subprocess
import tempfile
import importlib.util
from pathlib import Path

ROOT = Path(__file__).parent.parent
CLI_PATH = ROOT / "hiprssm" / "src" / "__main__.py"
SMOKE_CONFIG = ROOT / "hiprssm" / "configs" / "smoke.yaml"

src_dir = ROOT / "hiprssm" / "src"
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))


def load_cli():
    spec = importlib.util.spec_from_file_location("hiprssm_cli", CLI_PATH)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, str(CLI_PATH), *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


class TestCLICommandParsing(unittest.TestCase):
    """Test command line argument parsing"""

    @classmethod
    def setUpClass(cls):
        cls.parser = load_cli().build_parser()

    def test_train_command_parsing(self):
        """Test train arguments and defaults"""
        args = self.parser.parse_args(['train', '--data', 'd', '--out', 'o'])
        self.assertEqual(args.command, 'train')
        self.assertIsNone(args.baseline)
        self.assertIsNone(args.checkpoint)

        args = self.parser.parse_args(['train', '--data', 'd', '--out', 'o', '--baseline', 'np',
                                       '--set', 'train.epochs=3', '--set', 'train.lr=0.01'])
        self.assertEqual(args.baseline, 'np')
        self.assertEqual(args.set, ['train.epochs=3', 'train.lr=0.01'])

    def test_eval_command_parsing(self):
        """Test eval protocol default and horizon"""
        args = self.parser.parse_args(['eval', '--data', 'd', '--checkpoint', 'c', '--out', 'o'])
        self.assertEqual(args.protocol, 'all')
        self.assertIsNone(args.horizon)
        args = self.parser.parse_args(['eval', '--data', 'd', '--checkpoint', 'c', '--out', 'o',
                                       '--protocol', 'multi_step', '--horizon', '10'])
        self.assertEqual((args.protocol, args.horizon), ('multi_step', 10))

    def test_export_trajectories_repeatable(self):
        args = self.parser.parse_args(['export-embeddings', '--data', 'd', '--checkpoint', 'c', '--out', 'o',
                                       '--trajectory', '4', '--trajectory', '5'])
        self.assertEqual(args.trajectory, [4, 5])

    def test_verbose_before_command(self):
        args = self.parser.parse_args(['-v', 'print-config'])
        self.assertTrue(args.verbose)

    def test_missing_required_flag(self):
        with self.assertRaises(SystemExit):
            self.parser.parse_args(['infer', '--data', 'd', '--checkpoint', 'c', '--out', 'o'])


class TestCLIBasics(unittest.TestCase):
    """Test help, usage errors and config handling through subprocess calls"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_help_message_displayed(self):
        """Test that help is shown and exit code is 1 with no command"""
        result = run_cli(cwd=self.temp_dir)
        self.assertEqual(result.returncode, 1)
        self.assertIn("usage:", (result.stdout + result.stderr).lower())

    def test_invalid_command_error(self):
        result = run_cli("fit", cwd=self.temp_dir)
        self.assertNotEqual(result.returncode, 0)
        self.assertIn("invalid choice", result.stderr.lower())

    def test_print_config(self):
        """Test that print-config emits the defaulted config as JSON"""
        result = run_cli("print-config", "--config", SMOKE_CONFIG, "--set", "train.epochs=9", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 0, result.stdout + result.stderr)
        config = json.loads(result.stdout)
        self.assertEqual(config["train"]["epochs"], 9)
        self.assertEqual(config["model"]["context_size"], 10)
        self.assertEqual(config["eval"]["seed"], 1234)

    def test_invalid_config_exit_code(self):
        """segment_len longer than the trajectory is a config error (exit 2)"""
        out = Path(self.temp_dir) / "data"
        result = run_cli("generate-data", "--config", SMOKE_CONFIG, "--set", "sim.segment_len=50", "--out", out,
                         cwd=self.temp_dir)
        self.assertEqual(result.returncode, 2)
        self.assertIn("[X]", result.stdout)
        self.assertIn("segment_len", result.stdout)
        self.assertFalse((out / "manifest.json").exists())

    def test_unknown_config_key_exit_code(self):
        result = run_cli("print-config", "--set", "model.depth=3", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 2)
        self.assertIn("model.depth", result.stdout)

    def test_missing_dataset_exit_code(self):
        """A dataset directory without a manifest is an I/O error (exit 3)"""
        result = run_cli("train", "--config", SMOKE_CONFIG, "--data", Path(self.temp_dir) / "nowhere",
                         "--out", Path(self.temp_dir) / "run", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 3)


class TestCLIPipeline(unittest.TestCase):
    """Test generate-data, train, eval, infer and export-embeddings on the smoke config"""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = Path(tempfile.mkdtemp())
        cls.data = cls.temp_dir / "data"
        cls.run_dir = cls.temp_dir / "run"
        cls.checkpoint = cls.run_dir / "checkpoint"
        cls.generate = run_cli("generate-data", "--config", SMOKE_CONFIG, "--out", cls.data, cwd=cls.temp_dir)
        cls.train = run_cli("train", "--config", SMOKE_CONFIG, "--data", cls.data, "--out", cls.run_dir,
                            cwd=cls.temp_dir)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir, ignore_errors=True)

    def test_generate_outputs(self):
        self.assertEqual(self.generate.returncode, 0, self.generate.stdout + self.generate.stderr)
        for name in ("manifest.json", "obs.bin", "actions.bin", "hidden.bin", "generate.log.jsonl"):
            self.assertTrue((self.data / name).exists(), name)
        manifest = json.loads((self.data / "manifest.json").read_text())
        self.assertEqual((manifest["n_traj"], manifest["n_test"], manifest["traj_len"]), (6, 2, 40))

    def test_generate_prints_stats(self):
        """Observation and delta statistics show without --verbose"""
        self.assertIn("obs mean", self.generate.stdout)
        self.assertIn("delta mean", self.generate.stdout)

    def test_generate_is_reproducible(self):
        """Same config and seed give byte-identical arrays"""
        again = self.temp_dir / "data_again"
        result = run_cli("generate-data", "--config", SMOKE_CONFIG, "--out", again, cwd=self.temp_dir)
        self.assertEqual(result.returncode, 0)
        for name in ("obs.bin", "actions.bin", "hidden.bin", "manifest.json"):
            self.assertEqual((again / name).read_bytes(), (self.data / name).read_bytes(), name)

    def test_log_lines_are_json(self):
        lines = (self.data / "generate.log.jsonl").read_text().splitlines()
        self.assertTrue(lines)
        for line in lines:
            event = json.loads(line)
            self.assertIn("message", event)

    def test_train_outputs(self):
        self.assertEqual(self.train.returncode, 0, self.train.stdout + self.train.stderr)
        self.assertIn("[OK] Checkpoint:", self.train.stdout)
        self.assertTrue((self.checkpoint / "checkpoint.json").exists())
        self.assertTrue((self.run_dir / "config.json").exists())
        with open(self.run_dir / "metrics.csv", newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["epoch", "train_loss", "grad_norm", "eval_rmse"])
        self.assertEqual(len(rows), 3)

    def test_eval_report(self):
        out = self.temp_dir / "eval"
        result = run_cli("eval", "--data", self.data, "--checkpoint", self.checkpoint, "--out", out,
                         cwd=self.temp_dir)
        self.assertEqual(result.returncode, 0, result.stdout + result.stderr)
        with open(out / "eval_report.csv", newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["protocol", "horizon", "rmse"])
        protocols = [r[0] for r in rows[1:]]
        self.assertEqual(protocols, ["zero_delta", "full", "imputed_50"] + ["multi_step"] * 5)
        self.assertEqual([int(r[1]) for r in rows[-5:]], [1, 2, 3, 4, 5])
        self.assertRegex(result.stdout, r"full +h=1 +rmse \d")
        self.assertRegex(result.stdout, r"multi_step h=5 +rmse \d")

        again = self.temp_dir / "eval_again"
        run_cli("eval", "--data", self.data, "--checkpoint", self.checkpoint, "--out", again, cwd=self.temp_dir)
        self.assertEqual((again / "eval_report.csv").read_bytes(), (out / "eval_report.csv").read_bytes())

    def test_eval_single_protocol(self):
        out = self.temp_dir / "eval_multi"
        result = run_cli("eval", "--data", self.data, "--checkpoint", self.checkpoint, "--out", out,
                         "--protocol", "multi_step", "--horizon", "3", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 0, result.stdout + result.stderr)
        with open(out / "eval_report.csv", newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual([r[:2] for r in rows[1:]], [["multi_step", "1"], ["multi_step", "2"], ["multi_step", "3"]])

    def test_infer(self):
        out = self.temp_dir / "infer"
        result = run_cli("infer", "--data", self.data, "--checkpoint", self.checkpoint, "--out", out,
                         "--trajectory", "5", "--include-first", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 0, result.stdout + result.stderr)
        with open(out / "inference.csv", newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0][:3], ["trajectory", "window", "start"])
        self.assertEqual([r[1] for r in rows[1:]], ["0", "1", "2", "3"])
        self.assertEqual(rows[0][-10:], [f"pred_{t}_0" for t in range(10)])

    def test_infer_out_of_range(self):
        result = run_cli("infer", "--data", self.data, "--checkpoint", self.checkpoint,
                         "--out", self.temp_dir / "infer_bad", "--trajectory", "99", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 1)
        self.assertIn("[X] infer failed", result.stdout)

    def test_export_embeddings(self):
        out = self.temp_dir / "emb"
        result = run_cli("export-embeddings", "--data", self.data, "--checkpoint", self.checkpoint, "--out", out,
                         cwd=self.temp_dir)
        self.assertEqual(result.returncode, 0, result.stdout + result.stderr)
        with open(out / "embeddings.csv", newline='') as f:
            rows = list(csv.reader(f))
        # two held-out trajectories with three windows each
        self.assertEqual(len(rows), 1 + 6)
        self.assertTrue((out / "embeddings_pca.csv").exists())
        self.assertIn("PC1 vs stiffness", result.stdout)

    def test_resume_finished_run(self):
        """Resuming at the last epoch trains nothing and keeps the parameters"""
        out = self.temp_dir / "resumed"
        result = run_cli("train", "--config", SMOKE_CONFIG, "--data", self.data, "--out", out,
                         "--checkpoint", self.checkpoint, cwd=self.temp_dir)
        self.assertEqual(result.returncode, 0, result.stdout + result.stderr)
        self.assertEqual((out / "checkpoint" / "params.bin").read_bytes(),
                         (self.checkpoint / "params.bin").read_bytes())

    def test_checkpoint_shape_mismatch(self):
        """A model section that disagrees with the checkpoint exits with 5"""
        result = run_cli("eval", "--data", self.data, "--checkpoint", self.checkpoint,
                         "--out", self.temp_dir / "eval_bad", "--set", "model.latent_state_dim=6",
                         "--set", "model.task_dim=6", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 5, result.stdout + result.stderr)

    def test_resume_with_other_baseline(self):
        result = run_cli("train", "--config", SMOKE_CONFIG, "--data", self.data,
                         "--out", self.temp_dir / "resume_np", "--checkpoint", self.checkpoint,
                         "--baseline", "np", cwd=self.temp_dir)
        self.assertEqual(result.returncode, 5, result.stdout + result.stderr)


if __name__ == '__main__':
    unittest.main()
