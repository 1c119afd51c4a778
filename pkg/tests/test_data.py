#!/usr/bin/env python3
"""
Unit tests for trajectory generation, normalization, windowing and dataset I/O
"""

import unittest
import sys
import shutil
import tempfile
from pathlib import Path

import numpy as np

# Add hiprssm/src to Python path for imports
src_dir = Path(__file__).parent.parent / "hiprssm" / "src"
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from config import SimConfig, TaskValues
from data import (build_windows, compute_stats, generate_actions, normalize, read_dataset, simulate,
                  write_dataset)
from errors import ConfigError, IntegrationDiverged, ManifestMismatch, ShortFile, TrajectoryTooShort
from simulator_interface import SimulatorRegistry


def small_sim(**updates):
    base = dict(traj_len=60, n_traj=6, n_test=2, segment_len=20, workers=1)
    base.update(updates)
    return SimConfig(**base)


class TestSimulators(unittest.TestCase):
    """RK4 integration and the bundled systems"""

    def test_registered_systems(self):
        names = {meta.name for meta in SimulatorRegistry.list_simulators()}
        self.assertTrue({"spring_mass", "pendulum"} <= names)

    def test_unknown_system(self):
        with self.assertRaises(KeyError):
            SimulatorRegistry.create("double_pendulum")

    def test_rk4_matches_closed_form(self):
        """Undamped unforced oscillator follows cos(omega t)"""
        sim = SimulatorRegistry.create("spring_mass")
        T, dt = 1001, 0.01
        params = np.tile([4.0, 0.0, 1.0], (T, 1))
        states = sim.integrate(np.array([1.0, 0.0]), np.zeros((T, 1)), params, dt)
        t = np.arange(T) * dt
        np.testing.assert_allclose(states[:, 0], np.cos(2.0 * t), atol=1e-6)
        np.testing.assert_allclose(states[:, 1], -2.0 * np.sin(2.0 * t), atol=1e-6)

    def test_damping_dissipates_energy(self):
        """With no forcing, energy never increases"""
        sim = SimulatorRegistry.create("spring_mass")
        T = 500
        params = np.tile([5.0, 0.5, 1.0], (T, 1))
        states = sim.integrate(np.array([1.0, 0.5]), np.zeros((T, 1)), params, 0.01)
        energy = np.array([sim.energy(s, params[0]) for s in states])
        self.assertTrue(np.all(np.diff(energy) <= 1e-12))
        self.assertLess(energy[-1], 0.5 * energy[0])

    def test_undamped_pendulum_conserves_energy(self):
        sim = SimulatorRegistry.create("pendulum")
        T = 300
        params = np.tile([1.0, 1.0, 0.0], (T, 1))
        states = sim.integrate(np.array([1.0, 0.0]), np.zeros((T, 1)), params, 0.01)
        energy = np.array([sim.energy(s, params[0]) for s in states])
        np.testing.assert_allclose(energy, energy[0], rtol=1e-6)

    def test_pendulum_observation_on_unit_circle(self):
        sim = SimulatorRegistry.create("pendulum")
        obs = sim.observe(np.array([[0.3, 1.0], [2.0, -1.0]]))
        np.testing.assert_allclose(np.sum(obs ** 2, axis=-1), 1.0)

    def test_divergence_detected(self):
        sim = SimulatorRegistry.create("spring_mass")
        T = 200
        params = np.tile([-1e6, 0.0, 1.0], (T, 1))
        with self.assertRaises(IntegrationDiverged):
            sim.integrate(np.array([1.0, 0.0]), np.zeros((T, 1)), params, 0.01)


class TestActions(unittest.TestCase):
    """Excitation signals"""

    def test_zero_std_is_unforced(self):
        actions = generate_actions("random_smooth", np.random.default_rng(0), 50, 1, 0.01, 0.0)
        np.testing.assert_array_equal(actions, np.zeros((50, 1)))

    def test_random_smooth_scaled_to_std(self):
        actions = generate_actions("random_smooth", np.random.default_rng(0), 500, 2, 0.01, 2.0)
        self.assertEqual(actions.shape, (500, 2))
        np.testing.assert_allclose(actions.std(axis=0), 2.0, rtol=1e-10)

    def test_random_smooth_is_smooth(self):
        """Consecutive samples are strongly correlated"""
        actions = generate_actions("random_smooth", np.random.default_rng(1), 1000, 1, 0.01, 1.0)
        self.assertGreater(np.corrcoef(actions[:-1, 0], actions[1:, 0])[0, 1], 0.9)

    def test_sinusoid_mix_bounded(self):
        actions = generate_actions("sinusoid_mix", np.random.default_rng(0), 300, 1, 0.01, 1.0)
        self.assertLessEqual(np.abs(actions).max(), 3.0 * np.sqrt(2.0 / 3.0) + 1e-12)

    def test_unknown_policy(self):
        with self.assertRaises(ValueError):
            generate_actions("bang_bang", np.random.default_rng(0), 10, 1, 0.01, 1.0)


class TestSimulate(unittest.TestCase):
    """Dataset generation"""

    def test_shapes_and_split(self):
        ds = simulate(small_sim())
        self.assertEqual(ds.obs.shape, (6, 60, 1))
        self.assertEqual(ds.actions.shape, (6, 60, 1))
        self.assertEqual(ds.hidden.shape, (6, 60, 3))
        self.assertEqual(ds.train_indices, [0, 1, 2, 3])
        self.assertEqual(ds.test_indices, [4, 5])
        self.assertIsNotNone(ds.stats)

    def test_independent_of_worker_count(self):
        """Per-trajectory seeds make the output identical for any pool size"""
        one = simulate(small_sim(workers=1))
        many = simulate(small_sim(workers=3))
        np.testing.assert_array_equal(one.obs, many.obs)
        np.testing.assert_array_equal(one.actions, many.actions)
        np.testing.assert_array_equal(one.hidden, many.hidden)

    def test_seed_changes_data(self):
        first = simulate(small_sim(seed=0))
        second = simulate(small_sim(seed=1))
        self.assertFalse(np.array_equal(first.obs, second.obs))

    def test_hidden_parameters_piecewise_constant(self):
        ds = simulate(small_sim())
        for i in range(ds.n_traj):
            for start in range(0, 60, 20):
                segment = ds.hidden[i, start:start + 20]
                np.testing.assert_array_equal(segment, np.broadcast_to(segment[0], segment.shape))

    def test_holdout_band_separates_splits(self):
        """Test trajectories draw stiffness from the reserved band, training never does"""
        ds = simulate(small_sim(n_traj=12, n_test=4))
        stiffness = ds.hidden[..., ds.param_names.index("stiffness")]
        low, high = 1.0 + 0.4 * 9.0, 1.0 + 0.6 * 9.0
        train, test = stiffness[ds.train_indices], stiffness[ds.test_indices]
        self.assertTrue(np.all((train < low) | (train >= high)))
        self.assertTrue(np.all((test >= low) & (test <= high)))

    def test_discrete_task_values(self):
        cfg = small_sim(task_values=TaskValues(train=[2.0, 4.0, 8.0], test=[6.0]), holdout_band=None)
        ds = simulate(cfg)
        stiffness = ds.hidden[..., 0]
        self.assertTrue(set(np.unique(stiffness[ds.train_indices])) <= {2.0, 4.0, 8.0})
        self.assertEqual(set(np.unique(stiffness[ds.test_indices])), {6.0})

    def test_task_values_must_be_disjoint(self):
        with self.assertRaises(ValueError):
            TaskValues(train=[2.0, 4.0], test=[4.0])

    def test_fixed_parameter_range(self):
        """A degenerate range pins the parameter"""
        ds = simulate(small_sim(param_ranges={"damping": (0.3, 0.3)}))
        np.testing.assert_array_equal(ds.hidden[..., 1], 0.3)

    def test_unknown_parameter_range(self):
        with self.assertRaises(ConfigError):
            simulate(small_sim(param_ranges={"friction": (0.0, 1.0)}))

    def test_unknown_task_parameter(self):
        with self.assertRaises(ConfigError):
            simulate(small_sim(task_param="length"))


class TestNormalizationAndWindows(unittest.TestCase):
    """Standardization and (context, target) pairing"""

    @classmethod
    def setUpClass(cls):
        cls.raw = simulate(small_sim(obs_noise_std=0.0))
        cls.ds = normalize(cls.raw, "train", cls.raw.stats)

    def test_training_split_standardized(self):
        obs = self.ds.obs[self.ds.train_indices].reshape(-1, self.ds.d_o)
        np.testing.assert_allclose(obs.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(obs.std(axis=0), 1.0, rtol=1e-10)

    def test_stats_need_raw_data(self):
        with self.assertRaises(ValueError):
            compute_stats(self.ds)

    def test_stats_use_training_split_only(self):
        stats = compute_stats(self.raw, "train")
        expected = self.raw.obs[:4].reshape(-1, 1).mean(axis=0)
        np.testing.assert_allclose(stats.obs_mean, expected)

    def test_window_layout(self):
        """Window j targets steps [jN, (j+1)N) with window j-1 as context"""
        N = 10
        windows = build_windows(self.ds, N)
        self.assertEqual(len(windows), 6 * 5)
        self.assertEqual(windows.window_len, N)
        np.testing.assert_array_equal(windows.start[:5], [10, 20, 30, 40, 50])
        np.testing.assert_array_equal(windows.window_index[:5], [1, 2, 3, 4, 5])
        np.testing.assert_array_equal(windows.trajectory[:5], 0)
        np.testing.assert_array_equal(windows.context_obs[1], windows.target_obs[0])
        np.testing.assert_array_equal(windows.context_obs[0], self.ds.obs[0, 0:10])
        np.testing.assert_array_equal(windows.context_next_obs[0], self.ds.obs[0, 1:11])
        np.testing.assert_array_equal(windows.target_next_obs[0, :-1], windows.target_obs[0, 1:])

    def test_last_step_has_no_target(self):
        windows = build_windows(self.ds, 10)
        last = windows.window_index == 5
        self.assertFalse(np.any(windows.prediction_mask[last, -1]))
        self.assertTrue(np.all(windows.prediction_mask[last, :-1]))
        self.assertTrue(np.all(windows.prediction_mask[~last]))
        np.testing.assert_array_equal(windows.target_deltas[last, -1], 0.0)

    def test_deltas_recover_raw_differences(self):
        windows = build_windows(self.ds, 10)
        stats = self.ds.stats
        raw_delta = stats.denormalize_delta(windows.target_deltas[0])
        expected = self.raw.obs[0, 11:21] - self.raw.obs[0, 10:20]
        np.testing.assert_allclose(raw_delta, expected, atol=1e-12)

    def test_hidden_summary(self):
        windows = build_windows(self.ds, 10, trajectories=[2])
        np.testing.assert_allclose(windows.hidden_summary[0], self.ds.hidden[2, 10:20].mean(axis=0))

    def test_remainder_steps_dropped(self):
        """traj_len not divisible by N leaves the tail unused"""
        windows = build_windows(self.ds, 25, trajectories=[0])
        self.assertEqual(len(windows), 1)
        self.assertEqual(int(windows.start[0]), 25)

    def test_trajectory_too_short(self):
        with self.assertRaises(TrajectoryTooShort):
            build_windows(self.ds, 31)

    def test_requires_normalized_data(self):
        with self.assertRaises(ValueError):
            build_windows(self.raw, 10)

    def test_subset_and_context(self):
        windows = build_windows(self.ds, 10)
        sub = windows.subset([3, 7])
        self.assertEqual(len(sub), 2)
        np.testing.assert_array_equal(sub.target_obs[1], windows.target_obs[7])
        self.assertEqual(sub.context_set().obs.shape, (2, 10, 1))
        self.assertEqual(windows.context_set([0]).size, 10)


class TestDatasetIO(unittest.TestCase):
    """On-disk format"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.ds = simulate(small_sim())
        write_dataset(self.ds, self.temp_dir)

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_read_back(self):
        back = read_dataset(self.temp_dir)
        np.testing.assert_array_equal(back.obs, self.ds.obs)
        np.testing.assert_array_equal(back.hidden, self.ds.hidden)
        np.testing.assert_array_equal(back.stats.delta_std, self.ds.stats.delta_std)
        self.assertEqual(back.n_train, 4)
        self.assertEqual(back.param_names, ["stiffness", "damping", "mass"])
        self.assertEqual(back.sim_config["traj_len"], 60)

    def test_file_sizes(self):
        self.assertEqual((self.temp_dir / "obs.bin").stat().st_size, 6 * 60 * 1 * 8)
        self.assertEqual((self.temp_dir / "hidden.bin").stat().st_size, 6 * 60 * 3 * 8)

    def test_short_file(self):
        path = self.temp_dir / "actions.bin"
        path.write_bytes(path.read_bytes()[:-16])
        with self.assertRaises(ShortFile):
            read_dataset(self.temp_dir)

    def test_oversized_file(self):
        path = self.temp_dir / "obs.bin"
        path.write_bytes(path.read_bytes() + b"\0" * 8)
        with self.assertRaises(ManifestMismatch):
            read_dataset(self.temp_dir)

    def test_missing_manifest(self):
        (self.temp_dir / "manifest.json").unlink()
        with self.assertRaises(FileNotFoundError):
            read_dataset(self.temp_dir)


if __name__ == '__main__':
    unittest.main()
