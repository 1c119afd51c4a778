#!/usr/bin/env python3
"""
Pendulum Simulator Plugin
Torque-driven damped pendulum  m L^2 theta'' = u - c theta' - m g L sin(theta),
observed as (sin theta, cos theta).
"""

from typing import Dict, List, Tuple

import numpy as np

from simulator_interface import SimulatorRegistry, SystemSimulator

GRAVITY = 9.81


class PendulumSimulator(SystemSimulator):
    """Point-mass pendulum; state (theta, omega)"""

    def get_name(self) -> str:
        return "pendulum"

    def get_param_names(self) -> List[str]:
        return ["length", "mass", "damping"]

    def default_param_ranges(self) -> Dict[str, Tuple[float, float]]:
        return {
            "length": (0.5, 2.0),
            "mass": (0.5, 3.0),
            "damping": (0.05, 0.5),
        }

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def obs_dim(self) -> int:
        return 2

    def dynamics(self, state, action, params):
        length, mass, c = params
        theta, omega = state
        inertia = mass * length * length
        torque = action[0] - c * omega - mass * GRAVITY * length * np.sin(theta)
        return np.array([omega, torque / inertia])

    def observe(self, states):
        theta = states[..., 0]
        return np.stack([np.sin(theta), np.cos(theta)], axis=-1)

    def energy(self, state, params) -> float:
        length, mass, _ = params
        theta, omega = state
        return float(0.5 * mass * length * length * omega * omega
                     + mass * GRAVITY * length * (1.0 - np.cos(theta)))

    def sample_initial_state(self, rng):
        return np.array([rng.uniform(-np.pi / 2, np.pi / 2), rng.uniform(-1.0, 1.0)])


# Register plugin
SimulatorRegistry.register(
    name="pendulum",
    simulator_class=PendulumSimulator,
    version="1.0.0",
    description="Damped pendulum observed through the sine and cosine of its angle"
)
