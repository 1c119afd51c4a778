#!/usr/bin/env python3
"""
Spring-Mass Simulator Plugin
Forced damped oscillator  m x'' = u - k x - c x'  observed through position only,
so velocity has to be inferred over time.
"""

from typing import Dict, List, Tuple

import numpy as np

from simulator_interface import SimulatorRegistry, SystemSimulator


class SpringMassSimulator(SystemSimulator):
    """Mass on a spring with viscous damping; state (x, v)"""

    def get_name(self) -> str:
        return "spring_mass"

    def get_param_names(self) -> List[str]:
        return ["stiffness", "damping", "mass"]

    def default_param_ranges(self) -> Dict[str, Tuple[float, float]]:
        return {
            "stiffness": (1.0, 10.0),
            "damping": (0.1, 1.0),
            "mass": (1.0, 1.0),
        }

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def obs_dim(self) -> int:
        return 1

    def dynamics(self, state, action, params):
        k, c, mass = params
        x, v = state
        return np.array([v, (action[0] - k * x - c * v) / mass])

    def observe(self, states):
        return states[..., :1]

    def energy(self, state, params) -> float:
        k, _, mass = params
        x, v = state
        return float(0.5 * mass * v * v + 0.5 * k * x * x)

    def sample_initial_state(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)


# Register plugin
SimulatorRegistry.register(
    name="spring_mass",
    simulator_class=SpringMassSimulator,
    version="1.0.0",
    description="Damped spring-mass system with position-only observations"
)
