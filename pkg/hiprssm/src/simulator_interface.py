#!/usr/bin/env python3
"""
Simulator Interface for HiP-RSSM
Defines the contract for changing-dynamics system plugins and the registry
they self-register with on import.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import IntegrationDiverged

DIVERGENCE_BOUND = 1e6


class SystemSimulator(ABC):
    """
    Abstract base class for simulated systems.
    Hidden parameters are passed as a vector ordered like get_param_names().
    """

    @abstractmethod
    def get_name(self) -> str:
        """Return system name (e.g., 'spring_mass', 'pendulum')"""

    @abstractmethod
    def get_param_names(self) -> List[str]:
        """Hidden parameter names, in vector order"""

    @abstractmethod
    def default_param_ranges(self) -> Dict[str, Tuple[float, float]]:
        """Inclusive (low, high) sampling range per hidden parameter"""

    @property
    @abstractmethod
    def state_dim(self) -> int:
        pass

    @property
    @abstractmethod
    def obs_dim(self) -> int:
        pass

    @property
    def action_dim(self) -> int:
        return 1

    @abstractmethod
    def dynamics(self, state: np.ndarray, action: np.ndarray, params: np.ndarray) -> np.ndarray:
        """Continuous-time state derivative"""

    @abstractmethod
    def observe(self, states: np.ndarray) -> np.ndarray:
        """Noise-free observations for states of shape (..., state_dim)"""

    @abstractmethod
    def energy(self, state: np.ndarray, params: np.ndarray) -> float:
        """Total mechanical energy (used to check dissipation)"""

    @abstractmethod
    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        pass

    def rk4_step(self, state: np.ndarray, action: np.ndarray, params: np.ndarray, dt: float) -> np.ndarray:
        """One classical Runge-Kutta step with the action held constant"""
        k1 = self.dynamics(state, action, params)
        k2 = self.dynamics(state + 0.5 * dt * k1, action, params)
        k3 = self.dynamics(state + 0.5 * dt * k2, action, params)
        k4 = self.dynamics(state + dt * k3, action, params)
        return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def integrate(self, initial_state, actions: np.ndarray, params: np.ndarray, dt: float) -> np.ndarray:
        """
        Fixed-step RK4 rollout.

        Args:
            initial_state: state at t=0
            actions: (T, action_dim); actions[t] drives the step t -> t+1
            params: (T, n_params); params[t] governs the step t -> t+1

        Returns:
            (T, state_dim) states, states[0] == initial_state

        Raises:
            IntegrationDiverged: a state magnitude exceeded DIVERGENCE_BOUND
        """
        T = actions.shape[0]
        states = np.empty((T, self.state_dim))
        states[0] = initial_state
        for t in range(T - 1):
            nxt = self.rk4_step(states[t], actions[t], params[t], dt)
            if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > DIVERGENCE_BOUND:
                raise IntegrationDiverged(f"{self.get_name()}: state diverged at step {t + 1}")
            states[t + 1] = nxt
        return states


@dataclass
class SimulatorMetadata:
    """Metadata about a registered simulator"""
    name: str
    simulator_class: type
    version: str = "1.0.0"
    description: str = ""


class SimulatorRegistry:
    """
    Registry for system simulator plugins.
    Plugins self-register on import.
    """

    _simulators: Dict[str, SimulatorMetadata] = {}

    @classmethod
    def register(cls, name: str, simulator_class: type, version: str = "1.0.0", description: str = ""):
        """Register a simulator plugin"""
        if not issubclass(simulator_class, SystemSimulator):
            raise TypeError(f"{simulator_class} must inherit from SystemSimulator")

        cls._simulators[name] = SimulatorMetadata(
            name=name,
            simulator_class=simulator_class,
            version=version,
            description=description
        )

    @classmethod
    def get_simulator(cls, name: str) -> Optional[type]:
        """Get simulator class by name"""
        metadata = cls._simulators.get(name)
        return metadata.simulator_class if metadata else None

    @classmethod
    def list_simulators(cls) -> List[SimulatorMetadata]:
        """List all registered simulators"""
        return list(cls._simulators.values())

    @classmethod
    def create(cls, name: str) -> SystemSimulator:
        simulator_class = cls.get_simulator(name)
        if simulator_class is None:
            known = ", ".join(sorted(cls._simulators)) or "none"
            raise KeyError(f"no simulator registered as '{name}' (registered: {known})")
        return simulator_class()
