"""Uniform time grids and reproducible Brownian drivers.

Driver increments are drawn from counter-based Philox streams so that path i of
a run with master seed s is the same array no matter how many paths are
generated, in which order, or in which process.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Counter word 3 tags the purpose of a stream; word 2 carries the path index
# (or node index for auxiliary draws).  Distinct tuples give disjoint blocks.
_TAG_DRIVER = 0
_TAG_BRIDGE = 1
_TAG_GUARD = 2


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = horizon."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


def _philox(seed: int, w1: int, w2: int, w3: int) -> np.random.Generator:
    counter = np.array([0, w1, w2, w3], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def driver_stream(seed: int, path_index: int) -> np.random.Generator:
    """Generator for the Gaussian increments of one path."""
    return _philox(seed, 0, path_index, _TAG_DRIVER)


def bridge_stream(seed: int, path_index: int) -> np.random.Generator:
    """Generator for within-step bridge-minimum uniforms of one path."""
    return _philox(seed, 0, path_index, _TAG_BRIDGE)


def guard_stream(seed: int, node: int, attempt: int) -> np.random.Generator:
    """Generator for positivity-guard bridge draws, keyed by grid node."""
    return _philox(seed, attempt, node, _TAG_GUARD)


@dataclass
class DriverPath:
    """Seeded grid of Brownian increments in R^m shared by coupled runs.

    increments[i, k] ~ N(0, dt) is the k-th component increment over
    [t_i, t_{i+1}].  Reproducible from (seed, path_index).
    """

    seed: int
    path_index: int
    increments: np.ndarray = field(repr=False)

    @classmethod
    def generate(cls, grid: TimeGrid, m: int, seed: int, path_index: int = 0) -> "DriverPath":
        rng = driver_stream(seed, path_index)
        inc = rng.standard_normal((grid.steps, m)) * np.sqrt(grid.dt)
        return cls(seed=seed, path_index=path_index, increments=inc)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def components(self) -> int:
        return self.increments.shape[1]


def driver_block(grid: TimeGrid, m: int, seed: int, first_path: int, n_paths: int) -> np.ndarray:
    """Increments for paths [first_path, first_path + n_paths) as (P, N, m)."""
    out = np.empty((n_paths, grid.steps, m))
    root = np.sqrt(grid.dt)
    for j in range(n_paths):
        out[j] = driver_stream(seed, first_path + j).standard_normal((grid.steps, m))
    out *= root
    return out


def bridge_uniform_block(grid: TimeGrid, seed: int, first_path: int, n_paths: int) -> np.ndarray:
    """Per-step uniforms used to sample within-step bridge minima, (P, N)."""
    out = np.empty((n_paths, grid.steps))
    for j in range(n_paths):
        out[j] = bridge_stream(seed, first_path + j).random(grid.steps)
    return out
