"""Synthetic multi-period load profiles: a daily sinusoid with uniform noise."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .matpower import NetworkData


@dataclass(frozen=True)
class LoadProfile:
    """Per-period load multipliers ``scale[t, j]`` for the network's load buses."""

    scale: np.ndarray
    resolution: float
    seed: int | None = None
    amplitude: float = 0.0
    noise: float = 0.0
    level: float = 1.0

    @property
    def T(self) -> int:
        return self.scale.shape[0]

    @property
    def n_loads(self) -> int:
        return self.scale.shape[1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period"] + [f"load{j}" for j in range(self.n_loads)])
        for t, row in enumerate(self.scale):
            w.writerow([t] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, resolution=60.0) -> "LoadProfile":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        scale = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(rows) - 1, -1)
        return cls(scale, float(resolution))


def generate_load_profile(network: NetworkData, T: int, resolution: float = 60.0, seed: int = 0,
                          amplitude: float = 0.2, noise: float = 0.02, level: float = 1.0) -> LoadProfile:
    """Sinusoid-plus-noise multipliers, one column per load bus.

    ``scale[t, j] = level * (1 + amplitude * sin(2 pi t resolution / 1440) + noise * u)``
    with ``u ~ U(-1, 1)`` drawn from PCG64 seeded by ``seed``; entries are
    clipped below at 0.1.  Periods are numbered from 0, so ``T = 1440 /
    resolution`` spans exactly one day.  ``level`` rescales the whole curve,
    which matters for networks with little loading margin (case30 cannot
    serve much more than its nominal load).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0.0 <= amplitude < 1.0:
        raise ValueError("amplitude must lie in [0, 1)")
    if noise < 0.0:
        raise ValueError("noise must be non-negative")
    if not level > 0.0:
        raise ValueError("level must be positive")
    n_loads = len(network.load_bus)
    t = np.arange(T, dtype=float)
    base = 1.0 + amplitude * np.sin(2.0 * np.pi * t * resolution / 1440.0)
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.uniform(-1.0, 1.0, size=(T, n_loads))
    scale = np.maximum(level * (base[:, None] + noise * u), 0.1)
    return LoadProfile(scale, float(resolution), seed, float(amplitude), float(noise), float(level))


def flat_profile(network: NetworkData, T: int, resolution: float = 60.0) -> LoadProfile:
    return LoadProfile(np.ones((T, len(network.load_bus))), float(resolution))
