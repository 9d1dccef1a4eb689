"""2-D target distributions: Swiss roll, Gaussian grid and the four-mode toy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import ConfigError

FOUR_MODES = np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])
FOUR_STD = 0.05
DIAGONAL = np.array([1.0, 1.0]) / np.sqrt(2.0)


@dataclass
class Dataset2D:
    points: np.ndarray
    name: str
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 1:
            raise ConfigError(f"{self.name}: expected an (n >= 1, 2) point array")
        if not np.all(np.isfinite(self.points)):
            raise ConfigError(f"{self.name}: non-finite points")

    def __len__(self) -> int:
        return len(self.points)


def swiss_roll_points(t: np.ndarray) -> np.ndarray:
    return np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / 15.0


def sample_swiss_roll(n: int, seed: int, noise_std: float = 0.02) -> Dataset2D:
    if n < 1 or noise_std < 0:
        raise ConfigError("swiss roll needs n >= 1 and noise_std >= 0")
    rng = np.random.default_rng(seed)
    t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    pts = swiss_roll_points(t) + noise_std * rng.standard_normal((n, 2))
    return Dataset2D(pts, "swiss_roll", seed, {"noise_std": noise_std})


def grid_modes(rows: int, cols: int, spacing: float) -> np.ndarray:
    xs = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    ys = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def sample_gaussian_grid(n: int, rows: int = 5, cols: int = 5, spacing: float = 0.5,
                         std: float = 0.05, seed: int = 0) -> Dataset2D:
    if n < 1 or rows * cols < 1 or std < 0:
        raise ConfigError("gaussian grid needs n >= 1, rows*cols >= 1 and std >= 0")
    rng = np.random.default_rng(seed)
    modes = grid_modes(rows, cols, spacing)
    idx = rng.integers(len(modes), size=n)
    pts = modes[idx] + std * rng.standard_normal((n, 2))
    params = {"rows": rows, "cols": cols, "spacing": spacing, "std": std}
    return Dataset2D(pts, "gaussian_grid", seed, params)


def sample_four_gaussians(n: int, seed: int, offset: float = 0.1,
                          std: float = FOUR_STD) -> Tuple[Dataset2D, np.ndarray]:
    """Four modes at (+-0.5, +-0.5) and proposal centres shifted along the diagonal."""
    if n < 1 or offset < 0:
        raise ConfigError("four gaussians needs n >= 1 and offset >= 0")
    rng = np.random.default_rng(seed)
    idx = rng.integers(4, size=n)
    pts = FOUR_MODES[idx] + std * rng.standard_normal((n, 2))
    proposal = FOUR_MODES + offset * DIAGONAL
    ds = Dataset2D(pts, "four_gaussians", seed, {"offset": offset, "std": std})
    return ds, proposal


DATASETS = ("swiss_roll", "gaussian_grid", "four_gaussians")


def make_dataset(name: str, n: int, seed: int, **params) -> Dataset2D:
    """Build a dataset by name; keyword params are passed through."""
    if name == "swiss_roll":
        return sample_swiss_roll(n, seed, **params)
    if name == "gaussian_grid":
        return sample_gaussian_grid(n, seed=seed, **params)
    if name == "four_gaussians":
        return sample_four_gaussians(n, seed, **params)[0]
    raise ConfigError(f"unknown dataset {name!r}; choose from {', '.join(DATASETS)}")


def mode_centres(name: str, **params) -> np.ndarray:
    if name == "gaussian_grid":
        return grid_modes(params.get("rows", 5), params.get("cols", 5), params.get("spacing", 0.5))
    if name == "four_gaussians":
        return FOUR_MODES.copy()
    raise ConfigError(f"{name} has no discrete modes")
