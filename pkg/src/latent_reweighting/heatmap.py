"""Latent-space heatmaps of the importance weights: grid, peak count, SVG."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .models import LatentPrior

# viridis anchor colours at 0, 1/8, ..., 1; the 256-step ramp interpolates them
_ANCHORS = np.array([
    [68, 1, 84], [71, 44, 122], [59, 81, 139], [44, 113, 142], [33, 144, 141],
    [39, 173, 129], [92, 200, 99], [170, 220, 50], [253, 231, 37],
], dtype=float)
RAMP = np.stack([np.interp(np.linspace(0, 1, 256), np.linspace(0, 1, len(_ANCHORS)), _ANCHORS[:, c])
                 for c in range(3)], axis=1).round().astype(int)


def grid_extent(prior: LatentPrior) -> float:
    return 3.0 if prior.kind == "gaussian" else 1.0


def latent_grid(prior: LatentPrior, resolution: int, dims: Tuple[int, int] = (0, 1),
                base: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Regular ``resolution x resolution`` grid over the prior's box.

    Returns ``(axis, z)`` where ``z`` has ``resolution**2`` rows, first
    coordinate varying slowest. For ``d > 2`` the two plotted coordinates are
    ``dims`` and the rest come from ``base`` (the slice spec).
    """
    if resolution < 2:
        raise ConfigError("heatmap resolution must be >= 2")
    d = prior.dim
    if d < 2:
        raise ConfigError("heatmaps need a latent dimension of at least 2")
    if d > 2 and base is None:
        raise ConfigError(f"latent dimension {d} > 2 needs a slice spec (values for the other coordinates)")
    i, j = dims
    if not (0 <= i < d and 0 <= j < d and i != j):
        raise ConfigError(f"invalid slice dimensions {dims} for latent dimension {d}")
    point = np.zeros(d) if base is None else np.asarray(base, float).copy()
    if point.shape != (d,):
        raise ConfigError(f"slice spec needs {d} values, got {point.shape}")
    lim = grid_extent(prior)
    axis = np.linspace(-lim, lim, resolution)
    a, b = np.meshgrid(axis, axis, indexing="ij")
    z = np.tile(point, (resolution * resolution, 1))
    z[:, i] = a.ravel()
    z[:, j] = b.ravel()
    return axis, z


def count_local_maxima(values: np.ndarray) -> int:
    """Number of 8-neighbourhood local maxima of a 2-D grid.

    A cell qualifies when it is >= all its neighbours and strictly above the
    grid minimum; touching qualifying cells (plateaus) count once.
    """
    v = np.asarray(values, float)
    if v.ndim != 2:
        raise ConfigError("local maxima need a 2-D grid")
    neigh_max = ndimage.maximum_filter(v, size=3, mode="constant", cval=-np.inf)
    peak = (v >= neigh_max) & (v > v.min())
    _, n = ndimage.label(peak, structure=np.ones((3, 3)))
    return int(n)


def colour_index(values: np.ndarray, lo: Optional[float] = None, hi: Optional[float] = None) -> np.ndarray:
    v = np.asarray(values, float)
    lo = v.min() if lo is None else lo
    hi = v.max() if hi is None else hi
    if hi <= lo:
        return np.zeros(v.shape, dtype=int)
    return np.clip(((v - lo) / (hi - lo) * 255).round(), 0, 255).astype(int)


def render_svg(grid: np.ndarray, axis: np.ndarray, metadata: dict, cell: int = 8) -> str:
    """SVG colour map of ``grid[i, j]`` (row ``i`` is z1, drawn left to right; z2 upwards)."""
    r = grid.shape[0]
    idx = colour_index(grid)
    size = r * cell
    meta = " ".join(f'{k}="{v}"' for k, v in sorted(metadata.items()))
    ramp = ";".join("%02x%02x%02x" % tuple(c) for c in RAMP)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f"<metadata><run {meta}/><ramp steps=\"256\">{ramp}</ramp>"
        f"<range min=\"{grid.min():.17g}\" max=\"{grid.max():.17g}\" "
        f"extent=\"{axis[0]:.17g},{axis[-1]:.17g}\"/></metadata>",
        '<g shape-rendering="crispEdges">',
    ]
    for i in range(r):
        for j in range(r):
            colour = "#%02x%02x%02x" % tuple(RAMP[idx[i, j]])
            out.append(f'<rect x="{i * cell}" y="{(r - 1 - j) * cell}" width="{cell}" height="{cell}" fill="{colour}"/>')
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"
