"""Loss-surface probes along two filter-normalized random directions.

The surface is the loss evaluated on a square grid of parameter
perturbations theta + a*d1 + b*d2. Directions are rescaled so each output
unit's incoming-weight block has the same norm as the model's own block,
which removes the scale ambiguity of ReLU nets; bias blocks are scaled the
same way, so zero biases stay unperturbed. Non-convexity is summarized by
the mean Gaussian curvature over interior grid points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine.network import MLP
from .exceptions import InputError, UsageError
from .rng import stream

NORM_FLOOR = 1e-12

__all__ = [
    "SurfaceGrid",
    "filter_normalized_directions",
    "curvature_stats",
    "loss_surface",
]


@dataclass
class SurfaceGrid:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray          # values[i, j] = loss at (xs[i], ys[j])
    curvature: np.ndarray       # interior points, shape (res-2, res-2)
    mean_curvature: float
    directions: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    @property
    def resolution(self) -> int:
        return len(self.xs)

    @property
    def center_loss(self) -> float:
        mid = len(self.xs) // 2
        return float(self.values[mid, mid])


def _scaled_like(ref: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Rescale raw so its norm equals ref's; zero ref gives a zero block."""
    ref_norm = np.linalg.norm(ref)
    return raw * (ref_norm / max(np.linalg.norm(raw), NORM_FLOOR))


def filter_normalized_directions(
    net: MLP, seed: int, count: int = 2
) -> list[list[np.ndarray]]:
    """Random directions matching the network's parameter list, one
    incoming-weight column (or whole bias vector) normalized per unit."""
    rng = stream(seed, "surface-directions")
    out = []
    for _ in range(count):
        direction = []
        for param in net.params():
            raw = rng.standard_normal(param.shape)
            if param.ndim == 2:
                scaled = np.empty_like(raw)
                for j in range(param.shape[1]):
                    scaled[:, j] = _scaled_like(param[:, j], raw[:, j])
            else:
                scaled = _scaled_like(param, raw)
            direction.append(scaled)
        out.append(direction)
    return out


def curvature_stats(values: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Gaussian curvature K = (Lxx*Lyy - Lxy^2) / (1 + Lx^2 + Ly^2)^2 at
    each interior grid point via central differences; returns (K, mean)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape != (len(xs), len(ys)):
        raise UsageError(f"values shape {values.shape} != ({len(xs)}, {len(ys)})")
    if min(values.shape) < 3:
        raise UsageError("grid needs at least 3 points per axis")
    hx = float(xs[1] - xs[0])
    hy = float(ys[1] - ys[0])
    c = values[1:-1, 1:-1]
    lx = (values[2:, 1:-1] - values[:-2, 1:-1]) / (2 * hx)
    ly = (values[1:-1, 2:] - values[1:-1, :-2]) / (2 * hy)
    lxx = (values[2:, 1:-1] - 2 * c + values[:-2, 1:-1]) / hx**2
    lyy = (values[1:-1, 2:] - 2 * c + values[1:-1, :-2]) / hy**2
    lxy = (values[2:, 2:] - values[2:, :-2] - values[:-2, 2:] + values[:-2, :-2]) / (4 * hx * hy)
    k = (lxx * lyy - lxy**2) / (1 + lx**2 + ly**2) ** 2
    return k, float(k.mean())


def loss_surface(
    net: MLP,
    loss_fn: Callable[[MLP, object], float],
    batch,
    resolution: int = 21,
    span: float = 1.0,
    seed: int = 0,
) -> SurfaceGrid:
    """Evaluate loss_fn over the perturbation grid and attach curvature."""
    if resolution < 3:
        raise UsageError("grid resolution must be >= 3")
    params = net.params()
    for p in params:
        if not np.all(np.isfinite(p)):
            raise InputError("network parameters are not finite")
    d1, d2 = filter_normalized_directions(net, seed)
    xs = np.linspace(-span, span, resolution)
    ys = np.linspace(-span, span, resolution)
    origin = [p.copy() for p in params]
    probe = net.copy()
    probe_params = probe.params()
    values = np.empty((resolution, resolution))
    try:
        for i, a in enumerate(xs):
            for j, b in enumerate(ys):
                if a == 0.0 and b == 0.0:
                    # center point uses the untouched originals so the
                    # unperturbed loss is reproduced exactly
                    for dst, base in zip(probe_params, origin):
                        dst[...] = base
                else:
                    for dst, base, u, v in zip(probe_params, origin, d1, d2):
                        dst[...] = base + a * u + b * v
                values[i, j] = float(loss_fn(probe, batch))
    finally:
        for dst, base in zip(probe_params, origin):
            dst[...] = base
    k, mean_k = curvature_stats(values, xs, ys)
    return SurfaceGrid(xs, ys, values, k, mean_k, directions=(d1, d2))
