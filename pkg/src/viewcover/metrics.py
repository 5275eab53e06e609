"""Renderable information metrics and their per-primitive accumulators.

Three metrics, in decreasing order of fidelity to the dense oracle and
increasing robustness:

- transmittance: running column norms of the observation matrix, one
  scalar per primitive;
- view-direction: running column norms per (primitive, sphere patch),
  weighted by a spherical kernel;
- coverage: per-primitive boolean direction grids; a candidate scores by
  how angularly close its viewing direction is to some already-seen
  direction, per primitive it sees ((1 + max dot) / 2, lower = more
  informative).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import raster
from .scene import Camera, Scene
from .sphere import (
    SphericalGaussianKernel,
    kernel_weights,
    kernel_weights_batch,
    normalize,
    patch_angular_radius,
    sg_dot,
    sg_dot_surrogate,
    unit_sphere_directions,
)

__all__ = [
    "DirectionGrid",
    "TransAccumulator",
    "ViewAccumulator",
    "SphericalGaussianKernel",
    "kernel_weights",
    "kernel_weights_batch",
    "unit_sphere_directions",
    "patch_angular_radius",
    "sg_dot",
    "sg_dot_surrogate",
    "quantize_direction",
    "quantize_directions",
    "viewing_directions",
    "observe_coverage",
    "coverage_per_primitive",
    "score_coverage",
    "update_trans",
    "score_trans",
    "update_view",
    "score_view",
]


@dataclass(eq=False)
class DirectionGrid:
    """L-patch sphere discretization with per-primitive seen flags.

    `seen[i, l]` records that primitive i has been observed from a
    direction quantizing to patch l.
    """

    patch_dirs: np.ndarray  # (L, 3) unit
    seen: np.ndarray  # (P, L) bool

    @classmethod
    def create(cls, n_primitives: int, l_patches: int) -> "DirectionGrid":
        dirs = unit_sphere_directions(l_patches)
        return cls(patch_dirs=dirs, seen=np.zeros((n_primitives, l_patches), dtype=bool))

    @property
    def n_patches(self) -> int:
        return self.patch_dirs.shape[0]

    @property
    def n_primitives(self) -> int:
        return self.seen.shape[0]

    def copy(self) -> "DirectionGrid":
        return DirectionGrid(self.patch_dirs, self.seen.copy())


def quantize_direction(grid: DirectionGrid, d: np.ndarray) -> int:
    """Patch index whose center is closest to d (ties: lowest index)."""
    return int(np.argmax(grid.patch_dirs @ np.asarray(d, dtype=np.float64)))


def quantize_directions(grid: DirectionGrid, dirs: np.ndarray) -> np.ndarray:
    return np.argmax(dirs @ grid.patch_dirs.T, axis=1)


def viewing_directions(means: np.ndarray, camera_position: np.ndarray) -> np.ndarray:
    """Unit directions from the camera to each primitive mean."""
    return normalize(np.atleast_2d(means) - np.asarray(camera_position, dtype=np.float64))


def observe_coverage(
    grid: DirectionGrid, camera_position: np.ndarray, means: np.ndarray, visible: np.ndarray
) -> DirectionGrid:
    """Flip the seen flag of each visible primitive's viewing-direction patch.

    Idempotent; mutates and returns `grid`.
    """
    visible = np.asarray(visible, dtype=np.int64)
    if visible.size:
        dirs = viewing_directions(means[visible], camera_position)
        grid.seen[visible, quantize_directions(grid, dirs)] = True
    return grid


def coverage_per_primitive(
    grid: DirectionGrid, means: np.ndarray, camera_position: np.ndarray
) -> np.ndarray:
    """(P,) coverage scores in [0, 1] for a candidate camera position.

    score_i = (1 + max over seen patches of <patch_dir, d_i>) / 2 with d_i
    the candidate's viewing direction of primitive i. Primitives with no
    seen patch score 0 (an empty max counts as -1): never-observed
    geometry is maximally attractive.
    """
    dots = viewing_directions(means, camera_position) @ grid.patch_dirs.T  # (P, L)
    masked = np.where(grid.seen, dots, -1.0)
    best = masked.max(axis=1)
    best[~grid.seen.any(axis=1)] = -1.0
    return (1.0 + best) / 2.0


def score_coverage(
    scene: Scene, grid: DirectionGrid, camera: Camera, background: int = 0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Rendered coverage metric for a candidate camera.

    Returns (mean score over the non-zero alpha mask, metric image, mask).
    Lower mean = more informative. A candidate whose mask is empty scores
    1.0, the least informative value, so empty space is never queried.
    """
    scores = coverage_per_primitive(grid, raster._packed(scene)["means"], camera.position)
    img, mask = raster.render_metric(scene, camera, scores, background=background)
    mean = float(img[mask].mean()) if mask.any() else 1.0
    return mean, img, mask


# ---------------------------------------------------------------------------
# Transmittance metric accumulator
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TransAccumulator:
    """Running squared column norms of the unit-row observation matrix."""

    col_sq_norms: np.ndarray  # (P,)

    @classmethod
    def create(cls, n_primitives: int) -> "TransAccumulator":
        return cls(col_sq_norms=np.zeros(n_primitives))

    def copy(self) -> "TransAccumulator":
        return TransAccumulator(self.col_sq_norms.copy())


def update_trans(acc: TransAccumulator, row: raster.WeightRow) -> TransAccumulator:
    """Absorb one unit-L2 observation row: norms[i] += w_i^2."""
    if row.norm_mode != raster.UNIT_L2:
        raise ValueError("transmittance accumulator expects unit_l2 rows")
    np.add.at(acc.col_sq_norms, row.indices, row.weights**2)
    return acc


def score_trans(acc: TransAccumulator, row: raster.WeightRow) -> float:
    """sum_i w_i * ||column i||: the renderable transmittance metric.

    With a one-hot row this is exactly the candidate column's norm; for
    general rows it upper-bounds ||W w||_2 (triangle inequality), so
    minimizing it pushes the information gain up.
    """
    if row.is_empty:
        return 0.0
    return float(row.weights @ np.sqrt(acc.col_sq_norms[row.indices]))


# ---------------------------------------------------------------------------
# View-direction metric accumulator
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ViewAccumulator:
    """Running squared norms per (primitive, patch) of the kernel-expanded rows."""

    patch_sq_norms: np.ndarray  # (P, L)

    @classmethod
    def create(cls, n_primitives: int, l_patches: int) -> "ViewAccumulator":
        return cls(patch_sq_norms=np.zeros((n_primitives, l_patches)))

    def copy(self) -> "ViewAccumulator":
        return ViewAccumulator(self.patch_sq_norms.copy())


def _check_betas(row: raster.WeightRow, betas: np.ndarray, l_patches: int) -> np.ndarray:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.shape != (row.indices.size, l_patches):
        raise ValueError(
            f"per-primitive betas must have shape ({row.indices.size}, {l_patches}), "
            f"got {betas.shape}"
        )
    return betas


def update_view(acc: ViewAccumulator, row: raster.WeightRow, betas: np.ndarray) -> ViewAccumulator:
    """Absorb one row expanded by per-primitive patch weights.

    `betas[k]` is the unit-L2 patch-weight vector of primitive
    row.indices[k] at its viewing direction; the expanded row
    (w_i * beta^i_l) has unit norm when the row does, and each
    (primitive, patch) cell accumulates its squared entry.
    """
    if row.norm_mode != raster.UNIT_L2:
        raise ValueError("view accumulator expects unit_l2 rows")
    betas = _check_betas(row, betas, acc.patch_sq_norms.shape[1])
    acc.patch_sq_norms[row.indices] += (row.weights[:, None] * betas) ** 2
    return acc


def score_view(acc: ViewAccumulator, row: raster.WeightRow, betas: np.ndarray) -> float:
    """sum_i w_i sum_l beta^i_l * ||cell (i, l)||: view-direction metric."""
    if row.is_empty:
        return 0.0
    betas = _check_betas(row, betas, acc.patch_sq_norms.shape[1])
    cell_norms = np.sqrt(acc.patch_sq_norms[row.indices])
    return float(row.weights @ np.sum(betas * cell_norms, axis=1))
