"""Unit-sphere direction grids and the spherical Gaussian kernel.

The direction grid discretizes S^2 into L patches, each represented by a
unit vector (the patch center). Directions quantize to the patch whose
center they are closest to (max dot product). Grids double as the support
of the per-primitive color field: a primitive's appearance from direction
d is a kernel-weighted average of its per-patch radiances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

# Vertex counts of the subdivided icosahedron: 10 * 4**k + 2.
ICOSPHERE_COUNTS = (12, 42, 162, 642, 2562)

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array(
    [
        [-1, _GOLDEN, 0], [1, _GOLDEN, 0], [-1, -_GOLDEN, 0], [1, -_GOLDEN, 0],
        [0, -1, _GOLDEN], [0, 1, _GOLDEN], [0, -1, -_GOLDEN], [0, 1, -_GOLDEN],
        [_GOLDEN, 0, -1], [_GOLDEN, 0, 1], [-_GOLDEN, 0, -1], [-_GOLDEN, 0, 1],
    ],
    dtype=np.float64,
)

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def normalize(v: np.ndarray) -> np.ndarray:
    """Normalize vectors along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def icosphere(subdivisions: int) -> np.ndarray:
    """Vertices of a geodesic icosphere, (10*4**k + 2, 3), unit norm.

    Each subdivision splits every triangular face into four and projects
    the new vertices back onto the sphere. The vertex set is antipodally
    symmetric at every level (the icosahedral symmetry group contains the
    central inversion).
    """
    verts = normalize(_ICO_VERTS)
    faces = _ICO_FACES.copy()
    for _ in range(subdivisions):
        midpoint_of: dict[tuple[int, int], int] = {}
        verts_list = list(verts)
        new_faces = []

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in midpoint_of:
                m = normalize(verts_list[i] + verts_list[j])
                midpoint_of[key] = len(verts_list)
                verts_list.append(m)
            return midpoint_of[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return verts


def fibonacci_sphere(n: int) -> np.ndarray:
    """Fibonacci spiral lattice, (n, 3). Quasi-uniform for arbitrary n."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    theta = 2.0 * np.pi * i / _GOLDEN
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def unit_sphere_directions(count: int) -> np.ndarray:
    """Quasi-uniform direction set of exactly `count` unit vectors.

    Octahedral axes for count 6 and geodesic icospheres for the counts in
    ICOSPHERE_COUNTS (both antipodally symmetric); Fibonacci lattice
    otherwise.
    """
    if count < 2:
        raise ValueError(f"direction grid needs at least 2 patches, got {count}")
    if count == 6:
        return np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
            dtype=np.float64,
        )
    if count in ICOSPHERE_COUNTS:
        return icosphere(ICOSPHERE_COUNTS.index(count))
    return fibonacci_sphere(count)


def patch_angular_radius(patch_dirs: np.ndarray, n_probe: int = 20000, seed: int = 0) -> float:
    """Estimated max angle (radians) from any direction to its nearest patch."""
    rng = np.random.default_rng(seed)
    probes = normalize(rng.normal(size=(n_probe, 3)))
    best = np.max(probes @ patch_dirs.T, axis=1)
    return float(np.arccos(np.clip(best.min(), -1.0, 1.0)))


@dataclass(eq=False)
class SphericalGaussianKernel:
    """Decaying spherical kernel C * exp(kappa * <d, mu>) on a patch grid.

    `norm_const` is the nominal scalar C making the evaluated patch-weight
    vector unit L2 norm; it is computed for a reference direction and is
    effectively constant over directions on a quasi-uniform grid.
    """

    kappa: float
    norm_const: float

    @classmethod
    def for_grid(cls, kappa: float, patch_dirs: np.ndarray) -> "SphericalGaussianKernel":
        if kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {kappa}")
        log_sq = logsumexp(2.0 * kappa * patch_dirs @ np.array([0.0, 0.0, 1.0]))
        return cls(kappa=float(kappa), norm_const=float(np.exp(-0.5 * log_sq)))


def kernel_weights(kernel: SphericalGaussianKernel, patch_dirs: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Patch-weight vector beta(d), unit L2 norm, non-negative.

    beta_l is proportional to exp(kappa * <d_l, d>), so it peaks at the
    patch containing d; kappa -> inf gives a one-hot vector, kappa = 0 the
    uniform vector 1/sqrt(L).
    """
    return kernel_weights_batch(kernel, patch_dirs, np.asarray(d, dtype=np.float64)[None, :])[0]


def kernel_weights_batch(
    kernel: SphericalGaussianKernel, patch_dirs: np.ndarray, dirs: np.ndarray
) -> np.ndarray:
    """kernel_weights for a batch of query directions, (n, L)."""
    dots = dirs @ patch_dirs.T
    # Stable: shift by the row max before exponentiating.
    w = np.exp(kernel.kappa * (dots - dots.max(axis=1, keepdims=True)))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def sg_dot(
    kernel: SphericalGaussianKernel,
    patch_dirs: np.ndarray,
    d_train: np.ndarray,
    d_test: np.ndarray,
) -> float:
    """Exact kernel correlation sum_l C^2 exp(kappa * <d_l, d_train + d_test>).

    Evaluated in log space so large kappa cannot overflow.
    """
    s = np.asarray(d_train, dtype=np.float64) + np.asarray(d_test, dtype=np.float64)
    log_sum = logsumexp(kernel.kappa * patch_dirs @ s)
    return float(np.exp(2.0 * np.log(kernel.norm_const) + log_sum))


def sg_dot_surrogate(d_train: np.ndarray, d_test: np.ndarray) -> float:
    """First-order surrogate (1 + <d_train, d_test>) / 2, in [0, 1]."""
    return float((1.0 + np.dot(d_train, d_test)) / 2.0)
