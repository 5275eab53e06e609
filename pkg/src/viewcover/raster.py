"""Ray-cast compositor over Gaussian primitives.

Produces per-pixel termination-probability rows (compositing weights),
color renders, and single-channel metric renders. The per-primitive
response along a ray is evaluated at the ray point of minimum Mahalanobis
distance to the primitive, a standard desk-scale splatting surrogate.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import Camera, Scene
from .sphere import SphericalGaussianKernel, kernel_weights_batch, normalize, unit_sphere_directions

ALPHA_CUTOFF = 1e-4

RAW = "raw"
UNIT_L2 = "unit_l2"
UNIT_L1_BG = "unit_l1_with_background"
NORM_MODES = (RAW, UNIT_L2, UNIT_L1_BG)


@dataclass(eq=False)
class RaySample:
    """One primitive's response on one ray, in depth order."""

    primitive_index: int
    depth: float
    alpha: float


@dataclass(eq=False)
class WeightRow:
    """Sparse compositing-weight row for one ray.

    raw mode keeps the transmittance-chain weights (sum <= 1); unit_l2
    rescales to unit Euclidean norm (empty rows stay empty and are
    flagged); unit_l1_with_background keeps raw weights and accounts the
    remainder 1 - sum(w) to the background.
    """

    indices: np.ndarray
    weights: np.ndarray
    norm_mode: str = RAW

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0

    @property
    def weight_sum(self) -> float:
        return float(self.weights.sum())

    @property
    def background_weight(self) -> float:
        if self.norm_mode != UNIT_L1_BG:
            raise ValueError("background weight is only defined for unit_l1_with_background rows")
        return 1.0 - self.weight_sum

    def normalized(self, norm_mode: str) -> "WeightRow":
        if self.norm_mode != RAW:
            raise ValueError("can only renormalize raw rows")
        if norm_mode not in NORM_MODES:
            raise ValueError(f"unknown norm mode: {norm_mode}")
        if norm_mode == UNIT_L2 and not self.is_empty:
            return WeightRow(self.indices, self.weights / np.linalg.norm(self.weights), UNIT_L2)
        return WeightRow(self.indices, self.weights.copy(), norm_mode)

    def dense(self, n_primitives: int) -> np.ndarray:
        out = np.zeros(n_primitives)
        out[self.indices] = self.weights
        return out


@dataclass(eq=False)
class WeightMatrix:
    """Stack of weight rows; empty rows are dropped but counted."""

    rows: list[WeightRow]
    n_primitives: int
    n_dropped: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.rows), self.n_primitives))
        for k, row in enumerate(self.rows):
            out[k, row.indices] = row.weights
        return out

    def column_sq_norms(self) -> np.ndarray:
        out = np.zeros(self.n_primitives)
        for row in self.rows:
            np.add.at(out, row.indices, row.weights**2)
        return out


# ---------------------------------------------------------------------------
# Scene packing
# ---------------------------------------------------------------------------

_PACKED: "weakref.WeakKeyDictionary[Scene, dict]" = weakref.WeakKeyDictionary()


def _packed(scene: Scene) -> dict:
    cached = _PACKED.get(scene)
    if cached is None:
        covs = np.stack([p.covariance for p in scene.primitives])
        cached = {
            "means": np.stack([p.mean for p in scene.primitives]),
            "inv_covs": np.linalg.inv(covs),
            "opacities": np.array([p.opacity for p in scene.primitives]),
            "colors": np.stack([p.matte_color for p in scene.primitives]),
        }
        if scene.view_dependent:
            dirs = unit_sphere_directions(scene.color_model_l)
            cached["patch_dirs"] = dirs
            cached["kernel"] = SphericalGaussianKernel.for_grid(scene.color_model_kappa, dirs)
            cached["radiances"] = np.stack([p.patch_radiances for p in scene.primitives])
        _PACKED[scene] = cached
    return cached


# ---------------------------------------------------------------------------
# Compositing
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PixelComposite:
    """Raw compositing weights for a batch of rays, in sparse triplet form.

    Entries are sorted by (ray, depth); `ray_ids`/`prim_ids`/`weights` are
    parallel arrays, `weight_sums[r]` is the total weight of ray r.
    """

    ray_ids: np.ndarray
    prim_ids: np.ndarray
    weights: np.ndarray
    n_rays: int
    n_primitives: int
    pixel_indices: np.ndarray | None = None  # flat pixel index per ray

    @property
    def weight_sums(self) -> np.ndarray:
        return np.bincount(self.ray_ids, weights=self.weights, minlength=self.n_rays)

    def row(self, r: int) -> WeightRow:
        sel = self.ray_ids == r
        return WeightRow(self.prim_ids[sel].copy(), self.weights[sel].copy(), RAW)

    def rows(self) -> list[WeightRow]:
        splits = np.searchsorted(self.ray_ids, np.arange(1, self.n_rays))
        idx_parts = np.split(self.prim_ids, splits)
        w_parts = np.split(self.weights, splits)
        return [WeightRow(i, w, RAW) for i, w in zip(idx_parts, w_parts)]

    def composite_scores(self, scores: np.ndarray, background: float = 0.0) -> np.ndarray:
        """Per-ray sum(w_i * s_i) + (1 - sum(w_i)) * background."""
        vals = np.bincount(
            self.ray_ids, weights=self.weights * scores[self.prim_ids], minlength=self.n_rays
        )
        if background != 0.0:
            vals = vals + (1.0 - self.weight_sums) * background
        return vals


def composite_rays(
    scene: Scene, origin: np.ndarray, directions: np.ndarray, chunk: int = 8192
) -> PixelComposite:
    """Composite a batch of rays from one origin against the whole scene.

    For each ray and primitive, alpha = opacity * exp(-m^2 / 2) at the
    ray's closest point in Mahalanobis distance; weights follow the
    transmittance chain w_i = alpha_i * prod_{j<i} (1 - alpha_j) in depth
    order. Primitives behind the origin or with alpha < ALPHA_CUTOFF are
    omitted.
    """
    pk = _packed(scene)
    means, inv_covs, opacities = pk["means"], pk["inv_covs"], pk["opacities"]
    origin = np.asarray(origin, dtype=np.float64)
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    n_rays = directions.shape[0]

    ray_parts, prim_parts, w_parts = [], [], []
    for start in range(0, n_rays, chunk):
        d = directions[start : start + chunk]
        ad = np.einsum("pij,rj->rpi", inv_covs, d)
        denom = np.einsum("rpi,ri->rp", ad, d)
        numer = np.einsum("rpi,pi->rp", ad, means - origin)
        t = numer / denom
        delta = origin + t[..., None] * d[:, None, :] - means
        m2 = np.einsum("rpi,pij,rpj->rp", delta, inv_covs, delta)
        alpha = opacities * np.exp(-0.5 * np.maximum(m2, 0.0))
        valid = (t > 1e-9) & (alpha >= ALPHA_CUTOFF)

        order = np.argsort(np.where(valid, t, np.inf), axis=1, kind="stable")
        alpha_sorted = np.take_along_axis(np.where(valid, alpha, 0.0), order, axis=1)
        trans = np.cumprod(1.0 - alpha_sorted, axis=1)
        trans = np.concatenate([np.ones((alpha_sorted.shape[0], 1)), trans[:, :-1]], axis=1)
        w = trans * alpha_sorted

        keep = np.take_along_axis(valid, order, axis=1) & (w > 0)
        rr, cc = np.nonzero(keep)
        ray_parts.append(rr + start)
        prim_parts.append(order[rr, cc])
        w_parts.append(w[rr, cc])

    return PixelComposite(
        ray_ids=np.concatenate(ray_parts) if ray_parts else np.empty(0, dtype=np.int64),
        prim_ids=np.concatenate(prim_parts) if prim_parts else np.empty(0, dtype=np.int64),
        weights=np.concatenate(w_parts) if w_parts else np.empty(0),
        n_rays=n_rays,
        n_primitives=scene.n_primitives,
    )


def ray_samples(scene: Scene, origin: np.ndarray, direction: np.ndarray) -> list[RaySample]:
    """Depth-ordered per-primitive responses for a single ray."""
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("ray direction must be unit norm")
    pk = _packed(scene)
    means, inv_covs, opacities = pk["means"], pk["inv_covs"], pk["opacities"]
    origin = np.asarray(origin, dtype=np.float64)

    samples = []
    for i in range(scene.n_primitives):
        a = inv_covs[i]
        denom = direction @ a @ direction
        t = (direction @ a @ (means[i] - origin)) / denom
        if t <= 1e-9:
            continue
        delta = origin + t * direction - means[i]
        alpha = opacities[i] * np.exp(-0.5 * max(delta @ a @ delta, 0.0))
        if alpha >= ALPHA_CUTOFF:
            samples.append(RaySample(primitive_index=i, depth=float(t), alpha=float(alpha)))
    samples.sort(key=lambda s: s.depth)
    return samples


def composite_ray(scene: Scene, origin: np.ndarray, direction: np.ndarray) -> WeightRow:
    """Raw weight row for a single ray (transmittance chain over samples)."""
    samples = ray_samples(scene, origin, direction)
    indices, weights = [], []
    trans = 1.0
    for s in samples:
        w = trans * s.alpha
        if w > 0:
            indices.append(s.primitive_index)
            weights.append(w)
        trans *= 1.0 - s.alpha
    return WeightRow(np.array(indices, dtype=np.int64), np.array(weights), RAW)


def composite_camera(scene: Scene, camera: Camera, pixel_stride: int = 1) -> PixelComposite:
    """Composite every `pixel_stride`-th pixel of a camera."""
    dirs, flat = camera.ray_directions(pixel_stride)
    pc = composite_rays(scene, camera.position, dirs)
    pc.pixel_indices = flat
    return pc


def primitive_view_colors(scene: Scene, camera: Camera) -> np.ndarray:
    """(P, 3) per-primitive colors as seen from `camera`.

    Matte scenes return the matte colors; view-dependent scenes evaluate
    the kernel-weighted patch radiance field at the per-primitive viewing
    direction (one direction per camera-primitive pair).
    """
    pk = _packed(scene)
    if not scene.view_dependent:
        return pk["colors"]
    view_dirs = normalize(pk["means"] - camera.position)
    betas = kernel_weights_batch(pk["kernel"], pk["patch_dirs"], view_dirs)  # (P, L)
    return np.einsum("pl,plc->pc", betas, pk["radiances"])


def render_color(scene: Scene, camera: Camera) -> np.ndarray:
    """(H, W, 3) color render in [0, 1], composited over a black background."""
    camera.validate()
    pc = composite_camera(scene, camera)
    colors = primitive_view_colors(scene, camera)
    img = np.zeros((camera.height * camera.width, 3))
    for c in range(3):
        img[:, c] = pc.composite_scores(colors[:, c])
    return np.clip(img, 0.0, 1.0).reshape(camera.height, camera.width, 3)


def render_metric(
    scene: Scene, camera: Camera, per_primitive_score: np.ndarray, background: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Metric render: per pixel sum(w_i s_i) + (1 - sum(w_i)) * b.

    Raw L1-style compositing (weights are not renormalized). Returns the
    (H, W) image in [0, 1] and the boolean alpha mask (sum of weights > 0).
    """
    per_primitive_score = np.asarray(per_primitive_score, dtype=np.float64)
    if per_primitive_score.shape != (scene.n_primitives,):
        raise ValueError("per-primitive score must have one entry per primitive")
    if per_primitive_score.min() < 0 or per_primitive_score.max() > 1:
        raise ValueError("per-primitive scores must lie in [0, 1]")
    if background not in (0, 1):
        raise ValueError("background must be 0 or 1")
    pc = composite_camera(scene, camera)
    vals = pc.composite_scores(per_primitive_score, background=float(background))
    mask = pc.weight_sums > 0
    img = np.clip(vals, 0.0, 1.0).reshape(camera.height, camera.width)
    return img, mask.reshape(camera.height, camera.width)


def assemble_weight_matrix(
    scene: Scene, cameras: list[Camera], norm_mode: str = UNIT_L2, pixel_stride: int = 1
) -> WeightMatrix:
    """One row per sampled pixel per camera, normalized per `norm_mode`.

    Rays that hit nothing produce no row (a zero row carries no Gram
    information and cannot be unit-normalized); the drop count is kept.
    """
    if norm_mode not in NORM_MODES:
        raise ValueError(f"unknown norm mode: {norm_mode}")
    rows: list[WeightRow] = []
    dropped = 0
    for cam in cameras:
        for row in composite_camera(scene, cam, pixel_stride).rows():
            if row.is_empty:
                dropped += 1
            else:
                rows.append(row.normalized(norm_mode))
    return WeightMatrix(rows=rows, n_primitives=scene.n_primitives, n_dropped=dropped)


def visible_primitives(
    scene: Scene,
    camera: Camera,
    occlusion_aware: bool = True,
    pixel_stride: int = 1,
    weight_cutoff: float = ALPHA_CUTOFF,
) -> np.ndarray:
    """Indices of primitives this camera observes.

    Occlusion-aware visibility requires the primitive center inside the
    frustum AND a composited weight above `weight_cutoff` in at least one
    sampled pixel; otherwise the frustum test alone decides (which
    over-marks occluded primitives).
    """
    pk = _packed(scene)
    in_frustum = camera.in_frustum(pk["means"])
    if not occlusion_aware:
        return np.nonzero(in_frustum)[0]
    pc = composite_camera(scene, camera, pixel_stride)
    max_w = np.zeros(scene.n_primitives)
    np.maximum.at(max_w, pc.prim_ids, pc.weights)
    return np.nonzero(in_frustum & (max_w > weight_cutoff))[0]


# ---------------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------------


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Binary PGM (P5, 8-bit, row-major) from a [0, 1] grayscale image."""
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Binary PPM (P6, 8-bit) from a [0, 1] RGB image."""
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def write_pfm(path: str | Path, image: np.ndarray) -> None:
    """32-bit float PFM (grayscale), little-endian, for lossless inspection."""
    data = image.astype(np.float32)
    with open(path, "wb") as f:
        f.write(f"Pf\n{data.shape[1]} {data.shape[0]}\n-1.0\n".encode())
        # PFM stores rows bottom-to-top.
        f.write(data[::-1].tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read back a binary PGM written by write_pgm, as [0, 1] floats."""
    raw = Path(path).read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = map(int, dims.split())
    scale = float(int(maxval))
    data = np.frombuffer(rest[: w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / scale


def read_pfm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, scale, rest = raw.split(b"\n", 3)
    if magic != b"Pf":
        raise ValueError("not a grayscale PFM file")
    w, h = map(int, dims.split())
    dtype = "<f4" if float(scale) < 0 else ">f4"
    data = np.frombuffer(rest[: w * h * 4], dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float64)
