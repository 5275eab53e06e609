"""Synthetic scenes: Gaussian primitives, pinhole cameras, ground truth.

A scene is the reconstruction target and the observation generator in one:
"training photographs" are renders of the ground-truth primitives, so the
least-squares reconstruction surrogate is noiseless by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .sphere import SphericalGaussianKernel, kernel_weights_batch, normalize, unit_sphere_directions

SCENE_FORMAT_VERSION = 1

_QUAT_TOL = 1e-9


class InvalidSceneSpecError(ValueError):
    """Scene specification cannot produce a valid scene."""


class DegenerateFrameError(ValueError):
    """Camera frame construction is degenerate (coincident or parallel inputs)."""


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z), world <- camera
# ---------------------------------------------------------------------------


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    xyzw = Rotation.from_matrix(r).as_quat()
    q = np.array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]])
    return canonical_quat(q)


def canonical_quat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion with a deterministic sign (first nonzero entry > 0)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    for v in q:
        if abs(v) > 1e-12:
            return q if v > 0 else -q
    return q


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Primitive:
    """One Gaussian primitive: ellipsoidal footprint, opacity and color.

    `patch_radiances` (L, 3), when present, is the per-patch color field on
    the unit sphere; the matte color is the view-independent fallback.
    """

    mean: np.ndarray
    covariance: np.ndarray
    opacity: float
    matte_color: np.ndarray
    patch_radiances: np.ndarray | None = None

    def validate(self) -> None:
        cov = self.covariance
        if cov.shape != (3, 3) or not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric 3x3")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() <= 0:
            raise ValueError(f"covariance must be positive definite, eigenvalues {eigvals}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must lie in [0, 1], got {self.opacity}")
        if self.matte_color.min() < 0 or self.matte_color.max() > 1:
            raise ValueError("matte_color entries must lie in [0, 1]")
        if self.patch_radiances is not None:
            if self.patch_radiances.ndim != 2 or self.patch_radiances.shape[1] != 3:
                raise ValueError("patch_radiances must have shape (L, 3)")
            if self.patch_radiances.min() < 0 or self.patch_radiances.max() > 1:
                raise ValueError("patch_radiances entries must lie in [0, 1]")


@dataclass(eq=False)
class Camera:
    """Pinhole camera: intrinsics in pixels, rigid pose world <- camera.

    Camera frame convention: +x right, +y down, +z forward (the axis the
    camera looks along).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    quat: np.ndarray  # (4,) unit, (w, x, y, z)
    position: np.ndarray  # (3,)

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie strictly inside the image")
        if abs(np.linalg.norm(self.quat) - 1.0) > _QUAT_TOL:
            raise ValueError("rotation quaternion must be unit norm")

    @property
    def rotation(self) -> np.ndarray:
        """3x3 rotation matrix, world <- camera."""
        return quat_to_matrix(self.quat)

    @property
    def forward(self) -> np.ndarray:
        """Optical axis in world coordinates."""
        return self.rotation[:, 2]

    def ray_directions(self, pixel_stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions through sampled pixel centers.

        Pixels are taken every `pixel_stride`-th in row-major order.
        Returns (dirs (n, 3), flat pixel indices (n,)).
        """
        if pixel_stride < 1:
            raise ValueError("pixel_stride must be >= 1")
        flat = np.arange(self.width * self.height)[::pixel_stride]
        rows, cols = np.divmod(flat, self.width)
        u = cols + 0.5
        v = rows + 0.5
        d_cam = np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=1
        )
        d_world = d_cam @ self.rotation.T
        return normalize(d_world), flat

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns ((n, 2) pixel coords, (n,) camera depth)."""
        rel = (np.atleast_2d(points) - self.position) @ self.rotation
        z = rel[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack(
                [self.fx * rel[:, 0] / z + self.cx, self.fy * rel[:, 1] / z + self.cy], axis=1
            )
        return uv, z

    def in_frustum(self, points: np.ndarray) -> np.ndarray:
        uv, z = self.project(points)
        return (
            (z > 0)
            & (uv[:, 0] >= 0)
            & (uv[:, 0] <= self.width)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] <= self.height)
        )


@dataclass(eq=False)
class Scene:
    """Immutable after generation; safe for concurrent read."""

    primitives: list[Primitive]
    eval_cameras: list[Camera] = field(default_factory=list)
    candidate_cameras: list[Camera] = field(default_factory=list)
    seed_cameras: list[Camera] = field(default_factory=list)
    color_model_l: int | None = None
    color_model_kappa: float | None = None

    @property
    def n_primitives(self) -> int:
        return len(self.primitives)

    @property
    def view_dependent(self) -> bool:
        return self.color_model_l is not None

    def means(self) -> np.ndarray:
        return np.array([p.mean for p in self.primitives])

    def validate(self) -> None:
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        for p in self.primitives:
            p.validate()
        for cam in self.eval_cameras + self.candidate_cameras + self.seed_cameras:
            cam.validate()


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def look_at_camera(
    position: np.ndarray,
    target: np.ndarray,
    up: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
) -> Camera:
    """Camera at `position` whose optical axis points toward `target`."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)

    fwd = target - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise DegenerateFrameError("camera position coincides with the look-at target")
    z_axis = fwd / n
    x_axis = np.cross(z_axis, up)
    nx = np.linalg.norm(x_axis)
    if nx < 1e-9:
        raise DegenerateFrameError("up direction is parallel to the viewing direction")
    x_axis = x_axis / nx
    y_axis = np.cross(z_axis, x_axis)
    r = np.stack([x_axis, y_axis, z_axis], axis=1)
    cam = Camera(
        fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
        quat=matrix_to_quat(r), position=position,
    )
    cam.validate()
    return cam


@dataclass
class SceneSpec:
    """Everything needed to generate a scene deterministically."""

    n_primitives: int = 200
    bounding_box: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (-1.0, -1.0, -1.0),
        (1.0, 1.0, 1.0),
    )
    n_candidates: int = 100
    n_eval: int = 20
    n_seed: int = 10
    rng_seed: int = 0
    view_dependent: bool = False
    grid_l: int = 162
    # Artifact knobs (not part of any protocol): rendering geometry and
    # primitive statistics, expressed relative to the bounding box.
    image_width: int = 32
    image_height: int = 32
    fov_deg: float = 55.0
    shell_radii: tuple[float, float] = (2.0, 3.0)  # in bounding-sphere radii
    scale_range: tuple[float, float] = (0.04, 0.18)  # in max box extents
    opacity_range: tuple[float, float] = (0.3, 0.95)
    kappa: float = 16.0

    def validate(self) -> None:
        lo, hi = np.asarray(self.bounding_box[0]), np.asarray(self.bounding_box[1])
        if np.any(hi - lo <= 0):
            raise InvalidSceneSpecError(f"bounding box has zero or negative extent: {self.bounding_box}")
        if self.n_primitives < 1:
            raise InvalidSceneSpecError("n_primitives must be >= 1")
        if min(self.n_candidates, self.n_eval, self.n_seed) < 0:
            raise InvalidSceneSpecError("camera counts must be >= 0")
        if self.grid_l < 2:
            raise InvalidSceneSpecError("grid_l must be >= 2")
        if not (0 < self.scale_range[0] <= self.scale_range[1]):
            raise InvalidSceneSpecError("scale_range must be positive and ordered")
        if not (0 <= self.opacity_range[0] <= self.opacity_range[1] <= 1):
            raise InvalidSceneSpecError("opacity_range must lie in [0, 1] and be ordered")
        if self.image_width < 1 or self.image_height < 1:
            raise InvalidSceneSpecError("image dimensions must be positive")


def generate_scene(spec: SceneSpec) -> Scene:
    """Sample a scene: primitives inside the box, cameras on a shell.

    Pure function of the spec: identical specs give identical scenes.
    All cameras look at the box centroid, mimicking object-centric capture.
    """
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    lo = np.asarray(spec.bounding_box[0], dtype=np.float64)
    hi = np.asarray(spec.bounding_box[1], dtype=np.float64)
    centroid = (lo + hi) / 2.0
    max_extent = float(np.max(hi - lo))
    sphere_radius = float(np.linalg.norm(hi - lo)) / 2.0

    means = rng.uniform(lo, hi, size=(spec.n_primitives, 3))
    rots = Rotation.random(spec.n_primitives, random_state=rng).as_matrix()
    s_lo, s_hi = np.log(spec.scale_range[0] * max_extent), np.log(spec.scale_range[1] * max_extent)
    scales = np.exp(rng.uniform(s_lo, s_hi, size=(spec.n_primitives, 3)))
    opacities = rng.uniform(*spec.opacity_range, size=spec.n_primitives)
    colors = rng.uniform(0.0, 1.0, size=(spec.n_primitives, 3))

    radiances = None
    if spec.view_dependent:
        radiances = _smooth_radiance_fields(rng, spec)

    primitives = []
    for i in range(spec.n_primitives):
        cov = rots[i] @ np.diag(scales[i] ** 2) @ rots[i].T
        cov = (cov + cov.T) / 2.0
        primitives.append(
            Primitive(
                mean=means[i],
                covariance=cov,
                opacity=float(opacities[i]),
                matte_color=colors[i],
                patch_radiances=None if radiances is None else radiances[i],
            )
        )

    fx = 0.5 * spec.image_width / np.tan(np.deg2rad(spec.fov_deg) / 2.0)
    fy = fx

    def sample_camera() -> Camera:
        d = normalize(rng.normal(size=3))
        radius = rng.uniform(*spec.shell_radii) * sphere_radius
        pos = centroid + d * radius
        up = np.array([0.0, 1.0, 0.0])
        if abs(np.dot(d, up)) > 0.99:
            up = np.array([1.0, 0.0, 0.0])
        return look_at_camera(
            pos, centroid, up,
            fx=fx, fy=fy,
            cx=spec.image_width / 2.0, cy=spec.image_height / 2.0,
            width=spec.image_width, height=spec.image_height,
        )

    candidates = [sample_camera() for _ in range(spec.n_candidates)]
    evals = [sample_camera() for _ in range(spec.n_eval)]
    seeds = [sample_camera() for _ in range(spec.n_seed)]

    scene = Scene(
        primitives=primitives,
        eval_cameras=evals,
        candidate_cameras=candidates,
        seed_cameras=seeds,
        color_model_l=spec.grid_l if spec.view_dependent else None,
        color_model_kappa=spec.kappa if spec.view_dependent else None,
    )
    scene.validate()
    return scene


def _smooth_radiance_fields(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Per-primitive (L, 3) radiance fields, smooth over the sphere.

    Each field mixes a few random exponential lobes, is squashed into
    [0.1, 0.9] per channel, then rescaled so the kernel-weighted color
    stays within [0, 1] from every direction.
    """
    dirs = unit_sphere_directions(spec.grid_l)
    kernel = SphericalGaussianKernel.for_grid(spec.kappa, dirs)
    beta_all = kernel_weights_batch(kernel, dirs, dirs)  # (L, L) query x patch

    n_lobes = 3
    fields = np.empty((spec.n_primitives, spec.grid_l, 3))
    for i in range(spec.n_primitives):
        axes = normalize(rng.normal(size=(n_lobes, 3)))
        conc = rng.uniform(2.0, 8.0, size=n_lobes)
        amps = rng.uniform(0.0, 1.0, size=(n_lobes, 3))
        lobes = np.exp(conc[None, :] * (dirs @ axes.T - 1.0))  # (L, n_lobes), in (0, 1]
        f = lobes @ amps  # (L, 3)
        f_min, f_max = f.min(axis=0), f.max(axis=0)
        f = 0.1 + 0.8 * (f - f_min) / np.maximum(f_max - f_min, 1e-12)
        rendered_max = (beta_all @ f).max()
        if rendered_max > 0.999:
            f = f * (0.999 / rendered_max)
        fields[i] = f
    return fields


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_TRIU = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _primitive_to_dict(p: Primitive) -> dict:
    d = {
        "mean": p.mean.tolist(),
        "cov": [float(p.covariance[i, j]) for i, j in _TRIU],
        "opacity": float(p.opacity),
        "color": p.matte_color.tolist(),
    }
    if p.patch_radiances is not None:
        d["patches"] = p.patch_radiances.tolist()
    return d


def _primitive_from_dict(d: dict) -> Primitive:
    cov = np.empty((3, 3))
    for value, (i, j) in zip(d["cov"], _TRIU):
        cov[i, j] = value
        cov[j, i] = value
    patches = d.get("patches")
    return Primitive(
        mean=np.asarray(d["mean"], dtype=np.float64),
        covariance=cov,
        opacity=float(d["opacity"]),
        matte_color=np.asarray(d["color"], dtype=np.float64),
        patch_radiances=None if patches is None else np.asarray(patches, dtype=np.float64),
    )


def _camera_to_dict(c: Camera) -> dict:
    return {
        "fx": float(c.fx), "fy": float(c.fy), "cx": float(c.cx), "cy": float(c.cy),
        "w": int(c.width), "h": int(c.height),
        "quat": c.quat.tolist(), "pos": c.position.tolist(),
    }


def _camera_from_dict(d: dict) -> Camera:
    return Camera(
        fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
        width=int(d["w"]), height=int(d["h"]),
        quat=np.asarray(d["quat"], dtype=np.float64),
        position=np.asarray(d["pos"], dtype=np.float64),
    )


def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "format_version": SCENE_FORMAT_VERSION,
        "primitives": [_primitive_to_dict(p) for p in scene.primitives],
        "eval_cameras": [_camera_to_dict(c) for c in scene.eval_cameras],
        "candidate_cameras": [_camera_to_dict(c) for c in scene.candidate_cameras],
        "seed_cameras": [_camera_to_dict(c) for c in scene.seed_cameras],
        "color_model": None,
    }
    if scene.view_dependent:
        doc["color_model"] = {"l": scene.color_model_l, "kappa": scene.color_model_kappa}
    return doc


def scene_from_dict(doc: dict) -> Scene:
    version = doc.get("format_version")
    if version != SCENE_FORMAT_VERSION:
        raise ValueError(f"unsupported scene format version: {version}")
    color_model = doc.get("color_model")
    scene = Scene(
        primitives=[_primitive_from_dict(d) for d in doc["primitives"]],
        eval_cameras=[_camera_from_dict(d) for d in doc["eval_cameras"]],
        candidate_cameras=[_camera_from_dict(d) for d in doc["candidate_cameras"]],
        seed_cameras=[_camera_from_dict(d) for d in doc["seed_cameras"]],
        color_model_l=None if color_model is None else int(color_model["l"]),
        color_model_kappa=None if color_model is None else float(color_model["kappa"]),
    )
    scene.validate()
    return scene


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene)))


def load_scene(path: str | Path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
