"""Scene representation: Gaussian clouds, camera poses, spherical-harmonics color.

A scene is a flat array of anisotropic 3D Gaussians. Arrays are
struct-of-arrays numpy (float64) so the renderer can vectorize; the index of a
Gaussian in the cloud is its ID everywhere else in the library (the pixel
cache tags depend on IDs staying stable for the lifetime of a loaded cloud).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

# Real spherical-harmonics basis constants, degrees 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3


class SceneError(ValueError):
    """Invalid scene data (bad field values, malformed spec)."""


def sh_degree_from_coeff_count(n_coeffs: int) -> int:
    """Map a coefficient count (L+1)^2 back to the degree L, or raise."""
    degree = int(round(np.sqrt(n_coeffs))) - 1
    if degree < 0 or degree > MAX_SH_DEGREE or (degree + 1) ** 2 != n_coeffs:
        raise SceneError(
            f"sh coefficient count {n_coeffs} is not (L+1)^2 for a degree L in 0..{MAX_SH_DEGREE}"
        )
    return degree


@dataclass
class Gaussian:
    """One anisotropic Gaussian primitive.

    scale holds per-axis standard deviations (world units, strictly positive);
    rotation is a unit quaternion in (w, x, y, z) order; sh_coeffs is an
    ((L+1)^2, 3) array of spherical-harmonics color coefficients.
    """

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh_coeffs: np.ndarray

    def validate(self) -> None:
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise SceneError(f"quaternion norm {np.linalg.norm(self.rotation)} not within 1e-6 of 1")
        if not np.all(self.scale > 0):
            raise SceneError(f"scale components must be strictly positive, got {self.scale}")
        if not (0.0 <= self.opacity <= 1.0):
            raise SceneError(f"opacity {self.opacity} outside [0, 1]")
        sh_degree_from_coeff_count(self.sh_coeffs.shape[0])


class GaussianCloud:
    """A dense array of Gaussians; a Gaussian's ID is its array index."""

    def __init__(self, positions, rotations, scales, opacities, sh_coeffs):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64).reshape(n)
        self.sh_coeffs = np.ascontiguousarray(sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != 3:
            raise SceneError(f"sh_coeffs must have shape (n, (L+1)^2, 3), got {self.sh_coeffs.shape}")
        self.sh_degree = sh_degree_from_coeff_count(self.sh_coeffs.shape[1])

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            scale=self.scales[i].copy(),
            opacity=float(self.opacities[i]),
            sh_coeffs=self.sh_coeffs[i].copy(),
        )

    def validate(self) -> None:
        """Check the per-Gaussian invariants over the whole cloud."""
        norms = np.linalg.norm(self.rotations, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-6):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise SceneError(f"gaussian {bad}: quaternion norm {norms[bad]} not within 1e-6 of 1")
        if not np.all(self.scales > 0):
            bad = int(np.argwhere(~np.all(self.scales > 0, axis=1))[0, 0])
            raise SceneError(f"gaussian {bad}: non-positive scale {self.scales[bad]}")
        if not (np.all(self.opacities >= 0.0) and np.all(self.opacities <= 1.0)):
            bad = int(np.argwhere((self.opacities < 0) | (self.opacities > 1))[0, 0])
            raise SceneError(f"gaussian {bad}: opacity {self.opacities[bad]} outside [0, 1]")


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(n, 4) quaternions in (w, x, y, z) order -> (n, 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = q.reshape(-1, 4)
    mats = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
    return mats[0] if single else mats


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass
class CameraPose:
    """Pinhole camera: position + orientation (camera-to-world, wxyz quaternion).

    Camera space looks down +z; pixel (u, v) = (fx*x/z + cx, fy*y/z + cy).
    """

    position: np.ndarray
    orientation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(self.orientation)
        if norm == 0:
            raise SceneError("camera orientation quaternion has zero norm")
        self.orientation = self.orientation / norm
        if not (self.near > 0 and self.far > self.near):
            raise SceneError(f"require 0 < near < far, got near={self.near} far={self.far}")
        if self.width <= 0 or self.height <= 0:
            raise SceneError(f"image size must be positive, got {self.width}x{self.height}")

    def rotation_c2w(self) -> np.ndarray:
        return quat_to_rotmat(self.orientation)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform (n, 3) world points into camera space."""
        r = self.rotation_c2w()
        return (np.atleast_2d(points) - self.position) @ r

    def with_image(self, width: int, height: int, cx: float, cy: float) -> "CameraPose":
        return replace(self, width=width, height=height, cx=cx, cy=cy)


def eval_sh_colors(sh_coeffs: np.ndarray, view_dirs: np.ndarray) -> np.ndarray:
    """Evaluate SH color for (n, m, 3) coefficients at (n, 3) unit directions.

    Returns (n, 3) RGB = clamp(0, sum_lm c_lm * Y_lm(dir) + 0.5). The degree is
    taken from the coefficient count m = (L+1)^2.
    """
    sh = np.asarray(sh_coeffs, dtype=np.float64)
    dirs = np.asarray(view_dirs, dtype=np.float64)
    degree = sh_degree_from_coeff_count(sh.shape[1])

    result = SH_C0 * sh[:, 0, :]
    if degree >= 1:
        x = dirs[:, 0:1]
        y = dirs[:, 1:2]
        z = dirs[:, 2:3]
        result = result - SH_C1 * y * sh[:, 1, :] + SH_C1 * z * sh[:, 2, :] - SH_C1 * x * sh[:, 3, :]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        result = (
            result
            + SH_C2[0] * xy * sh[:, 4, :]
            + SH_C2[1] * yz * sh[:, 5, :]
            + SH_C2[2] * (2.0 * zz - xx - yy) * sh[:, 6, :]
            + SH_C2[3] * xz * sh[:, 7, :]
            + SH_C2[4] * (xx - yy) * sh[:, 8, :]
        )
    if degree >= 3:
        result = (
            result
            + SH_C3[0] * y * (3.0 * xx - yy) * sh[:, 9, :]
            + SH_C3[1] * xy * z * sh[:, 10, :]
            + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[:, 11, :]
            + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[:, 12, :]
            + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[:, 13, :]
            + SH_C3[5] * z * (xx - yy) * sh[:, 14, :]
            + SH_C3[6] * x * (xx - 3.0 * yy) * sh[:, 15, :]
        )
    return np.maximum(result + 0.5, 0.0)


def eval_sh_color(g: Gaussian, view_dir: np.ndarray) -> np.ndarray:
    """SH color of one Gaussian for a normalized view direction."""
    return eval_sh_colors(g.sh_coeffs[None, :, :], np.asarray(view_dir, dtype=np.float64)[None, :])[0]


@dataclass
class SceneSpec:
    """Parameters for a procedural desk-scale scene.

    extent is the half-width of the cube the positions are drawn from,
    centered on `center`. scale_range and opacity_range are inclusive
    uniform sampling bounds.
    """

    count: int
    extent: float = 1.0
    scale_range: tuple[float, float] = (0.02, 0.1)
    opacity_range: tuple[float, float] = (0.3, 1.0)
    sh_degree: int = 1
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        if self.count < 1:
            raise SceneError(f"count must be >= 1, got {self.count}")
        if self.extent <= 0:
            raise SceneError("extent must be positive")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise SceneError(f"bad scale_range {self.scale_range}")
        lo, hi = self.opacity_range
        if not (0 <= lo <= hi <= 1):
            raise SceneError(f"bad opacity_range {self.opacity_range}")
        if not (0 <= self.sh_degree <= MAX_SH_DEGREE):
            raise SceneError(f"sh_degree must be in 0..{MAX_SH_DEGREE}")

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        spec = SceneSpec(
            count=int(d["count"]),
            extent=float(d.get("extent", 1.0)),
            scale_range=tuple(d.get("scale_range", (0.02, 0.1))),
            opacity_range=tuple(d.get("opacity_range", (0.3, 1.0))),
            sh_degree=int(d.get("sh_degree", 1)),
            center=tuple(d.get("center", (0.0, 0.0, 0.0))),
        )
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "extent": self.extent,
            "scale_range": list(self.scale_range),
            "opacity_range": list(self.opacity_range),
            "sh_degree": self.sh_degree,
            "center": list(self.center),
        }


def load_scene_spec(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return SceneSpec.from_dict(json.load(fh))


def generate_synthetic_cloud(spec: SceneSpec, seed: int) -> GaussianCloud:
    """Draw a reproducible random cloud from the spec.

    Uses the Philox counter-based generator so the same (spec, seed) produces
    the same cloud on every run and platform.
    """
    spec.validate()
    rng = np.random.Generator(np.random.Philox(seed))
    n = spec.count

    center = np.asarray(spec.center, dtype=np.float64)
    positions = center + rng.uniform(-spec.extent, spec.extent, size=(n, 3))

    quats = rng.normal(size=(n, 4))
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    degenerate = norms[:, 0] < 1e-12
    quats[degenerate] = (1.0, 0.0, 0.0, 0.0)
    norms[degenerate] = 1.0
    rotations = quats / norms

    scales = rng.uniform(spec.scale_range[0], spec.scale_range[1], size=(n, 3))
    opacities = rng.uniform(spec.opacity_range[0], spec.opacity_range[1], size=n)

    m = (spec.sh_degree + 1) ** 2
    sh = np.zeros((n, m, 3))
    sh[:, 0, :] = rng.uniform(-1.5, 1.5, size=(n, 3))
    if m > 1:
        sh[:, 1:, :] = rng.uniform(-0.25, 0.25, size=(n, m - 1, 3))

    cloud = GaussianCloud(positions, rotations, scales, opacities, sh)
    cloud.validate()
    return cloud
