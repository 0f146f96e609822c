"""Core domain types and low-level numeric kernels.

Everything here is an immutable value type after construction and can be
shared read-only across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

# Spherical-harmonics basis constants, degrees 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.3153915652525205,
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

QUAT_NORM_TOL = 1e-6


def _as_float_array(x, shape, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix from a unit quaternion in (w, x, y, z) order.

    Supports a single quaternion (4,) or a batch (N, 4).
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    rot[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    rot[:, 0, 1] = 2.0 * (x * y - w * z)
    rot[:, 0, 2] = 2.0 * (x * z + w * y)
    rot[:, 1, 0] = 2.0 * (x * y + w * z)
    rot[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    rot[:, 1, 2] = 2.0 * (y * z - w * x)
    rot[:, 2, 0] = 2.0 * (x * z - w * y)
    rot[:, 2, 1] = 2.0 * (y * z + w * x)
    rot[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return rot[0] if single else rot


def quat_multiply(q1, q2) -> np.ndarray:
    """Hamilton product q1 * q2, both in (w, x, y, z) order."""
    w1, x1, y1, z1 = np.asarray(q1, dtype=np.float64)
    w2, x2, y2, z2 = np.asarray(q2, dtype=np.float64)
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def build_covariance(scale, rotation) -> np.ndarray:
    """Reconstruct the 3x3 covariance R diag(scale)^2 R^T.

    The factored storage keeps the result symmetric positive definite by
    construction for any positive scale and unit quaternion.
    """
    scale = np.asarray(scale, dtype=np.float64)
    rotation = np.asarray(rotation, dtype=np.float64)
    if scale.shape != (3,) or rotation.shape != (4,):
        raise ValueError("scale must be a 3-vector and rotation a quaternion")
    if not (np.all(np.isfinite(scale)) and np.all(np.isfinite(rotation))):
        raise ValueError("non-finite covariance factors")
    if np.any(scale <= 0):
        raise ValueError("scale components must be positive")
    if abs(np.linalg.norm(rotation) - 1.0) > QUAT_NORM_TOL:
        raise ValueError("rotation quaternion must be unit length")
    rot = quat_to_rotation(rotation)
    m = rot * scale[None, :]
    cov = m @ m.T
    # enforce exact symmetry against rounding
    return (cov + cov.T) * 0.5


def eval_sh(coeffs, view_dir, degree: int) -> np.ndarray:
    """Evaluate RGB from SH coefficients along a view direction.

    ``coeffs`` has shape ((degree+1)^2, 3) for a single Gaussian or
    (N, (degree+1)^2, 3) for a batch; ``view_dir`` is a unit 3-vector or an
    (N, 3) batch. Convention: color = clamp(0.5 + C0*c0 + higher, 0, 1).
    At degree 0 the output is independent of direction.
    """
    if degree < 0 or degree > MAX_SH_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    single = coeffs.ndim == 2
    coeffs = coeffs[None] if single else coeffs
    n_basis = (degree + 1) ** 2
    if coeffs.ndim != 3 or coeffs.shape[1] != n_basis or coeffs.shape[2] != 3:
        raise ValueError(
            f"coeffs must have shape (N, {n_basis}, 3) for degree {degree}, got {coeffs.shape}"
        )
    dirs = np.asarray(view_dir, dtype=np.float64)
    dirs = dirs[None] if dirs.ndim == 1 else dirs

    result = SH_C0 * coeffs[:, 0, :]
    if degree > 0:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        result = (
            result
            - SH_C1 * y * coeffs[:, 1, :]
            + SH_C1 * z * coeffs[:, 2, :]
            - SH_C1 * x * coeffs[:, 3, :]
        )
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        result = (
            result
            + SH_C2[0] * xy * coeffs[:, 4, :]
            + SH_C2[1] * yz * coeffs[:, 5, :]
            + SH_C2[2] * (2.0 * zz - xx - yy) * coeffs[:, 6, :]
            + SH_C2[3] * xz * coeffs[:, 7, :]
            + SH_C2[4] * (xx - yy) * coeffs[:, 8, :]
        )
    if degree > 2:
        result = (
            result
            + SH_C3[0] * y * (3.0 * xx - yy) * coeffs[:, 9, :]
            + SH_C3[1] * xy * z * coeffs[:, 10, :]
            + SH_C3[2] * y * (4.0 * zz - xx - yy) * coeffs[:, 11, :]
            + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * coeffs[:, 12, :]
            + SH_C3[4] * x * (4.0 * zz - xx - yy) * coeffs[:, 13, :]
            + SH_C3[5] * z * (xx - yy) * coeffs[:, 14, :]
            + SH_C3[6] * x * (xx - 3.0 * yy) * coeffs[:, 15, :]
        )
    out = np.clip(result + 0.5, 0.0, 1.0)
    return out[0] if single else out


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian with an attached semantic bank index.

    ``semantic_index`` is a discrete integer; 0 means background/none. The
    dense one-hot vector it stands for is materialized only inside the
    rasterizer.
    """

    position: np.ndarray
    opacity: float
    scale: np.ndarray
    rotation: np.ndarray
    sh_color: np.ndarray
    semantic_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", _as_float_array(self.position, (3,), "position"))
        object.__setattr__(self, "scale", _as_float_array(self.scale, (3,), "scale"))
        object.__setattr__(self, "rotation", _as_float_array(self.rotation, (4,), "rotation"))
        sh = np.asarray(self.sh_color, dtype=np.float64)
        if sh.ndim != 2 or sh.shape[1] != 3 or sh.shape[0] not in (1, 4, 9, 16):
            raise ValueError(f"sh_color must be ((deg+1)^2, 3) with deg in 0..3, got {sh.shape}")
        if not np.all(np.isfinite(sh)):
            raise ValueError("sh_color must be finite")
        object.__setattr__(self, "sh_color", sh)
        if not np.isfinite(self.opacity) or not (0.0 <= self.opacity <= 1.0):
            raise ValueError(f"opacity must be in [0, 1], got {self.opacity}")
        if np.any(self.scale <= 0):
            raise ValueError("scale components must be positive")
        if abs(np.linalg.norm(self.rotation) - 1.0) > QUAT_NORM_TOL:
            raise ValueError("rotation quaternion must be unit length")
        if int(self.semantic_index) < 0:
            raise ValueError("semantic_index must be non-negative")
        object.__setattr__(self, "semantic_index", int(self.semantic_index))

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh_color.shape[0])) - 1

    def covariance(self) -> np.ndarray:
        return build_covariance(self.scale, self.rotation)


class GaussianCloud:
    """Struct-of-arrays container for N Gaussians.

    This is the batch representation the rasterizer, lifter, and file I/O
    operate on; ``GaussianPrimitive`` is the per-element value type. All SH
    arrays in one cloud share a degree.
    """

    __slots__ = ("positions", "opacities", "scales", "rotations", "sh", "semantic_indices")

    def __init__(self, positions, opacities, scales, rotations, sh, semantic_indices=None):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64)
        n = self.positions.shape[0]
        if semantic_indices is None:
            semantic_indices = np.zeros(n, dtype=np.int32)
        self.semantic_indices = np.ascontiguousarray(semantic_indices, dtype=np.int32)
        self._validate()

    def _validate(self):
        n = len(self)
        if self.positions.shape != (n, 3):
            raise ValueError("positions must be (N, 3)")
        if self.opacities.shape != (n,):
            raise ValueError("opacities must be (N,)")
        if self.scales.shape != (n, 3):
            raise ValueError("scales must be (N, 3)")
        if self.rotations.shape != (n, 4):
            raise ValueError("rotations must be (N, 4)")
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise ValueError("sh must be (N, (deg+1)^2, 3)")
        if self.sh.shape[1] not in (1, 4, 9, 16):
            raise ValueError(f"unsupported SH basis size {self.sh.shape[1]}")
        if self.semantic_indices.shape != (n,):
            raise ValueError("semantic_indices must be (N,)")
        for name in ("positions", "opacities", "scales", "rotations", "sh"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if n == 0:
            return
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise ValueError("opacities must be in [0, 1]")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
            raise ValueError("rotation quaternions must be unit length")
        if np.any(self.semantic_indices < 0):
            raise ValueError("semantic indices must be non-negative")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.positions[i],
            opacity=float(self.opacities[i]),
            scale=self.scales[i],
            rotation=self.rotations[i],
            sh_color=self.sh[i],
            semantic_index=int(self.semantic_indices[i]),
        )

    def __iter__(self) -> Iterator[GaussianPrimitive]:
        return (self[i] for i in range(len(self)))

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh.shape[1])) - 1

    def with_semantic_indices(self, indices) -> "GaussianCloud":
        return GaussianCloud(
            self.positions, self.opacities, self.scales, self.rotations, self.sh, indices
        )

    @classmethod
    def empty(cls, sh_basis: int = 1) -> "GaussianCloud":
        return cls(
            np.zeros((0, 3)),
            np.zeros(0),
            np.zeros((0, 3)),
            np.zeros((0, 4)),
            np.zeros((0, sh_basis, 3)),
        )

    @classmethod
    def from_primitives(cls, primitives: Sequence[GaussianPrimitive]) -> "GaussianCloud":
        prims = list(primitives)
        if not prims:
            return cls.empty()
        basis = prims[0].sh_color.shape[0]
        if any(p.sh_color.shape[0] != basis for p in prims):
            raise ValueError("all primitives in a cloud must share an SH degree")
        return cls(
            np.stack([p.position for p in prims]),
            np.array([p.opacity for p in prims]),
            np.stack([p.scale for p in prims]),
            np.stack([p.rotation for p in prims]),
            np.stack([p.sh_color for p in prims]),
            np.array([p.semantic_index for p in prims], dtype=np.int32),
        )


def as_cloud(gaussians) -> GaussianCloud:
    """Coerce a GaussianCloud or a sequence of primitives to a cloud."""
    if isinstance(gaussians, GaussianCloud):
        return gaussians
    return GaussianCloud.from_primitives(gaussians)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: 4x4 world-to-camera rigid transform plus intrinsics.

    Pixel (row, col) is sampled at continuous image coordinates
    (col + 0.5, row + 0.5); a point on the optical axis projects to (cx, cy).
    """

    world_to_camera: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        w2c = _as_float_array(self.world_to_camera, (4, 4), "world_to_camera")
        object.__setattr__(self, "world_to_camera", w2c)
        rot = w2c[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise ValueError("world_to_camera rotation block must be orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("require 0 < near < far")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) world points into camera coordinates."""
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project (N, 3) world points; returns (pixel_xy (N, 2), depth (N,))."""
        cam = self.to_camera(np.atleast_2d(points))
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = self.fx * cam[:, 0] / z + self.cx
            py = self.fy * cam[:, 1] / z + self.cy
        return np.stack([px, py], axis=1), z


@dataclass(frozen=True)
class RenderBuffers:
    """Output of one render: color, blended semantic weights, residual T.

    ``semantic`` is None for color-only renders (bank size 0); otherwise it
    is H x W x M with the per-pixel blended one-hot weights.
    """

    color: np.ndarray
    semantic: np.ndarray | None
    transmittance: np.ndarray

    def validate(self, tol: float = 1e-6) -> None:
        h, w, _ = self.color.shape
        if not np.all(np.isfinite(self.color)):
            raise ValueError("color buffer has non-finite entries")
        if not np.all(np.isfinite(self.transmittance)):
            raise ValueError("transmittance buffer has non-finite entries")
        if self.transmittance.shape != (h, w):
            raise ValueError("transmittance shape mismatch")
        if np.any(self.color < -tol) or np.any(self.color > 1 + tol):
            raise ValueError("color out of [0, 1]")
        if np.any(self.transmittance < -tol) or np.any(self.transmittance > 1 + tol):
            raise ValueError("transmittance out of [0, 1]")
        if self.semantic is not None:
            if self.semantic.shape[:2] != (h, w):
                raise ValueError("semantic shape mismatch")
            if not np.all(np.isfinite(self.semantic)):
                raise ValueError("semantic buffer has non-finite entries")
            if np.any(self.semantic < -tol) or np.any(self.semantic > 1 + tol):
                raise ValueError("semantic weights out of [0, 1]")
            total = self.semantic.sum(axis=2) + self.transmittance
            if np.any(total > 1 + tol):
                raise ValueError("semantic weights plus transmittance exceed 1")
