"""Camera/LiDAR calibration, point-to-pixel projection and label splatting.

Conventions follow KITTI: ``P2`` maps rectified camera coordinates to pixels,
``Tr`` maps LiDAR coordinates to the camera frame (x right, y down, z forward).
A pixel ``(row=v, col=u)`` covers the half-open square ``[u, u+1) x [v, v+1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

IGNORE = 255


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationSet:
    cam_projection: np.ndarray  # (3, 4)
    lidar_to_cam: np.ndarray  # (3, 4)
    image_height: int
    image_width: int

    def __post_init__(self):
        P = np.asarray(self.cam_projection, dtype=np.float64)
        Tr = np.asarray(self.lidar_to_cam, dtype=np.float64)
        if P.shape != (3, 4) or Tr.shape != (3, 4):
            raise GeometryError(f"calibration matrices must be 3x4, got {P.shape} and {Tr.shape}")
        if self.image_height <= 0 or self.image_width <= 0:
            raise GeometryError(f"image size must be positive, got {self.image_height}x{self.image_width}")
        R = Tr[:, :3]
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err >= 1e-5:
            raise GeometryError(f"lidar_to_cam rotation is not orthonormal (max deviation {err:.3g})")
        object.__setattr__(self, "cam_projection", P)
        object.__setattr__(self, "lidar_to_cam", Tr)
        object.__setattr__(self, "image_height", int(self.image_height))
        object.__setattr__(self, "image_width", int(self.image_width))

    @property
    def image_size(self) -> tuple[int, int]:
        return self.image_height, self.image_width


@dataclass
class PointCloudFrame:
    positions: np.ndarray  # (p, 3) float
    intensity: np.ndarray  # (p,) float in [0, 1]
    labels: np.ndarray | None = None  # (p,) int, class id or IGNORE

    def __post_init__(self):
        self.positions = np.asarray(self.positions)
        self.intensity = np.asarray(self.intensity)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise GeometryError(f"positions must be (p, 3), got {self.positions.shape}")
        if self.intensity.shape != (len(self.positions),):
            raise GeometryError("intensity length does not match positions")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (len(self.positions),):
                raise GeometryError("labels length does not match positions")

    def __len__(self) -> int:
        return len(self.positions)

    def validate(self, num_classes: int | None = None) -> None:
        bad = np.flatnonzero(~np.isfinite(self.positions).all(axis=1))
        if bad.size:
            raise GeometryError(f"non-finite coordinates at point index {int(bad[0])}")
        if self.intensity.size and (self.intensity.min() < 0 or self.intensity.max() > 1):
            raise GeometryError("intensity outside [0, 1]")
        if num_classes is not None and self.labels is not None:
            bad = np.flatnonzero((self.labels >= num_classes) & (self.labels != IGNORE))
            if bad.size:
                raise GeometryError(
                    f"label {int(self.labels[bad[0]])} at point {int(bad[0])} exceeds K={num_classes}"
                )


@dataclass(frozen=True)
class CorrespondenceSet:
    in_fov: np.ndarray  # (p,) bool
    pixel_uv: np.ndarray  # (p, 2) continuous (u, v)
    depth: np.ndarray  # (p,) camera-frame z

    def __len__(self) -> int:
        return len(self.in_fov)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.in_fov)

    def pixel_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer (row, col) of every in-FOV point, in index order."""
        uv = self.pixel_uv[self.in_fov]
        return np.floor(uv[:, 1]).astype(np.int64), np.floor(uv[:, 0]).astype(np.int64)


def to_camera(positions: np.ndarray, calib: CalibrationSet) -> np.ndarray:
    pts = np.asarray(positions, dtype=np.float64)
    return pts @ calib.lidar_to_cam[:, :3].T + calib.lidar_to_cam[:, 3]


def project_points(cloud: PointCloudFrame, calib: CalibrationSet) -> CorrespondenceSet:
    cloud.validate()
    cam = to_camera(cloud.positions, calib)
    depth = cam[:, 2]
    front = depth > 0
    uvw = cam @ calib.cam_projection[:, :3].T + calib.cam_projection[:, 3]
    uv = np.full((len(cam), 2), np.nan)
    uv[front] = uvw[front, :2] / uvw[front, 2:3]
    with np.errstate(invalid="ignore"):
        in_fov = (
            front
            & (uv[:, 0] >= 0)
            & (uv[:, 0] < calib.image_width)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] < calib.image_height)
        )
    return CorrespondenceSet(in_fov=np.asarray(in_fov, dtype=bool), pixel_uv=uv, depth=depth)


def fov_coverage(corr: CorrespondenceSet) -> float:
    """Fraction of points that land inside the image."""
    if len(corr) == 0:
        raise GeometryError("empty point cloud: coverage undefined")
    return float(np.count_nonzero(corr.in_fov)) / len(corr)


def project_labels(cloud: PointCloudFrame, corr: CorrespondenceSet, image_size: tuple[int, int]) -> np.ndarray:
    """Splat point labels onto the image with a nearest-depth z-buffer.

    Returns an ``(H, W)`` uint8 image; pixels no point lands on are ``IGNORE``.
    """
    if cloud.labels is None:
        raise GeometryError("cloud has no labels to project")
    H, W = image_size
    out = np.full((H, W), IGNORE, dtype=np.uint8)
    idx = corr.indices
    if idx.size == 0:
        return out
    rows, cols = corr.pixel_index()
    flat = rows * W + cols
    # nearest first; stable so equal depths keep the lower point index
    order = np.lexsort((idx, corr.depth[idx], flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = order[first]
    out.reshape(-1)[flat[winners]] = cloud.labels[idx[winners]]
    return out


def invert_rigid(transform: np.ndarray) -> np.ndarray:
    R, t = transform[:, :3], transform[:, 3]
    return np.concatenate([R.T, (-R.T @ t)[:, None]], axis=1)


def compose_rigid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return the 3x4 transform applying ``b`` first, then ``a``."""
    return np.concatenate([a[:, :3] @ b[:, :3], (a[:, :3] @ b[:, 3] + a[:, 3])[:, None]], axis=1)


def backproject(uv: np.ndarray, depth: np.ndarray, calib: CalibrationSet) -> np.ndarray:
    """LiDAR-frame points whose projection is ``uv`` at camera depth ``depth``."""
    P = calib.cam_projection
    uv = np.atleast_2d(uv)
    depth = np.asarray(depth, dtype=np.float64)
    # P[:, :3] @ x + P[:, 3] = w * (u, v, 1), with x_z = depth
    n = len(uv)
    cam = np.empty((n, 3))
    for i in range(n):
        u, v = uv[i]
        A = P[:2, :3] - np.outer([u, v], P[2, :3])
        b = np.array([u, v]) * P[2, 3] - P[:2, 3]
        # fix z = depth and solve the 2x2 system for x, y
        rhs = b - A[:, 2] * depth[i]
        cam[i, :2] = np.linalg.solve(A[:, :2], rhs)
        cam[i, 2] = depth[i]
    inv = invert_rigid(calib.lidar_to_cam)
    return cam @ inv[:, :3].T + inv[:, 3]


# --- calibration text files -------------------------------------------------

def parse_calibration(text: str, image_size: tuple[int, int] | None = None) -> CalibrationSet:
    """Parse KITTI-style ``key: v1 v2 ...`` lines.

    Accepts ``Tr`` or ``Tr_velo_to_cam`` for the LiDAR transform; when
    ``R0_rect`` is present it is composed into the projection. The image size
    comes from an ``image_size: H W`` line or the ``image_size`` argument.
    """
    values: dict[str, np.ndarray] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, rest = line.split(":", 1)
        try:
            values[key.strip()] = np.array([float(x) for x in rest.split()])
        except ValueError:
            continue
    if "P2" not in values:
        raise GeometryError("calibration is missing P2")
    tr_key = "Tr" if "Tr" in values else "Tr_velo_to_cam" if "Tr_velo_to_cam" in values else None
    if tr_key is None:
        raise GeometryError("calibration is missing Tr")
    for key in ("P2", tr_key):
        if values[key].size != 12:
            raise GeometryError(f"{key} must have 12 values, got {values[key].size}")
    P = values["P2"].reshape(3, 4)
    if "R0_rect" in values:
        R0 = np.eye(4)
        R0[:3, :3] = values["R0_rect"].reshape(3, 3)
        P = P @ R0
    if "image_size" in values:
        h, w = values["image_size"].astype(int)[:2]
    elif image_size is not None:
        h, w = image_size
    else:
        raise GeometryError("image size not in calibration and not supplied")
    return CalibrationSet(P, values[tr_key].reshape(3, 4), int(h), int(w))


def load_calibration(path, image_size: tuple[int, int] | None = None) -> CalibrationSet:
    return parse_calibration(Path(path).read_text(), image_size=image_size)


def format_calibration(calib: CalibrationSet) -> str:
    def row(m):
        return " ".join(f"{x:.12e}" for x in np.asarray(m).reshape(-1))

    return (
        f"P2: {row(calib.cam_projection)}\n"
        f"Tr: {row(calib.lidar_to_cam)}\n"
        f"image_size: {calib.image_height} {calib.image_width}\n"
    )


def save_calibration(calib: CalibrationSet, path) -> None:
    Path(path).write_text(format_calibration(calib))


def pinhole_calibration(
    image_size: tuple[int, int],
    hfov_deg: float,
    position=(0.0, 0.0, 0.0),
    yaw: float = 0.0,
    pitch: float = 0.0,
) -> CalibrationSet:
    """Build a calibration for a camera at ``position`` (LiDAR frame) looking
    along yaw/pitch (radians, pitch positive up), square pixels."""
    H, W = image_size
    f = (W / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
    P = np.array([[f, 0.0, W / 2.0, 0.0], [0.0, f, H / 2.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    forward = np.array([np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), np.sin(pitch)])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])  # rows: camera axes expressed in LiDAR frame
    t = -R @ np.asarray(position, dtype=np.float64)
    return CalibrationSet(P, np.concatenate([R, t[:, None]], axis=1), H, W)
