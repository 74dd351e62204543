"""Point cloud / label / image I/O, dataset manifests, a synthetic paired-scene
generator and point cloud augmentations.

On-disk layout (KITTI object-detection style, one file per frame)::

    <root>/velodyne/<frame>.bin     float32 records [x, y, z, intensity]
    <root>/labels/<frame>.label     uint32 words, semantic class in low 16 bits
    <root>/image_2/<frame>.png      8-bit RGB
    <root>/calib/<frame>.txt        P2 / Tr / image_size
    <root>/manifest.json
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .geometry import (
    IGNORE,
    CalibrationSet,
    PointCloudFrame,
    fov_coverage,
    load_calibration,
    pinhole_calibration,
    project_points,
    save_calibration,
)

log = logging.getLogger(__name__)

RECORD_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
SPLITS = ("train", "val", "test")

# primitive type per class index; class 0 is always the ground plane
PRIMITIVES = ("plane", "box", "cylinder", "sphere", "cone")
DEFAULT_CLASS_NAMES = ("ground", "building", "pole", "bush", "tree")
PALETTE = np.array(
    [
        [152, 255, 152],
        [170, 40, 160],
        [250, 200, 30],
        [30, 160, 60],
        [235, 120, 20],
        [60, 120, 250],
        [200, 60, 60],
        [120, 120, 120],
    ],
    dtype=np.uint8,
)
SKY_COLOR = np.array([190, 215, 240], dtype=np.float64)
# mean LiDAR reflectivity per class; overlapping on purpose
REFLECTIVITY = (0.25, 0.55, 0.65, 0.35, 0.45)


class DataFormatError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


# --- binary containers --------------------------------------------------------

def load_pointcloud(path, label_path=None) -> PointCloudFrame:
    raw = Path(path).read_bytes()
    if len(raw) % (4 * RECORD_DTYPE.itemsize):
        raise DataFormatError(f"{path}: {len(raw)} bytes is not a multiple of the 16-byte record size")
    records = np.frombuffer(raw, dtype=RECORD_DTYPE).reshape(-1, 4)
    labels = load_labels(label_path, expected=len(records)) if label_path is not None else None
    return PointCloudFrame(records[:, :3].copy(), records[:, 3].copy(), labels)


def save_pointcloud(cloud: PointCloudFrame, path, label_path=None) -> None:
    records = np.concatenate(
        [np.asarray(cloud.positions, RECORD_DTYPE), np.asarray(cloud.intensity, RECORD_DTYPE)[:, None]], axis=1
    )
    Path(path).write_bytes(np.ascontiguousarray(records, dtype=RECORD_DTYPE).tobytes())
    if label_path is not None:
        if cloud.labels is None:
            raise DataFormatError("cloud has no labels to save")
        save_labels(cloud.labels, label_path)


def load_labels(path, expected: int | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % LABEL_DTYPE.itemsize:
        raise DataFormatError(f"{path}: {len(raw)} bytes is not a multiple of 4")
    words = np.frombuffer(raw, dtype=LABEL_DTYPE)
    if expected is not None and len(words) != expected:
        raise DataFormatError(f"{path}: {len(words)} labels for {expected} points")
    return (words & 0xFFFF).astype(np.int64)


def save_labels(labels: np.ndarray, path) -> None:
    Path(path).write_bytes(np.asarray(labels, dtype=LABEL_DTYPE).tobytes())


def load_image(path) -> np.ndarray:
    """RGB image as float32 ``(H, W, 3)`` in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def save_image(rgb: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


# --- manifests ----------------------------------------------------------------

@dataclass(frozen=True)
class SceneSample:
    frame_id: str
    cloud_path: Path
    label_path: Path | None
    image_path: Path | None
    calib_path: Path | None

    def load_cloud(self) -> PointCloudFrame:
        return load_pointcloud(self.cloud_path, self.label_path)

    def load_image(self) -> np.ndarray:
        return load_image(self.image_path)

    def load_calibration(self) -> CalibrationSet:
        try:
            return load_calibration(self.calib_path)
        except ValueError:
            # no image_size line (e.g. real KITTI): read it off the image
            with Image.open(self.image_path) as im:
                w, h = im.size
            return load_calibration(self.calib_path, image_size=(h, w))


@dataclass
class DatasetManifest:
    samples: list[SceneSample]
    class_names: list[str]
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataFormatError(f"unknown split {self.split!r}")
        ids = [s.frame_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataFormatError("duplicate frame ids in manifest")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def frame_ids(self) -> list[str]:
        return [s.frame_id for s in self.samples]

    def __len__(self) -> int:
        return len(self.samples)


def write_manifest(path, class_names, splits: dict[str, list[SceneSample]], seed: int) -> None:
    path = Path(path)
    root = path.parent

    def rel(p):
        return None if p is None else Path(p).relative_to(root).as_posix()

    seen: set[str] = set()
    for name, samples in splits.items():
        ids = {s.frame_id for s in samples}
        if seen & ids:
            raise DataFormatError(f"split {name!r} shares frame ids with another split")
        seen |= ids
    doc = {
        "class_names": list(class_names),
        "seed": int(seed),
        "splits": {
            name: [
                {
                    "frame_id": s.frame_id,
                    "cloud": rel(s.cloud_path),
                    "label": rel(s.label_path),
                    "image": rel(s.image_path),
                    "calib": rel(s.calib_path),
                }
                for s in samples
            ]
            for name, samples in splits.items()
        },
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path, split: str = "train") -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DataFormatError(f"no manifest at {path}")
    doc = json.loads(path.read_text())
    root = path.parent
    entries = doc["splits"].get(split)
    if entries is None:
        raise DataFormatError(f"manifest has no {split!r} split")

    def resolve(p):
        return None if p is None else root / p

    samples = [
        SceneSample(e["frame_id"], resolve(e["cloud"]), resolve(e["label"]), resolve(e["image"]), resolve(e["calib"]))
        for e in entries
    ]
    for s in samples:
        for p in (s.cloud_path, s.label_path, s.image_path, s.calib_path):
            if p is not None and not p.exists():
                raise DataFormatError(f"frame {s.frame_id}: missing file {p}")
    return DatasetManifest(samples, list(doc["class_names"]), split, int(doc.get("seed", 0)))


def semantickitti_manifest(root, sequences, split: str, class_names, seed: int = 0) -> DatasetManifest:
    """Index a SemanticKITTI tree (``sequences/NN/{velodyne,labels,image_2}``,
    ``sequences/NN/calib.txt``). Raw label ids are kept as-is (low 16 bits);
    remapping to training ids is the caller's job."""
    root = Path(root)
    samples = []
    for seq in sequences:
        seq_dir = root / "sequences" / f"{int(seq):02d}"
        for bin_path in sorted((seq_dir / "velodyne").glob("*.bin")):
            stem = bin_path.stem
            label = seq_dir / "labels" / f"{stem}.label"
            image = seq_dir / "image_2" / f"{stem}.png"
            samples.append(
                SceneSample(
                    f"{int(seq):02d}/{stem}",
                    bin_path,
                    label if label.exists() else None,
                    image if image.exists() else None,
                    seq_dir / "calib.txt",
                )
            )
    return DatasetManifest(samples, list(class_names), split, seed)


# --- augmentation ---------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    yaw_range: tuple[float, float] = (0.0, 0.0)  # radians
    scale_range: tuple[float, float] = (1.0, 1.0)
    flip_x_prob: float = 0.0
    flip_y_prob: float = 0.0
    jitter_sigma: float = 0.0  # meters

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls()


def _snap(x: float) -> float:
    # cos/sin of multiples of pi/2 leave ~1e-16 residues
    return 0.0 if abs(x) < 1e-15 else x


def augment(cloud: PointCloudFrame, params: AugmentParams, seed) -> PointCloudFrame:
    """Global yaw rotation, isotropic scale, axis flips and per-point jitter.

    Point order, labels and intensity are untouched, so correspondences
    computed on the original cloud stay valid row-for-row.
    """
    rng = np.random.default_rng(seed)
    yaw = rng.uniform(*params.yaw_range) if params.yaw_range[0] != params.yaw_range[1] else params.yaw_range[0]
    scale = (
        rng.uniform(*params.scale_range) if params.scale_range[0] != params.scale_range[1] else params.scale_range[0]
    )
    flip_x = rng.random() < params.flip_x_prob
    flip_y = rng.random() < params.flip_y_prob
    pos = np.asarray(cloud.positions)
    out = pos.astype(np.float64, copy=True)
    if yaw != 0.0:
        c, s = _snap(np.cos(yaw)), _snap(np.sin(yaw))
        x, y = out[:, 0].copy(), out[:, 1].copy()
        out[:, 0] = c * x - s * y
        out[:, 1] = s * x + c * y
    if scale != 1.0:
        out *= scale
    if flip_x:
        out[:, 0] = -out[:, 0]
    if flip_y:
        out[:, 1] = -out[:, 1]
    if params.jitter_sigma > 0:
        out += rng.normal(0.0, params.jitter_sigma, size=out.shape)
    labels = None if cloud.labels is None else cloud.labels.copy()
    return PointCloudFrame(out.astype(pos.dtype), cloud.intensity.copy(), labels)


# --- synthetic scenes -------------------------------------------------------------

@dataclass
class SyntheticSceneSpec:
    num_points: int = 4096
    num_classes: int = 5
    class_names: list[str] | None = None
    object_counts: list[int] = field(default_factory=lambda: [1, 6, 10, 8, 6])
    image_size: tuple[int, int] = (64, 192)
    hfov_deg: float = 120.0
    camera_offset: tuple[float, float, float] = (0.27, 0.0, -0.08)
    camera_yaw_range: tuple[float, float] = (-0.25, 0.25)  # radians
    camera_pitch_range: tuple[float, float] = (-0.08, 0.0)
    noise: float = 0.02  # meters, radial range noise
    extent: float = 25.0
    sensor_height: float = 1.73
    lidar_beams: int = 32
    lidar_elevation_deg: tuple[float, float] = (-24.0, 12.0)
    lidar_azimuth_steps: int = 720
    lidar_azimuth_span_deg: float = 300.0
    max_range: float = 40.0
    num_train: int = 50
    num_val: int = 16
    max_attempts: int = 8

    def __post_init__(self):
        if self.num_classes < 2:
            raise GenerationError("need at least 2 classes")
        if self.num_classes > len(PRIMITIVES):
            raise GenerationError(f"at most {len(PRIMITIVES)} classes are supported")
        if self.num_points <= 0:
            raise GenerationError("num_points must be positive")
        if len(self.object_counts) != self.num_classes:
            raise GenerationError("object_counts needs one entry per class")
        if self.class_names is None:
            self.class_names = list(DEFAULT_CLASS_NAMES[: self.num_classes])
        if len(self.class_names) != self.num_classes:
            raise GenerationError("class_names needs one entry per class")
        self.image_size = tuple(int(x) for x in self.image_size)

    @classmethod
    def from_file(cls, path) -> "SyntheticSceneSpec":
        doc = yaml.safe_load(Path(path).read_text()) or {}
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise GenerationError(f"unknown scene spec keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticScene:
    cloud: PointCloudFrame
    image: np.ndarray  # (H, W, 3) uint8
    calib: CalibrationSet
    coverage: float


def _place_objects(spec: SyntheticSceneSpec, rng) -> list[tuple]:
    objs = []
    footprints: list[tuple[float, float, float]] = []

    def free_spot(radius):
        for _ in range(200):
            r = np.sqrt(rng.uniform(4.0**2, spec.extent**2))
            a = rng.uniform(-np.pi, np.pi)
            x, y = r * np.cos(a), r * np.sin(a)
            if all(np.hypot(x - fx, y - fy) > radius + fr + 0.5 for fx, fy, fr in footprints):
                footprints.append((x, y, radius))
                return x, y
        return None

    for cls in range(1, spec.num_classes):
        kind = PRIMITIVES[cls]
        for _ in range(spec.object_counts[cls]):
            if kind == "box":
                sx, sy, sz = rng.uniform(2.0, 6.0), rng.uniform(2.0, 6.0), rng.uniform(2.0, 4.5)
                spot = free_spot(0.5 * np.hypot(sx, sy))
                if spot:
                    objs.append((cls, kind, (*spot, sx, sy, sz, rng.uniform(-np.pi, np.pi))))
            elif kind == "cylinder":
                r, h = rng.uniform(0.15, 0.35), rng.uniform(3.0, 6.0)
                spot = free_spot(r)
                if spot:
                    objs.append((cls, kind, (*spot, r, h)))
            elif kind == "sphere":
                r = rng.uniform(0.7, 1.5)
                spot = free_spot(r)
                if spot:
                    objs.append((cls, kind, (*spot, r * 0.9, r)))
            elif kind == "cone":
                r, h = rng.uniform(0.9, 1.8), rng.uniform(3.0, 5.5)
                spot = free_spot(r)
                if spot:
                    objs.append((cls, kind, (*spot, r, h)))
    return objs


def _first_root(a, b, c, eps=1e-9):
    """Smallest positive root of a t^2 + b t + c per ray (inf if none), both roots returned."""
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (np.abs(a) > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(ok, (-b - sq) / (2 * a), np.inf)
        t2 = np.where(ok, (-b + sq) / (2 * a), np.inf)
    return np.minimum(t1, t2), np.maximum(t1, t2)


def _raycast(origin: np.ndarray, dirs: np.ndarray, objects, extent: float, max_range: float):
    """Nearest hit distance and class per ray (world frame, ground z=0)."""
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_c = np.full(n, -1, dtype=np.int64)
    ox, oy, oz = origin
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    eps = 1e-6

    def keep(t, cls):
        nonlocal best_t, best_c
        t = np.where(np.isfinite(t) & (t > eps), t, np.inf)
        better = t < best_t
        best_t = np.where(better, t, best_t)
        best_c = np.where(better, cls, best_c)

    # ground plane, bounded to the scene square
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dz < 0, -oz / dz, np.inf)
    gx, gy = ox + t * dx, oy + t * dy
    lim = 1.6 * extent
    keep(np.where((np.abs(gx) <= lim) & (np.abs(gy) <= lim), t, np.inf), 0)

    for cls, kind, p in objects:
        if kind == "box":
            cx, cy, sx, sy, sz, yaw = p
            c, s = np.cos(-yaw), np.sin(-yaw)
            lox, loy = c * (ox - cx) - s * (oy - cy), s * (ox - cx) + c * (oy - cy)
            ldx, ldy = c * dx - s * dy, s * dx + c * dy
            lo = np.array([-sx / 2, -sy / 2, 0.0])
            hi = np.array([sx / 2, sy / 2, sz])
            t_near = np.full(n, -np.inf)
            t_far = np.full(n, np.inf)
            for o, d, a, b in ((lox, ldx, lo[0], hi[0]), (loy, ldy, lo[1], hi[1]), (oz, dz, lo[2], hi[2])):
                with np.errstate(divide="ignore", invalid="ignore"):
                    ta, tb = (a - o) / d, (b - o) / d
                inside = (o >= a) & (o <= b)
                ta = np.where(d == 0, np.where(inside, -np.inf, np.inf), ta)
                tb = np.where(d == 0, np.where(inside, np.inf, -np.inf), tb)
                t_near = np.maximum(t_near, np.minimum(ta, tb))
                t_far = np.minimum(t_far, np.maximum(ta, tb))
            keep(np.where(t_near <= t_far, t_near, np.inf), cls)
        elif kind == "cylinder":
            cx, cy, r, h = p
            fx, fy = ox - cx, oy - cy
            t1, t2 = _first_root(dx * dx + dy * dy, 2 * (fx * dx + fy * dy), fx * fx + fy * fy - r * r)
            hits = []
            for tt in (t1, t2):
                with np.errstate(invalid="ignore"):
                    z = oz + tt * dz
                hits.append(np.where((z >= 0) & (z <= h) & (tt > eps), tt, np.inf))
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (h - oz) / dz
                cap = (fx + tc * dx) ** 2 + (fy + tc * dy) ** 2 <= r * r
            hits.append(np.where(cap & (tc > eps), tc, np.inf))
            keep(np.minimum.reduce(hits), cls)
        elif kind == "sphere":
            cx, cy, cz, r = p
            fx, fy, fz = ox - cx, oy - cy, oz - cz
            t1, t2 = _first_root(np.ones(n), 2 * (fx * dx + fy * dy + fz * dz), np.full(n, fx * fx + fy * fy + fz * fz - r * r))
            keep(np.where(t1 > eps, t1, t2), cls)
        elif kind == "cone":
            cx, cy, r, h = p
            k2 = (r / h) ** 2
            fx, fy, fz = ox - cx, oy - cy, h - oz
            a = dx * dx + dy * dy - k2 * dz * dz
            b = 2 * (fx * dx + fy * dy + k2 * fz * dz)
            c = fx * fx + fy * fy - k2 * fz * fz
            t1, t2 = _first_root(a, b, np.full(n, c))
            hits = []
            for tt in (t1, t2):
                with np.errstate(invalid="ignore"):
                    z = oz + tt * dz
                hits.append(np.where((z >= 0) & (z <= h) & (tt > eps), tt, np.inf))
            keep(np.minimum(*hits), cls)
    too_far = best_t > max_range
    best_t[too_far] = np.inf
    best_c[too_far] = -1
    return best_t, best_c


def _render_once(spec: SyntheticSceneSpec, rng) -> SyntheticScene:
    objects = _place_objects(spec, rng)
    sensor = np.array([0.0, 0.0, spec.sensor_height])

    # LiDAR sweep
    elev = np.deg2rad(np.linspace(*spec.lidar_elevation_deg, spec.lidar_beams))
    half = np.deg2rad(spec.lidar_azimuth_span_deg) / 2
    azim = np.linspace(-half, half, spec.lidar_azimuth_steps, endpoint=spec.lidar_azimuth_span_deg < 360)
    E, A = np.meshgrid(elev, azim, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    t, cls = _raycast(sensor, dirs, objects, spec.extent, spec.max_range)
    hit = np.flatnonzero(np.isfinite(t))
    if hit.size < spec.num_points:
        raise GenerationError(f"only {hit.size} LiDAR returns for {spec.num_points} requested points")
    pick = np.sort(rng.choice(hit, size=spec.num_points, replace=False))
    rng_noise = rng.normal(0.0, spec.noise, size=pick.size) if spec.noise > 0 else 0.0
    rng_t = t[pick] + rng_noise
    positions = dirs[pick] * rng_t[:, None]  # sensor frame
    labels = cls[pick]
    refl = np.asarray(REFLECTIVITY)[labels]
    intensity = np.clip(refl + rng.normal(0.0, 0.1, size=pick.size), 0.0, 1.0)
    cloud = PointCloudFrame(positions.astype(np.float32), intensity.astype(np.float32), labels.astype(np.int64))

    # camera
    yaw = rng.uniform(*spec.camera_yaw_range)
    pitch = rng.uniform(*spec.camera_pitch_range)
    calib = pinhole_calibration(spec.image_size, spec.hfov_deg, spec.camera_offset, yaw, pitch)
    H, W = spec.image_size
    P = calib.cam_projection
    vv, uu = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    cam_dirs = np.stack([(uu - P[0, 2]) / P[0, 0], (vv - P[1, 2]) / P[1, 1], np.ones_like(uu)], axis=-1).reshape(-1, 3)
    R = calib.lidar_to_cam[:, :3]
    world_dirs = cam_dirs @ R  # R^T applied to row vectors
    z_cam = 1.0 / np.linalg.norm(world_dirs, axis=1)
    world_dirs = world_dirs * z_cam[:, None]
    origin = sensor + np.asarray(spec.camera_offset)
    t_img, cls_img = _raycast(origin, world_dirs, objects, spec.extent, spec.max_range)
    depth = np.where(np.isfinite(t_img), t_img * z_cam, np.inf)
    shade = 1.0 - 0.6 * np.clip(depth / spec.max_range, 0.0, 1.0)
    colors = PALETTE[np.clip(cls_img, 0, None)].astype(np.float64) * shade[:, None]
    colors[cls_img < 0] = SKY_COLOR
    image = np.round(colors).clip(0, 255).astype(np.uint8).reshape(H, W, 3)

    coverage = fov_coverage(project_points(cloud, calib))
    return SyntheticScene(cloud, image, calib, coverage)


def render_synthetic_scene(spec: SyntheticSceneSpec, seed) -> SyntheticScene:
    """Deterministic in ``(spec, seed)``. Retries placement a bounded number of
    times until FOV coverage is within [0.3, 0.9] and every class holds at
    least 1% of the points."""
    reasons = []
    for attempt in range(spec.max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        scene = _render_once(spec, rng)
        counts = np.bincount(scene.cloud.labels, minlength=spec.num_classes)
        if not 0.3 <= scene.coverage <= 0.9:
            reasons.append(f"coverage {scene.coverage:.3f}")
            continue
        if counts.min() < 0.01 * spec.num_points:
            reasons.append(f"class counts {counts.tolist()}")
            continue
        return scene
    raise GenerationError(f"no feasible scene after {spec.max_attempts} attempts: {'; '.join(reasons)}")


def generate_synthetic_scene(spec: SyntheticSceneSpec, seed, out_dir, frame_id: str | None = None) -> SceneSample:
    out_dir = Path(out_dir)
    frame_id = frame_id or f"{int(seed):06d}"
    scene = render_synthetic_scene(spec, seed)
    paths = {
        "velodyne": out_dir / "velodyne" / f"{frame_id}.bin",
        "labels": out_dir / "labels" / f"{frame_id}.label",
        "image_2": out_dir / "image_2" / f"{frame_id}.png",
        "calib": out_dir / "calib" / f"{frame_id}.txt",
        "meta": out_dir / "meta" / f"{frame_id}.json",
    }
    for p in paths.values():
        p.parent.mkdir(parents=True, exist_ok=True)
    save_pointcloud(scene.cloud, paths["velodyne"], paths["labels"])
    save_image(scene.image, paths["image_2"])
    save_calibration(scene.calib, paths["calib"])
    paths["meta"].write_text(json.dumps({"frame_id": frame_id, "seed": int(seed), "fov_coverage": scene.coverage}) + "\n")
    return SceneSample(frame_id, paths["velodyne"], paths["labels"], paths["image_2"], paths["calib"])


def recorded_coverage(sample: SceneSample) -> float:
    meta = sample.cloud_path.parent.parent / "meta" / f"{sample.frame_id}.json"
    return float(json.loads(meta.read_text())["fov_coverage"])


def generate_dataset(spec: SyntheticSceneSpec, seed: int, out_dir) -> Path:
    """Write ``num_train + num_val`` scenes and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits: dict[str, list[SceneSample]] = {"train": [], "val": []}
    names = ["train"] * spec.num_train + ["val"] * spec.num_val
    for i, split in enumerate(names):
        scene_seed = int(np.random.SeedSequence([int(seed), i]).generate_state(1)[0])
        splits[split].append(generate_synthetic_scene(spec, scene_seed, out_dir, frame_id=f"{i:06d}"))
        log.debug("generated frame %06d (%s)", i, split)
    (out_dir / "scene_spec.yaml").write_text(yaml.safe_dump(_plain(spec.to_dict()), sort_keys=True))
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, spec.class_names, splits, seed)
    return manifest


def _plain(obj):
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def ignore_out_of_range(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Map any label >= K to IGNORE."""
    labels = np.asarray(labels).copy()
    labels[(labels >= num_classes) & (labels != IGNORE)] = IGNORE
    return labels
