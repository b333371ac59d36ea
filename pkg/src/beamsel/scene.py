"""Synthetic V2I scene generation and parametric sensing corruption.

A base station at the origin looks down a straight road with a 1-D pinhole
camera: a world point at azimuth ``az`` (measured from the +y boresight,
positive to the right) lands on image column ``n * (az - fov_lo) / fov_span``.
Vehicles are rectangles in world space, projected to axis-aligned bounding
boxes; their masks are the solid bbox interiors.  Vertical placement follows
apparent size at distance ``d``: rows scale with ``pixels_per_radian / d``.

The ground-truth beam label comes from the exhaustive-search oracle on a
single line-of-sight path at the target's azimuth, which makes the label a
deterministic function of target position.  Each frame also carries a short
motion history (GPS fixes plus the oracle beam of the preceding step) for the
sequence classifier.

Corruption profiles perturb *sensing* only (detections, masks, boxes, GPS);
the physics and therefore the label never change.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .channel import RadioParams, line_of_sight, optimal_beam
from .codebook import Codebook


class SceneError(ValueError):
    """Invalid world configuration or dataset layout."""


class FrameRejected(SceneError):
    """Target vehicle falls outside the camera field of view."""


@dataclass(frozen=True)
class WorldConfig:
    road_start: tuple[float, float] = (-23.0, 60.0)
    road_end: tuple[float, float] = (22.0, 60.0)
    camera_fov: tuple[float, float] = (-0.3609375, 0.3390625)
    image_size: tuple[int, int] = (540, 960)     # (rows, cols)
    bs_position: tuple[float, float] = (0.0, 0.0)
    camera_height: float = 4.0                    # meters above vehicle base plane
    horizon_frac: float = 0.35                    # horizon row as fraction of rows
    vehicle_length_range: tuple[float, float] = (1.36, 1.43)
    vehicle_height: float = 1.5
    min_separation: float = 0.12                  # min azimuth gap between vehicles, rad
    target_margin_px: float = 2.0                 # keep the target center on-screen
    az_step_range: tuple[float, float] = (0.004, 0.008)   # target azimuth motion per step
    history_len: int = 8
    gps_origin: tuple[float, float] = (126.95, 37.4)      # (lon, lat) degrees
    # degrees per world meter; a rotated frame so both coordinates carry
    # along-road position (lat/lon axes are rarely road-aligned)
    gps_map: tuple[tuple[float, float], tuple[float, float]] = (
        (0.866e-5, -0.5e-5),
        (0.5e-5, 0.866e-5),
    )
    gps_noise_std: float = 7.0e-7                 # sensor noise at capture, degrees
    gps_bounds: tuple[float, float, float, float] = (126.9490, 126.9502, 37.4001, 37.4009)
    max_vehicles: int = 4

    def __post_init__(self):
        lo, hi = self.camera_fov
        if not lo < hi:
            raise SceneError(f"camera_fov must be increasing, got {self.camera_fov}")
        rows, cols = self.image_size
        if rows < 1 or cols < 1:
            raise SceneError(f"image_size must be positive, got {self.image_size}")
        lon_min, lon_max, lat_min, lat_max = self.gps_bounds
        if not (lon_min < lon_max and lat_min < lat_max):
            raise SceneError(f"gps_bounds not well ordered: {self.gps_bounds}")
        if self.max_vehicles < 1:
            raise SceneError(f"max_vehicles must be >= 1, got {self.max_vehicles}")
        if self.history_len < 1:
            raise SceneError(f"history_len must be >= 1, got {self.history_len}")

    @property
    def pixels_per_radian(self) -> float:
        lo, hi = self.camera_fov
        return self.image_size[1] / (hi - lo)


@dataclass(frozen=True)
class Vehicle:
    id: int
    position: tuple[float, float]
    extent: float                 # along-road length, meters
    is_target: bool
    gps: tuple[float, float]      # (lon, lat) with sensor noise, clamped to bounds


@dataclass(frozen=True)
class Detection:
    vehicle_id: int
    bbox: tuple[int, int, int, int]   # (x_min, y_min, x_max, y_max), half-open
    mask: np.ndarray                  # uint8 patch of shape (y_max-y_min, x_max-x_min)

    def __post_init__(self):
        x_min, y_min, x_max, y_max = self.bbox
        if self.mask.shape != (y_max - y_min, x_max - x_min):
            raise SceneError(f"mask shape {self.mask.shape} does not match bbox {self.bbox}")
        self.mask.flags.writeable = False

    @property
    def area(self) -> int:
        x_min, y_min, x_max, y_max = self.bbox
        return (x_max - x_min) * (y_max - y_min)


@dataclass(frozen=True)
class CorruptionProfile:
    name: str
    detection_drop_prob: float = 0.0
    mask_flip_prob: float = 0.0
    bbox_jitter_px: int = 0
    gps_noise_std: float = 0.0

    def __post_init__(self):
        for p in (self.detection_drop_prob, self.mask_flip_prob):
            if not 0.0 <= p <= 1.0:
                raise SceneError(f"probability out of range in profile {self.name!r}: {p}")
        if self.bbox_jitter_px < 0 or self.gps_noise_std < 0:
            raise SceneError(f"negative corruption magnitude in profile {self.name!r}")

    @property
    def is_identity(self) -> bool:
        return (self.detection_drop_prob == 0.0 and self.mask_flip_prob == 0.0
                and self.bbox_jitter_px == 0 and self.gps_noise_std == 0.0)


# Parametric stand-ins for environmental test conditions.  Values are data;
# harness configs may override or extend them.
PRESETS: dict[str, CorruptionProfile] = {
    "clear": CorruptionProfile("clear"),
    "night": CorruptionProfile("night", detection_drop_prob=0.25, mask_flip_prob=0.01,
                               bbox_jitter_px=1),
    "rain_light": CorruptionProfile("rain_light", detection_drop_prob=0.15,
                                    mask_flip_prob=0.02, bbox_jitter_px=2,
                                    gps_noise_std=1.0e-6),
    "rain_heavy": CorruptionProfile("rain_heavy", detection_drop_prob=0.5,
                                    mask_flip_prob=0.05, bbox_jitter_px=4,
                                    gps_noise_std=2.0e-6),
    "fog": CorruptionProfile("fog", detection_drop_prob=0.35, mask_flip_prob=0.08,
                             bbox_jitter_px=3, gps_noise_std=1.0e-6),
    "snow": CorruptionProfile("snow", detection_drop_prob=0.3, mask_flip_prob=0.12,
                              bbox_jitter_px=2, gps_noise_std=1.0e-6),
    "blind": CorruptionProfile("blind", detection_drop_prob=1.0),
}


@dataclass(frozen=True)
class Frame:
    frame_id: int
    timestamp: float
    vehicles: tuple[Vehicle, ...]
    detections: tuple[Detection, ...]
    full_mask: np.ndarray             # uint8 (rows, cols), union of detection masks
    ground_truth_beam: int
    corruption: str
    gps_history: np.ndarray           # (history_len, 2) of (lon, lat)
    beam_history: np.ndarray          # (history_len,) oracle beam of the *previous* step

    def __post_init__(self):
        self.full_mask.flags.writeable = False
        self.gps_history.flags.writeable = False
        self.beam_history.flags.writeable = False

    @property
    def target(self) -> Vehicle:
        return next(v for v in self.vehicles if v.is_target)

    @property
    def target_gps(self) -> tuple[float, float]:
        return (float(self.gps_history[-1, 0]), float(self.gps_history[-1, 1]))


def azimuth_of(world: WorldConfig, position) -> float:
    """Azimuth of a world point seen from the BS (boresight = +y, right = +)."""
    dx = position[0] - world.bs_position[0]
    dy = position[1] - world.bs_position[1]
    return math.atan2(dx, dy)


def column_of(world: WorldConfig, azimuth: float) -> float:
    lo, hi = world.camera_fov
    return world.image_size[1] * (azimuth - lo) / (hi - lo)


def road_point_at_azimuth(world: WorldConfig, azimuth: float) -> tuple[float, float]:
    """Intersect the BS view ray at `azimuth` with the road line."""
    bx, by = world.bs_position
    (x0, y0), (x1, y1) = world.road_start, world.road_end
    rx, ry = math.sin(azimuth), math.cos(azimuth)
    dx, dy = x1 - x0, y1 - y0
    det = rx * (-dy) - (-dx) * ry
    if abs(det) < 1e-12:
        raise SceneError("view ray is parallel to the road")
    t = ((x0 - bx) * (-dy) + dx * (y0 - by)) / det
    if t <= 0:
        raise SceneError(f"azimuth {azimuth} does not point at the road")
    return (bx + t * rx, by + t * ry)


def world_to_gps(world: WorldConfig, position) -> tuple[float, float]:
    (a, b), (c, d) = world.gps_map
    lon = world.gps_origin[0] + a * position[0] + b * position[1]
    lat = world.gps_origin[1] + c * position[0] + d * position[1]
    return (lon, lat)


def clamp_gps(world: WorldConfig, lon: float, lat: float) -> tuple[float, float]:
    lon_min, lon_max, lat_min, lat_max = world.gps_bounds
    return (min(max(lon, lon_min), lon_max), min(max(lat, lat_min), lat_max))


def project_vehicle(world: WorldConfig, position, extent: float):
    """Project a vehicle to an image bbox, or None when fully off-screen."""
    rows, cols = world.image_size
    (x0, y0), (x1, y1) = world.road_start, world.road_end
    seg = math.hypot(x1 - x0, y1 - y0)
    ux, uy = (x1 - x0) / seg, (y1 - y0) / seg
    half = extent / 2.0
    az_a = azimuth_of(world, (position[0] - half * ux, position[1] - half * uy))
    az_b = azimuth_of(world, (position[0] + half * ux, position[1] + half * uy))
    col_lo = column_of(world, min(az_a, az_b))
    col_hi = column_of(world, max(az_a, az_b))
    x_min = int(math.floor(col_lo))
    x_max = int(math.floor(col_hi))
    if x_max <= x_min:
        x_max = x_min + 1

    d = math.hypot(position[0] - world.bs_position[0], position[1] - world.bs_position[1])
    f = world.pixels_per_radian
    horizon = world.horizon_frac * rows
    row_bot = horizon + f * world.camera_height / d
    row_top = horizon + f * (world.camera_height - world.vehicle_height) / d
    y_min = int(math.floor(row_top))
    y_max = int(math.floor(row_bot))
    if y_max <= y_min:
        y_max = y_min + 1

    x_min, x_max = max(x_min, 0), min(x_max, cols)
    y_min, y_max = max(y_min, 0), min(y_max, rows)
    if x_min >= x_max or y_min >= y_max:
        return None
    return (x_min, y_min, x_max, y_max)


def binarize(detections, image_size) -> np.ndarray:
    """Union mask: pixel is 1 iff it lies in any detection's mask region."""
    full = np.zeros(image_size, dtype=np.uint8)
    for det in detections:
        x_min, y_min, x_max, y_max = det.bbox
        region = full[y_min:y_max, x_min:x_max]
        np.maximum(region, det.mask, out=region)
    return full


def generate_frame(world: WorldConfig, rng_seed: int, codebook: Codebook,
                   radio: RadioParams, frame_id: int = 0, timestamp: float = 0.0,
                   target_azimuth: float | None = None) -> Frame:
    """One simulated capture; deterministic in (world, seed, codebook, radio)."""
    rng = np.random.default_rng(rng_seed)
    fov_lo, fov_hi = world.camera_fov
    margin_az = world.target_margin_px / world.pixels_per_radian

    if target_azimuth is None:
        target_az = rng.uniform(fov_lo + margin_az, fov_hi - margin_az)
    else:
        target_az = target_azimuth
        if not (fov_lo <= target_az <= fov_hi):
            raise FrameRejected(f"target azimuth {target_az} outside fov {world.camera_fov}")

    az_step = rng.uniform(*world.az_step_range) * (1.0 if rng.random() < 0.5 else -1.0)
    n_distractors = int(rng.integers(0, world.max_vehicles))

    distractor_az = []
    for _ in range(n_distractors):
        for _attempt in range(100):
            az = rng.uniform(fov_lo + margin_az, fov_hi - margin_az)
            gaps = [abs(az - other) for other in distractor_az] + [abs(az - target_az)]
            if min(gaps) >= world.min_separation:
                distractor_az.append(az)
                break

    # oracle labels along the target's history; steering angles clamped to the
    # codebook range (out-of-range history steps saturate at the edge beams)
    cb_lo, cb_hi = codebook.config.azimuth_range
    t_hist = world.history_len
    history_az = [target_az - (t_hist - t) * az_step for t in range(t_hist + 1)]
    beams = [
        optimal_beam(line_of_sight(min(max(az, cb_lo), cb_hi)), codebook, radio)[0]
        for az in history_az
    ]
    beam_history = np.asarray(beams[:-1], dtype=np.int64)   # beam of step t-1
    ground_truth = int(beams[-1])

    gps_history = np.empty((t_hist, 2), dtype=np.float64)
    for t in range(t_hist):
        pos_t = road_point_at_azimuth(world, history_az[t + 1])
        lon, lat = world_to_gps(world, pos_t)
        noise = rng.normal(0.0, world.gps_noise_std, 2)
        gps_history[t] = clamp_gps(world, lon + noise[0], lat + noise[1])

    target_pos = road_point_at_azimuth(world, target_az)
    vehicles = [
        Vehicle(id=0, position=target_pos,
                extent=float(rng.uniform(*world.vehicle_length_range)),
                is_target=True, gps=(float(gps_history[-1, 0]), float(gps_history[-1, 1])))
    ]
    for i, az in enumerate(distractor_az):
        pos = road_point_at_azimuth(world, az)
        lon, lat = world_to_gps(world, pos)
        noise = rng.normal(0.0, world.gps_noise_std, 2)
        vehicles.append(
            Vehicle(id=i + 1, position=pos,
                    extent=float(rng.uniform(*world.vehicle_length_range)),
                    is_target=False, gps=clamp_gps(world, lon + noise[0], lat + noise[1]))
        )

    order = rng.permutation(len(vehicles))
    vehicles = tuple(vehicles[i] for i in order)

    detections = []
    for v in vehicles:
        bbox = project_vehicle(world, v.position, v.extent)
        if bbox is None:
            if v.is_target:
                raise FrameRejected(f"target projects outside the image (azimuth {target_az})")
            continue
        x_min, y_min, x_max, y_max = bbox
        patch = np.ones((y_max - y_min, x_max - x_min), dtype=np.uint8)
        detections.append(Detection(vehicle_id=v.id, bbox=bbox, mask=patch))
    detections = tuple(detections)

    return Frame(
        frame_id=frame_id,
        timestamp=timestamp,
        vehicles=vehicles,
        detections=detections,
        full_mask=binarize(detections, world.image_size),
        ground_truth_beam=ground_truth,
        corruption="clear",
        gps_history=gps_history,
        beam_history=beam_history,
    )


def corrupt(frame: Frame, profile: CorruptionProfile, rng_seed: int,
            world: WorldConfig) -> Frame:
    """Corrupt sensing only; the ground-truth beam is left untouched.

    Draw order is fixed (drops, then per-survivor flips and jitter, then GPS)
    so the result is deterministic in (frame, profile, seed).
    """
    if profile.is_identity:
        return replace(frame, corruption=profile.name)

    rng = np.random.default_rng(rng_seed)
    rows, cols = frame.full_mask.shape

    survivors = []
    for det in frame.detections:
        if rng.random() >= profile.detection_drop_prob:
            survivors.append(det)

    corrupted = []
    for det in survivors:
        mask = np.array(det.mask, dtype=np.uint8)
        if profile.mask_flip_prob > 0.0:
            flips = rng.random(mask.shape) < profile.mask_flip_prob
            mask = np.where(flips, 1 - mask, mask).astype(np.uint8)
        x_min, y_min, x_max, y_max = det.bbox
        if profile.bbox_jitter_px > 0:
            j = profile.bbox_jitter_px
            dx = int(rng.integers(-j, j + 1))
            dy = int(rng.integers(-j, j + 1))
            x_min, x_max = x_min + dx, x_max + dx
            y_min, y_max = y_min + dy, y_max + dy
            # re-clamp to the image, cropping the patch to match
            cut_l, cut_t = max(0, -x_min), max(0, -y_min)
            cut_r, cut_b = max(0, x_max - cols), max(0, y_max - rows)
            x_min, y_min = max(x_min, 0), max(y_min, 0)
            x_max, y_max = min(x_max, cols), min(y_max, rows)
            if x_min >= x_max or y_min >= y_max:
                continue
            mask = mask[cut_t:mask.shape[0] - cut_b, cut_l:mask.shape[1] - cut_r]
        corrupted.append(Detection(vehicle_id=det.vehicle_id,
                                   bbox=(x_min, y_min, x_max, y_max), mask=mask))
    corrupted = tuple(corrupted)

    gps_history = np.array(frame.gps_history)
    vehicles = frame.vehicles
    if profile.gps_noise_std > 0.0:
        noise = rng.normal(0.0, profile.gps_noise_std, gps_history.shape)
        for t in range(gps_history.shape[0]):
            gps_history[t] = clamp_gps(world, gps_history[t, 0] + noise[t, 0],
                                       gps_history[t, 1] + noise[t, 1])
        new_vehicles = []
        for v in vehicles:
            dv = rng.normal(0.0, profile.gps_noise_std, 2)
            gps = clamp_gps(world, v.gps[0] + dv[0], v.gps[1] + dv[1])
            if v.is_target:
                gps = (float(gps_history[-1, 0]), float(gps_history[-1, 1]))
            new_vehicles.append(replace(v, gps=gps))
        vehicles = tuple(new_vehicles)

    return Frame(
        frame_id=frame.frame_id,
        timestamp=frame.timestamp,
        vehicles=vehicles,
        detections=corrupted,
        full_mask=binarize(corrupted, (rows, cols)),
        ground_truth_beam=frame.ground_truth_beam,
        corruption=profile.name,
        gps_history=gps_history,
        beam_history=np.array(frame.beam_history),
    )


# ---------------------------------------------------------------------------
# dataset on disk: manifest.csv + one binary PGM (P5, maxval 1) per frame


def write_pgm(path: str, mask: np.ndarray) -> None:
    if mask.dtype != np.uint8 or mask.ndim != 2:
        raise SceneError("mask must be a 2-D uint8 array")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.shape[1]} {mask.shape[0]}\n1\n".encode("ascii"))
        fh.write(mask.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"1":
        raise SceneError(f"not a maxval-1 P5 PGM: {path}")
    width, height = (int(x) for x in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width).copy()


_MANIFEST_FIELDS = [
    "frame_id", "timestamp", "corruption", "label", "gps_lon", "gps_lat",
    "gps_history", "beam_history", "vehicles", "detections", "mask_path",
]


def _json_compact(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def save_frames(frames, out_dir: str) -> str:
    """Write manifest.csv plus masks/<frame_id>.pgm; returns the manifest path."""
    masks_dir = os.path.join(out_dir, "masks")
    os.makedirs(masks_dir, exist_ok=True)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_MANIFEST_FIELDS, lineterminator="\n")
    writer.writeheader()
    for frame in frames:
        mask_rel = os.path.join("masks", f"{frame.frame_id:06d}.pgm")
        write_pgm(os.path.join(out_dir, mask_rel), frame.full_mask)
        lon, lat = frame.target_gps
        writer.writerow({
            "frame_id": frame.frame_id,
            "timestamp": repr(frame.timestamp),
            "corruption": frame.corruption,
            "label": frame.ground_truth_beam,
            "gps_lon": repr(lon),
            "gps_lat": repr(lat),
            "gps_history": _json_compact(frame.gps_history.tolist()),
            "beam_history": _json_compact(frame.beam_history.tolist()),
            "vehicles": _json_compact([
                {"id": v.id, "x": v.position[0], "y": v.position[1],
                 "extent": v.extent, "target": v.is_target,
                 "lon": v.gps[0], "lat": v.gps[1]}
                for v in frame.vehicles
            ]),
            "detections": _json_compact([
                {"vehicle_id": d.vehicle_id, "bbox": list(d.bbox)}
                for d in frame.detections
            ]),
            "mask_path": mask_rel,
        })
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", encoding="ascii", newline="") as fh:
        fh.write(buf.getvalue())
    return manifest


def iter_frames(dataset_dir: str):
    """Stream a saved dataset one frame at a time.

    Detection masks are reconstructed as the stored full mask restricted to
    each bbox; for overlapping boxes this shares union pixels between the
    overlapped detections, which is the documented on-disk semantics.
    """
    manifest = os.path.join(dataset_dir, "manifest.csv")
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _MANIFEST_FIELDS:
            raise SceneError(f"unexpected manifest columns: {reader.fieldnames}")
        for row in reader:
            full_mask = read_pgm(os.path.join(dataset_dir, row["mask_path"]))
            detections = []
            for d in json.loads(row["detections"]):
                x_min, y_min, x_max, y_max = d["bbox"]
                patch = full_mask[y_min:y_max, x_min:x_max].copy()
                detections.append(Detection(vehicle_id=d["vehicle_id"],
                                            bbox=(x_min, y_min, x_max, y_max), mask=patch))
            vehicles = tuple(
                Vehicle(id=v["id"], position=(v["x"], v["y"]), extent=v["extent"],
                        is_target=v["target"], gps=(v["lon"], v["lat"]))
                for v in json.loads(row["vehicles"])
            )
            yield Frame(
                frame_id=int(row["frame_id"]),
                timestamp=float(row["timestamp"]),
                vehicles=vehicles,
                detections=tuple(detections),
                full_mask=full_mask,
                ground_truth_beam=int(row["label"]),
                corruption=row["corruption"],
                gps_history=np.asarray(json.loads(row["gps_history"]), dtype=np.float64),
                beam_history=np.asarray(json.loads(row["beam_history"]), dtype=np.int64),
            )


def load_frames(dataset_dir: str) -> list[Frame]:
    return list(iter_frames(dataset_dir))
