"""Knowledge base construction and windowed target-vehicle selection.

The knowledge base maps GPS space to image divisions: training GPS fixes are
standardized, clustered with Lloyd's k-means, and each cluster is assigned the
division derived from the mode of its members' beam labels.  At query time the
nearest centroid picks a division, a window of +/- window_half_width divisions
around it selects candidate detections, and the detection with the largest
in-window mask area becomes the target.  The output is the full-size mask
zeroed everywhere outside the selected bbox.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .scene import Frame


class LocalizationError(ValueError):
    """Invalid knowledge-base inputs."""


class NoDetectionInWindow(Exception):
    """No detection intersects the selected window.

    The fusion layer treats this as the semantic model having no opinion and
    substitutes the uniform prediction.
    """


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray   # (2,)
    std: np.ndarray    # (2,), degenerate axes replaced by 1

    def __post_init__(self):
        self.mean.flags.writeable = False
        self.std.flags.writeable = False

    def transform(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) / self.std


def fit_standardizer(points) -> Standardizer:
    """Per-coordinate mean and population standard deviation."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise LocalizationError("need at least 2 points to fit a standardizer")
    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return Standardizer(mean=mean, std=std)


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    objective_history: tuple[float, ...]   # J after each centroid update
    iterations: int


def _objective(points, centroids) -> float:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


def assign_clusters(points, centroids) -> np.ndarray:
    """Nearest-centroid assignment; ties go to the smaller centroid id."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def kmeans_fit(points, k: int, rng_seed: int, max_iters: int = 100,
               tol: float = 1e-9) -> KMeansResult:
    """Lloyd's iterations until the max centroid shift drops below tol.

    Initial centroids are k distinct points chosen by the seeded generator.
    An empty cluster is reseeded to the point farthest from its previous
    centroid, which keeps the objective non-increasing.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise LocalizationError("points must be a 2-D array")
    if k < 1 or k > pts.shape[0]:
        raise LocalizationError(f"k must be in [1, {pts.shape[0]}], got {k}")
    rng = np.random.default_rng(rng_seed)
    centroids = pts[rng.choice(pts.shape[0], size=k, replace=False)].copy()

    history = []
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        assign = assign_clusters(pts, centroids)
        for j in range(k):
            if not np.any(assign == j):
                dist = ((pts - centroids[j]) ** 2).sum(axis=1)
                centroids[j] = pts[int(np.argmax(dist))]
                assign = assign_clusters(pts, centroids)
        new_centroids = np.empty_like(centroids)
        for j in range(k):
            new_centroids[j] = pts[assign == j].mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        history.append(_objective(pts, centroids))
        if shift < tol:
            break
    centroids.flags.writeable = False
    return KMeansResult(centroids=centroids, objective_history=tuple(history),
                        iterations=iterations)


def label_mode(labels) -> int:
    """Most frequent label; ties break toward the smaller label."""
    values, counts = np.unique(np.asarray(labels, dtype=np.int64), return_counts=True)
    return int(values[int(np.argmax(counts))])


def beam_to_division(beam: int, num_divisions: int, num_beams: int) -> int:
    """Rescale a beam index in [0, num_beams) to a division in [1, num_divisions]."""
    return int(beam * num_divisions // num_beams) + 1


@dataclass(frozen=True)
class KnowledgeBase:
    standardizer: Standardizer
    centroids: np.ndarray                 # (k, 2) standardized GPS
    centroid_division: np.ndarray         # (k,) division index, 1-based
    num_divisions: int
    window_half_width: int
    num_beams: int
    seed: int

    def __post_init__(self):
        self.centroids.flags.writeable = False
        self.centroid_division.flags.writeable = False
        if np.any(self.centroid_division < 1) or np.any(self.centroid_division > self.num_divisions):
            raise LocalizationError("centroid divisions outside [1, num_divisions]")
        if not np.all(np.isfinite(self.centroids)):
            raise LocalizationError("centroids must be finite")


def build_kb(training, k: int, num_divisions: int, window_half_width: int,
             num_beams: int, seed: int) -> KnowledgeBase:
    """Fit the knowledge base from (gps, beam label) training pairs."""
    if len(training) == 0:
        raise LocalizationError("empty training set")
    gps = np.asarray([t[0] for t in training], dtype=np.float64)
    labels = np.asarray([t[1] for t in training], dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= num_beams):
        raise LocalizationError("labels must be in [0, num_beams)")
    standardizer = fit_standardizer(gps)
    pts = standardizer.transform(gps)
    result = kmeans_fit(pts, k, rng_seed=seed)
    assign = assign_clusters(pts, result.centroids)
    divisions = np.empty(k, dtype=np.int64)
    for j in range(k):
        members = labels[assign == j]
        # reseeding repair keeps clusters populated; guard for safety
        mode = label_mode(members) if members.size else 0
        divisions[j] = beam_to_division(mode, num_divisions, num_beams)
    return KnowledgeBase(
        standardizer=standardizer,
        centroids=result.centroids,
        centroid_division=divisions,
        num_divisions=num_divisions,
        window_half_width=window_half_width,
        num_beams=num_beams,
        seed=seed,
    )


def division_window(kb: KnowledgeBase, division: int) -> tuple[int, int]:
    """Division interval [division - psi, division + psi], clamped to [1, F]."""
    lo = max(1, division - kb.window_half_width)
    hi = min(kb.num_divisions, division + kb.window_half_width)
    return lo, hi


def window_columns(kb: KnowledgeBase, division: int, num_cols: int) -> tuple[int, int]:
    """Pixel-column interval covered by the clamped division window."""
    lo, hi = division_window(kb, division)
    col_lo = (lo - 1) * num_cols // kb.num_divisions
    col_hi = hi * num_cols // kb.num_divisions
    return col_lo, col_hi


def nearest_centroid(kb: KnowledgeBase, query_gps) -> int:
    q = kb.standardizer.transform(np.asarray(query_gps, dtype=np.float64)[None, :])
    return int(assign_clusters(q, kb.centroids)[0])


@dataclass(frozen=True)
class TargetMask:
    mask: np.ndarray                      # full-size binary image
    selected_bbox: tuple[int, int, int, int]
    window: tuple[int, int]               # pixel columns [lo, hi)
    division: int
    selected_vehicle_id: int

    def __post_init__(self):
        self.mask.flags.writeable = False


def localize_target(frame: Frame, kb: KnowledgeBase, query_gps) -> TargetMask:
    """Select the target detection through the knowledge-base window."""
    division = int(kb.centroid_division[nearest_centroid(kb, query_gps)])
    num_cols = frame.full_mask.shape[1]
    col_lo, col_hi = window_columns(kb, division, num_cols)

    candidates = []
    for det in frame.detections:
        x_min, _, x_max, _ = det.bbox
        if x_min < col_hi and x_max > col_lo:
            candidates.append(det)
    if not candidates:
        raise NoDetectionInWindow(f"no detection intersects columns [{col_lo}, {col_hi})")

    if len(candidates) == 1:
        chosen = candidates[0]
    else:
        # largest mask area inside the window; ties keep the earlier detection
        best_area = -1
        chosen = candidates[0]
        for det in candidates:
            x_min, y_min, x_max, y_max = det.bbox
            a = max(x_min, col_lo) - x_min
            b = min(x_max, col_hi) - x_min
            area = int(det.mask[:, a:b].sum())
            if area > best_area:
                best_area = area
                chosen = det
    x_min, y_min, x_max, y_max = chosen.bbox
    out = np.zeros_like(frame.full_mask)
    out[y_min:y_max, x_min:x_max] = chosen.mask
    return TargetMask(mask=out, selected_bbox=chosen.bbox, window=(col_lo, col_hi),
                      division=division, selected_vehicle_id=chosen.vehicle_id)


def save_kb(kb: KnowledgeBase, path: str) -> None:
    doc = {
        "mean": kb.standardizer.mean.tolist(),
        "std": kb.standardizer.std.tolist(),
        "centroids": kb.centroids.tolist(),
        "centroid_division": kb.centroid_division.tolist(),
        "num_divisions": kb.num_divisions,
        "window_half_width": kb.window_half_width,
        "num_beams": kb.num_beams,
        "seed": kb.seed,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_kb(path: str) -> KnowledgeBase:
    with open(path, encoding="ascii") as fh:
        doc = json.load(fh)
    return KnowledgeBase(
        standardizer=Standardizer(mean=np.asarray(doc["mean"]), std=np.asarray(doc["std"])),
        centroids=np.asarray(doc["centroids"], dtype=np.float64),
        centroid_division=np.asarray(doc["centroid_division"], dtype=np.int64),
        num_divisions=doc["num_divisions"],
        window_half_width=doc["window_half_width"],
        num_beams=doc["num_beams"],
        seed=doc["seed"],
    )
