"""
Synthetic Corpus - deterministic stand-in for a scanned face database

Every shape is a cylindrical patch sampled on the subdivision grid, pushed
along its normals by a set of Gaussian bumps whose amplitudes are the latent
factors of the corpus:

    shape_t = base + sum_j latent_tj * bump_j * normal + noise

WHY SYNTHETIC?
The latent values are known exactly, so tests can check that models recover
them, that fits land where they should, and that occlusion damage stays local.
The curved base makes rigid alignment non-trivial, and the grid structure
means no resampling is needed to train the local model.

Corruptions (occlusion, noise, outliers) act on point clouds and are seeded.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

import config
from .errors import EmptyPointCloudError
from .geometry import LandmarkSet, PointCloud, QuadMesh
from .logger import pipeline_logger
from .meshio import load_landmarks, load_mesh, save_landmarks, save_mesh
from .models import TrainingSet
from .subdivision import SubdivisionHierarchy
from .utils import dump_json, load_json_file, validate_dict_keys

CYLINDER_RADIUS_MM = 100.0

# landmark label -> (u, v) in the unit patch; u runs down the rows, v across the columns
LANDMARK_UV = {
    "corner_tl": (0.0, 0.0),
    "corner_tr": (0.0, 1.0),
    "corner_bl": (1.0, 0.0),
    "corner_br": (1.0, 1.0),
    "center": (0.5, 0.5),
    "mid_top": (0.0, 0.5),
    "mid_bottom": (1.0, 0.5),
    "mid_left": (0.5, 0.0),
    "mid_right": (0.5, 1.0),
    "left_cheek": (0.55, 0.25),
    "right_cheek": (0.55, 0.75),
}
INIT_LANDMARKS = ("corner_tl", "corner_tr", "corner_bl", "corner_br", "center")
EVAL_LANDMARKS = tuple(label for label in LANDMARK_UV if label not in INIT_LANDMARKS)


@dataclass(frozen=True)
class BumpFactor:
    """
    Gaussian bump at `center_uv` with stddev `radius` mm; amplitude drawn from
    `amplitude`. A mirrored factor adds the same bump reflected across the
    vertical midline (v -> 1 - v), one latent value driving both sides.
    """

    center_uv: Tuple[float, float]
    radius: float
    amplitude: Tuple[float, float]
    mirrored: bool = False


DEFAULT_FACTORS = (
    BumpFactor((0.5, 0.5), 14.0, (-8.0, 8.0)),
    BumpFactor((0.35, 0.3), 12.0, (-6.0, 6.0), mirrored=True),
    BumpFactor((0.8, 0.5), 16.0, (-7.0, 7.0)),
    BumpFactor((0.15, 0.5), 20.0, (-5.0, 5.0)),
    BumpFactor((0.6, 0.2), 12.0, (-5.0, 5.0)),
)


@dataclass(frozen=True)
class OcclusionPreset:
    center_uv: Tuple[float, float]
    radius: float
    outliers: int = 0


OCCLUSION_PRESETS = {
    "left_eye_hand": OcclusionPreset((0.35, 0.25), 25.0, outliers=200),
    "mouth_hand": OcclusionPreset((0.78, 0.5), 25.0, outliers=200),
    "hair": OcclusionPreset((0.05, 0.5), 35.0, outliers=0),
}


@dataclass
class SynthSpec:
    base_dims: Tuple[int, int] = config.DEFAULT_BASE_DIMS
    levels: int = 3
    T: int = 20
    width: float = 160.0          # mm, across the columns
    height: float = 120.0         # mm, down the rows
    factors: Tuple[BumpFactor, ...] = DEFAULT_FACTORS
    noise_stddev: float = 0.0
    pose_jitter: float = 0.0      # rotation stddev (rad); translation stddev is 10 mm per rad
    seed: int = config.DEFAULT_SEED

    def __post_init__(self):
        self.factors = tuple(f if isinstance(f, BumpFactor) else BumpFactor(
            tuple(f["center_uv"]), float(f["radius"]), tuple(f["amplitude"]), bool(f.get("mirrored", False))) for f in self.factors)
        for f in self.factors:
            if not f.radius > 0:
                raise ValueError(f"bump radius must be > 0, got {f.radius}")
            if not all(0.0 <= x <= 1.0 for x in f.center_uv):
                raise ValueError(f"bump center {f.center_uv} outside the unit patch")
            if f.amplitude[0] > f.amplitude[1]:
                raise ValueError(f"amplitude range {f.amplitude} is reversed")
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if self.noise_stddev < 0 or self.pose_jitter < 0:
            raise ValueError("noise_stddev and pose_jitter must be >= 0")

    @property
    def hierarchy(self):
        return SubdivisionHierarchy(self.base_dims, self.levels)

    def to_dict(self):
        return {
            "base_dims": list(self.base_dims), "levels": self.levels, "T": self.T,
            "width": self.width, "height": self.height,
            "factors": [{"center_uv": list(f.center_uv), "radius": f.radius, "amplitude": list(f.amplitude),
                         "mirrored": f.mirrored}
                        for f in self.factors],
            "noise_stddev": self.noise_stddev, "pose_jitter": self.pose_jitter, "seed": self.seed,
        }


@dataclass
class SynthCorpus:
    spec: SynthSpec
    training: TrainingSet
    latents: np.ndarray                    # (T, factors)
    landmark_ids: Dict[str, int]
    landmarks: List[LandmarkSet] = field(default_factory=list)

    @property
    def hierarchy(self):
        return self.spec.hierarchy


def uv_grid(hierarchy):
    rows, cols = hierarchy.dims()
    u, v = np.meshgrid(np.linspace(0.0, 1.0, rows), np.linspace(0.0, 1.0, cols), indexing="ij")
    return u, v


def grid_index(hierarchy, uv):
    """Finest-grid vertex nearest to a (u, v) position."""
    rows, cols = hierarchy.dims()
    r = int(round(uv[0] * (rows - 1)))
    c = int(round(uv[1] * (cols - 1)))
    return r * cols + c


def landmark_ids(hierarchy):
    return {label: grid_index(hierarchy, uv) for label, uv in LANDMARK_UV.items()}


def base_patch(spec):
    """Cylindrical base vertices and unit normals, both (n, 3)."""
    u, v = uv_grid(spec.hierarchy)
    theta = (v - 0.5) * spec.width / CYLINDER_RADIUS_MM
    y = (0.5 - u) * spec.height
    points = np.stack([CYLINDER_RADIUS_MM * np.sin(theta), y,
                       CYLINDER_RADIUS_MM * np.cos(theta) - CYLINDER_RADIUS_MM], axis=-1)
    normals = np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=-1)
    return points.reshape(-1, 3), normals.reshape(-1, 3)


def bump_fields(spec):
    """(factors, n) bump profiles, distances measured in mm on the unrolled patch."""
    u, v = uv_grid(spec.hierarchy)
    fields = []
    for f in spec.factors:
        centers = [f.center_uv] + ([(f.center_uv[0], 1.0 - f.center_uv[1])] if f.mirrored else [])
        profile = np.zeros_like(u)
        for cu, cv in centers:
            du = (u - cu) * spec.height
            dv = (v - cv) * spec.width
            profile += np.exp(-(du ** 2 + dv ** 2) / (2.0 * f.radius ** 2))
        fields.append(profile.ravel())
    return np.array(fields).reshape(len(spec.factors), -1)


def _random_rotation(rng, stddev):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.normal(0.0, stddev)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def generate_corpus(spec, run_id="synth"):
    """
    Build the corpus described by `spec`.

    Shapes alternate between cluster labels "A" and "B"; the first factor's
    amplitude is drawn from the lower half of its range for A and the upper
    half for B, so the labels are meaningful strata.
    """
    try:
        rng = np.random.default_rng(spec.seed)
        hierarchy = spec.hierarchy
        base, normals = base_patch(spec)
        bumps = bump_fields(spec)
        T, F = spec.T, len(spec.factors)

        labels = ["A" if t % 2 == 0 else "B" for t in range(T)]
        latents = np.zeros((T, F))
        for j, f in enumerate(spec.factors):
            lo, hi = f.amplitude
            if j == 0:
                mid = 0.5 * (lo + hi)
                lows = np.where(np.array(labels) == "A", lo, mid)
                highs = np.where(np.array(labels) == "A", mid, hi)
                latents[:, j] = rng.uniform(lows, highs)
            else:
                latents[:, j] = rng.uniform(lo, hi, size=T)

        displacement = latents @ bumps
        shapes = base[None] + displacement[:, :, None] * normals[None]
        if spec.noise_stddev > 0:
            shapes = shapes + rng.normal(0.0, spec.noise_stddev, size=shapes.shape)
        if spec.pose_jitter > 0:
            for t in range(T):
                R = _random_rotation(rng, spec.pose_jitter)
                shift = rng.normal(0.0, 10.0 * spec.pose_jitter, size=3)
                shapes[t] = shapes[t] @ R.T + shift

        ids = landmark_ids(hierarchy)
        landmark_sets = [LandmarkSet.from_positions({label: shapes[t, idx] for label, idx in ids.items()})
                         for t in range(T)]
        training = TrainingSet(
            shapes, [f"subject_{t:03d}" for t in range(T)], labels, aligned=False,
            grid_dims=hierarchy.dims(), provenance={"source": "synthetic", "seed": spec.seed},
        )
        pipeline_logger.log_stage("SYNTH", "SUCCESS", run_id,
                                  {"T": T, "n": hierarchy.n, "factors": F, "seed": spec.seed})
        return SynthCorpus(spec, training, latents, ids, landmark_sets)
    except Exception as e:
        pipeline_logger.log_error(run_id, "SYNTH", e)
        raise


def write_corpus(corpus, out_dir, run_id="synth"):
    """Numbered binary PLY files, landmark files and a manifest with latents and seeds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, cols = corpus.hierarchy.dims()
    entries = []
    for t, shape in enumerate(corpus.training.shapes):
        stem = f"shape_{t:03d}"
        save_mesh(QuadMesh.from_grid(shape, rows, cols), out_dir / f"{stem}.ply")
        save_landmarks(corpus.landmarks[t], out_dir / f"{stem}.lm")
        entries.append({
            "mesh": f"{stem}.ply",
            "landmarks": f"{stem}.lm",
            "subject_id": corpus.training.subject_ids[t],
            "label": corpus.training.labels[t],
            "latents": corpus.latents[t].tolist(),
        })
    manifest = {
        "spec": corpus.spec.to_dict(),
        "landmark_ids": corpus.landmark_ids,
        "init_landmarks": list(INIT_LANDMARKS),
        "eval_landmarks": list(EVAL_LANDMARKS),
        "shapes": entries,
    }
    path = dump_json(manifest, out_dir / "manifest.json")
    pipeline_logger.log_stage("SYNTH", "SUCCESS", run_id, {"written": len(entries), "manifest": str(path)})
    return path


def load_corpus(manifest_path):
    """
    Read a corpus manifest back: meshes, landmark sets, latents (when
    present) and the landmark vertex ids.

    Returns:
        (meshes, landmark_sets, manifest dict)
    """
    manifest_path = Path(manifest_path)
    manifest = load_json_file(manifest_path, "corpus manifest")
    validate_dict_keys(manifest, ["shapes"], "corpus manifest")
    meshes, landmark_sets = [], []
    for entry in manifest["shapes"]:
        validate_dict_keys(entry, ["mesh"], "corpus manifest entry")
        meshes.append(load_mesh(manifest_path.parent / entry["mesh"]))
        lm = entry.get("landmarks")
        landmark_sets.append(load_landmarks(manifest_path.parent / lm) if lm else LandmarkSet())
    return meshes, landmark_sets, manifest


# ---------------------------------------------------------------------------
# corruption
# ---------------------------------------------------------------------------

def occlude(cloud, region, outliers=0, seed=config.DEFAULT_SEED):
    """
    Remove the points strictly inside `region` = (center, radius); optionally
    insert an outlier blob in front of the region (a hand or hair surrogate).

    Raises:
        EmptyPointCloudError: nothing is left
    """
    center, radius = region
    center = np.asarray(center, dtype=float).reshape(3)
    if radius < 0:
        raise ValueError(f"occlusion radius must be >= 0, got {radius}")
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    keep = np.linalg.norm(cloud.points - center, axis=1) >= radius
    if not keep.any():
        raise EmptyPointCloudError("occlusion removed every point of the cloud")

    points = cloud.points[keep]
    mask = cloud.outlier_mask[keep]
    metadata = dict(cloud.metadata)
    metadata.setdefault("occlusions", []).append(
        {"center": center.tolist(), "radius": float(radius), "removed": int((~keep).sum()),
         "outliers": int(outliers)})
    if outliers > 0:
        rng = np.random.default_rng(seed)
        direction = rng.standard_normal((int(outliers), 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        blob = center + np.array([0.0, 0.0, 0.5 * radius]) + \
            direction * (0.5 * radius * rng.uniform(0.0, 1.0, (int(outliers), 1)) ** (1 / 3))
        points = np.vstack([points, blob])
        mask = np.concatenate([mask, np.ones(int(outliers), dtype=bool)])
    return PointCloud(points, mask, metadata)


def add_noise(cloud, stddev, outlier_fraction=0.0, seed=config.DEFAULT_SEED):
    """Isotropic Gaussian noise plus uniform outliers in the bounding box inflated by 10%."""
    if stddev < 0:
        raise ValueError(f"noise stddev must be >= 0, got {stddev}")
    if not 0.0 <= outlier_fraction <= 1.0:
        raise ValueError(f"outlier fraction must be in [0, 1], got {outlier_fraction}")
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    rng = np.random.default_rng(seed)
    points = cloud.points.copy()
    if stddev > 0:
        points = points + rng.normal(0.0, stddev, size=points.shape)
    mask = cloud.outlier_mask.copy()
    count = int(round(outlier_fraction * cloud.m))
    if count > 0:
        lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
        pad = 0.1 * (hi - lo)
        points = np.vstack([points, rng.uniform(lo - pad, hi + pad, size=(count, 3))])
        mask = np.concatenate([mask, np.ones(count, dtype=bool)])
    metadata = dict(cloud.metadata, noise_stddev=float(stddev), outlier_fraction=float(outlier_fraction))
    return PointCloud(points, mask, metadata)


def densify_grid(vertices, dims, factor=3):
    """
    Bilinear samples of a grid at `factor` sub-steps per cell. The original
    vertices are among the samples; (factor*(rows-1)+1) * (factor*(cols-1)+1)
    points in total.
    """
    rows, cols = dims
    g = np.asarray(vertices, dtype=float).reshape(rows, cols, 3)
    fr = np.arange((rows - 1) * factor + 1) / factor
    fc = np.arange((cols - 1) * factor + 1) / factor
    r0 = np.minimum(fr.astype(int), rows - 2)
    c0 = np.minimum(fc.astype(int), cols - 2)
    a = (fr - r0)[:, None, None]
    b = (fc - c0)[None, :, None]
    R0, C0 = np.meshgrid(r0, c0, indexing="ij")
    out = ((1 - a) * (1 - b) * g[R0, C0] + (1 - a) * b * g[R0, C0 + 1]
           + a * (1 - b) * g[R0 + 1, C0] + a * b * g[R0 + 1, C0 + 1])
    return out.reshape(-1, 3)


def occlusion_region(preset, shape, hierarchy):
    """(center, radius) of a named preset on a given shape."""
    if isinstance(preset, str):
        preset = OCCLUSION_PRESETS[preset]
    center = np.asarray(shape, dtype=float).reshape(-1, 3)[grid_index(hierarchy, preset.center_uv)]
    return center, preset.radius
