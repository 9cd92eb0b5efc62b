"""Synthetic shoulder-like phantoms with deliberately degraded labels.

The humerus analogue is a ball on a cylindrical shaft: compact and
consistent between cases. The scapula analogue is a thin, gently curved
elliptical plate with a ridge ("spine") on its back: thin, variable and
easy to mislabel. Shape sizes are given in mm for a 48 x 48 x 32 mm field
of view and scale with larger fields of view.

Intensities mimic low-contrast MR: bone is slightly darker than the
surrounding tissue, the class image is blurred (partial volume), multiplied
by a smooth bias field, corrupted with Gaussian noise and min-max
normalized.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import PhantomError
from .io import load_volume, store_volume
from .volume import LabelVolume, ScalarVolume, VolumeGeometry, normalize_min_max

REFERENCE_EXTENT_MM = (47.0, 47.0, 31.0)

Range = tuple[float, float]


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry plus sampling ranges for every random phantom parameter."""

    dims: tuple[int, int, int] = (48, 48, 32)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    # humerus: ball + shaft
    head_radius: Range = (6.0, 8.5)
    head_jitter: Range = (-2.0, 2.0)
    shaft_radius: Range = (3.0, 4.5)
    shaft_length: Range = (14.0, 20.0)
    shaft_angle_deg: Range = (0.0, 25.0)
    shaft_tilt_deg: Range = (-10.0, 10.0)
    # scapula: curved plate + spine ridge
    plate_gap: Range = (2.5, 4.0)
    plate_thickness: Range = (2.2, 3.2)
    plate_half_width: Range = (9.0, 13.0)
    plate_half_height: Range = (6.0, 10.0)
    plate_angle_deg: Range = (-15.0, 15.0)
    plate_wave_amplitude: Range = (0.0, 1.5)
    plate_wave_length: Range = (12.0, 24.0)
    spine_height: Range = (3.5, 6.0)
    spine_thickness: Range = (2.0, 3.0)
    # intensities (arbitrary units before normalization)
    background_mean: Range = (0.55, 0.65)
    humerus_contrast: Range = (0.15, 0.25)
    scapula_contrast: Range = (0.12, 0.22)
    blur_sigma_vox: Range = (0.5, 0.8)
    bias_amplitude: Range = (0.05, 0.25)
    noise_std: Range = (0.03, 0.06)
    seed: int = 0

    @property
    def geometry(self) -> VolumeGeometry:
        return VolumeGeometry(self.dims, self.spacing)


@dataclass(frozen=True)
class CorruptionSpec:
    """Label degradation; every effect scales with ``severity`` in [0, 1].

    Each axial slice is, with probability ``severity``, dilated or eroded
    in-plane per class by 1..``jitter_radius`` voxels; boundary voxels flip
    with probability ``severity * flip_prob``; whole slices are blanked with
    probability ``severity * dropout_prob``.
    """

    severity: float = 0.5
    jitter_radius: int = 2
    dropout_prob: float = 0.15
    flip_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.severity <= 1:
            raise ValueError(f"severity must be in [0, 1], got {self.severity}")
        if self.jitter_radius < 0:
            raise ValueError("jitter_radius must be >= 0")
        for name in ("dropout_prob", "flip_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


def _uniform(rng: np.random.Generator, r: Range) -> float:
    lo, hi = r
    return float(lo if hi == lo else rng.uniform(lo, hi))


def sample_parameters(spec: PhantomSpec) -> dict[str, float]:
    """Draw one set of shape/intensity parameters (mm, scaled to the field of view)."""
    rng = np.random.default_rng(spec.seed)
    g = spec.geometry
    extent = [(g.dims[a] - 1) * g.spacing[a] for a in range(3)]
    scale = min(extent[a] / REFERENCE_EXTENT_MM[a] for a in range(3))
    p: dict[str, float] = {"scale": scale}
    names = [f for f in PhantomSpec.__dataclass_fields__ if isinstance(getattr(spec, f), tuple) and f not in ("dims", "spacing")]
    for name in names:
        p[name] = _uniform(rng, getattr(spec, name))
    for name in ("head_radius", "head_jitter", "shaft_radius", "shaft_length", "plate_gap",
                 "plate_thickness", "plate_half_width", "plate_half_height",
                 "plate_wave_amplitude", "plate_wave_length", "spine_height", "spine_thickness"):
        p[name] *= scale
    p["head_x"] = g.origin[0] + extent[0] * 0.42 + p.pop("head_jitter")
    p["head_y"] = g.origin[1] + extent[1] * 0.63 + _uniform(rng, (-2.0, 2.0)) * scale
    p["head_z"] = g.origin[2] + extent[2] * 0.5 + _uniform(rng, (-2.0, 2.0)) * scale
    p["plate_dy"] = _uniform(rng, (-5.0, -3.0)) * scale
    p["plate_dz"] = _uniform(rng, (-1.5, 1.5)) * scale
    p["spine_dz"] = _uniform(rng, (-0.3, 0.3))
    p["wave_phase"] = _uniform(rng, (0.0, 2 * math.pi))
    p["bias_kx"], p["bias_ky"], p["bias_kz"] = (float(v) for v in rng.uniform(-1.0, 1.0, 3))
    p["bias_phase"] = _uniform(rng, (0.0, 2 * math.pi))
    p["noise_seed"] = int(rng.integers(2**31))
    return p


def _coords(g: VolumeGeometry):
    z, y, x = np.meshgrid(*(g.axis_positions(a) for a in (2, 1, 0)), indexing="ij")
    return x, y, z


def shape_labels(g: VolumeGeometry, p: dict[str, float]) -> np.ndarray:
    x, y, z = _coords(g)
    hx, hy, hz = p["head_x"], p["head_y"], p["head_z"]

    head = (x - hx) ** 2 + (y - hy) ** 2 + (z - hz) ** 2 <= p["head_radius"] ** 2
    a, t = math.radians(p["shaft_angle_deg"]), math.radians(p["shaft_tilt_deg"])
    d = np.array([-math.sin(a) * math.cos(t), -math.cos(a) * math.cos(t), math.sin(t)])
    rx, ry, rz = x - hx, y - hy, z - hz
    along = rx * d[0] + ry * d[1] + rz * d[2]
    radial2 = rx**2 + ry**2 + rz**2 - along**2
    shaft = (along >= 0) & (along <= p["shaft_length"]) & (radial2 <= p["shaft_radius"] ** 2)
    humerus = head | shaft

    b = math.radians(p["plate_angle_deg"])
    n = np.array([math.cos(b), math.sin(b), 0.0])
    e1 = np.array([-math.sin(b), math.cos(b), 0.0])
    half_t = p["plate_thickness"] / 2
    cx = hx + p["head_radius"] + p["plate_gap"] + half_t + p["plate_wave_amplitude"]
    cy, cz = hy + p["plate_dy"], hz + p["plate_dz"]
    px, py, pz = x - cx, y - cy, z - cz
    u = px * e1[0] + py * e1[1]
    w = pz
    offset = px * n[0] + py * n[1]
    offset = offset - p["plate_wave_amplitude"] * np.sin(2 * math.pi * u / p["plate_wave_length"] + p["wave_phase"])
    inside = (u / p["plate_half_width"]) ** 2 + (w / p["plate_half_height"]) ** 2 <= 1.0
    plate = inside & (np.abs(offset) <= half_t)
    spine_w = p["spine_dz"] * p["plate_half_height"]
    spine = (
        inside
        & (offset > half_t - 0.5)
        & (offset <= half_t + p["spine_height"])
        & (np.abs(w - spine_w) <= p["spine_thickness"] / 2)
        & (u <= 0.7 * p["plate_half_width"])
    )
    scapula = (plate | spine) & ~humerus

    labels = np.zeros(g.shape, dtype=np.uint8)
    labels[humerus] = 1
    labels[scapula] = 2
    return labels


def _check_inside(labels: np.ndarray) -> None:
    fg = labels > 0
    if fg[0].any() or fg[-1].any() or fg[:, 0].any() or fg[:, -1].any() or fg[:, :, 0].any() or fg[:, :, -1].any():
        raise PhantomError("phantom shapes exceed the volume bounds; enlarge dims or shrink the ranges")
    for c in (1, 2):
        if not (labels == c).any():
            raise PhantomError(f"class {c} is empty; check the phantom ranges")


def render_intensities(g: VolumeGeometry, labels: np.ndarray, p: dict[str, float]) -> np.ndarray:
    """Raw (unnormalized) MR-like image for ``labels``."""
    means = np.array([
        p["background_mean"],
        p["background_mean"] - p["humerus_contrast"],
        p["background_mean"] - p["scapula_contrast"],
    ])
    img = means[labels]
    img = ndimage.gaussian_filter(img, p["blur_sigma_vox"], mode="nearest")
    x, y, z = _coords(g)
    ext = [max((g.dims[a] - 1) * g.spacing[a], 1e-9) for a in range(3)]
    phase = (
        p["bias_kx"] * (x - g.origin[0]) / ext[0]
        + p["bias_ky"] * (y - g.origin[1]) / ext[1]
        + p["bias_kz"] * (z - g.origin[2]) / ext[2]
    )
    bias = 1.0 + p["bias_amplitude"] * np.sin(math.pi * phase + p["bias_phase"])
    noise = np.random.default_rng(p["noise_seed"]).normal(0.0, p["noise_std"], size=g.shape)
    return img * bias + noise


def generate_phantom(spec: PhantomSpec, return_parameters: bool = False):
    """Normalized image and clean labels for one random phantom.

    With ``return_parameters`` a third element holds the sampled parameter
    dict (sizes in mm) and the raw image under ``"raw_image"``.
    """
    g = spec.geometry
    p = sample_parameters(spec)
    labels = shape_labels(g, p)
    _check_inside(labels)
    raw = render_intensities(g, labels, p)
    image = normalize_min_max(ScalarVolume(g, raw))
    clean = LabelVolume(g, labels)
    if return_parameters:
        return image, clean, dict(p, raw_image=raw)
    return image, clean


# --------------------------------------------------------------------------
# corruption
# --------------------------------------------------------------------------

_CROSS_2D = ndimage.generate_binary_structure(2, 1)


def _slice_jitter(sl: np.ndarray, rng: np.random.Generator, severity: float, radius: int) -> np.ndarray:
    out = sl.copy()
    for c in (1, 2):
        if radius == 0 or rng.random() >= severity:
            continue
        r = int(rng.integers(1, radius + 1))
        grow = rng.random() < 0.5
        mask = sl == c
        if grow:
            grown = ndimage.binary_dilation(mask, _CROSS_2D, iterations=r)
            out[grown & (out == 0)] = c
        else:
            shrunk = ndimage.binary_erosion(mask, _CROSS_2D, iterations=r, border_value=0)
            out[mask & ~shrunk] = 0
    return out


def _slice_flips(sl: np.ndarray, rng: np.random.Generator, prob: float) -> np.ndarray:
    if prob <= 0:
        return sl
    fg = sl > 0
    inner = fg & ~ndimage.binary_erosion(fg, _CROSS_2D, border_value=0)
    outer = ndimage.binary_dilation(fg, _CROSS_2D) & ~fg
    out = sl.copy()
    flip_in = inner & (rng.random(sl.shape) < prob)
    out[flip_in] = 0
    # outer ring voxels take the class of an adjacent foreground voxel
    nearest_class = ndimage.grey_dilation(sl, footprint=_CROSS_2D)
    flip_out = outer & (rng.random(sl.shape) < prob)
    out[flip_out] = nearest_class[flip_out]
    return out


def corrupt_labels(clean: LabelVolume, spec: CorruptionSpec) -> LabelVolume:
    """Degrade labels slice by slice along z, emulating manual contouring."""
    if spec.severity == 0:
        return LabelVolume(clean.geometry, clean.data.copy())
    rng = np.random.default_rng(spec.seed)
    s = spec.severity
    out = clean.data.copy()
    for k in range(out.shape[0]):
        sl = _slice_jitter(out[k], rng, s, spec.jitter_radius)
        sl = _slice_flips(sl, rng, s * spec.flip_prob)
        if rng.random() < s * spec.dropout_prob:
            sl = np.zeros_like(sl)
        out[k] = sl
    return LabelVolume(clean.geometry, out)


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------

@dataclass
class BenchmarkCase:
    case_id: str
    image: ScalarVolume
    gt: LabelVolume
    clean: LabelVolume
    seed: int
    paths: dict[str, Path] = field(default_factory=dict)


MANIFEST_FIELDS = ("case_id", "image", "corrupted_gt", "clean_ref", "seed")


def case_seeds(n: int, seed: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def generate_benchmark(
    n: int,
    phantom: PhantomSpec | None = None,
    corruption: CorruptionSpec | None = None,
    seed: int = 0,
    out_dir=None,
) -> list[BenchmarkCase]:
    """``n`` independent phantoms with corrupted and clean labels.

    When ``out_dir`` is given every volume is written there along with
    ``manifest.csv``.
    """
    if n < 1:
        raise PhantomError("benchmark needs at least one case")
    phantom = phantom or PhantomSpec()
    corruption = corruption or CorruptionSpec()
    cases = []
    for i, s in enumerate(case_seeds(n, seed)):
        image, clean = generate_phantom(replace(phantom, seed=s))
        gt = corrupt_labels(clean, replace(corruption, seed=s + 1))
        cases.append(BenchmarkCase(f"case{i:03d}", image, gt, clean, s))
    if out_dir is not None:
        write_benchmark(cases, out_dir)
    return cases


def write_benchmark(cases: Sequence[BenchmarkCase], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for c in cases:
            paths = {
                "image": store_volume(c.image, out_dir / f"{c.case_id}_image"),
                "corrupted_gt": store_volume(c.gt, out_dir / f"{c.case_id}_gt"),
                "clean_ref": store_volume(c.clean, out_dir / f"{c.case_id}_clean"),
            }
            c.paths = paths
            w.writerow([c.case_id, *(paths[k].name for k in MANIFEST_FIELDS[1:4]), c.seed])
    return manifest


def load_benchmark(manifest) -> list[BenchmarkCase]:
    manifest = Path(manifest)
    root = manifest.parent
    cases = []
    with manifest.open(newline="") as fh:
        for row in csv.DictReader(fh):
            paths = {k: root / row[k] for k in MANIFEST_FIELDS[1:4] if row.get(k)}
            image = load_volume(paths["image"])
            gt = load_volume(paths["corrupted_gt"]) if "corrupted_gt" in paths else None
            clean = load_volume(paths["clean_ref"]) if "clean_ref" in paths else gt
            cases.append(BenchmarkCase(row["case_id"], image, gt, clean, int(row.get("seed") or 0), paths))
    return cases


def spec_to_dict(spec) -> dict:
    return asdict(spec)
