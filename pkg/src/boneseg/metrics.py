"""Overlap and surface-distance metrics on anisotropic grids.

Surfaces are foreground voxels with at least one 6-connected neighbour that
is background or outside the grid. Distances are between voxel centers in
mm. Nearest surface voxels are located with a Euclidean distance transform;
the distance to the chosen voxel is then evaluated with :func:`physical_distance`
so every code path (including brute-force checks) agrees bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import UndefinedMetricError
from .volume import LabelVolume, check_same_geometry

TARGETS: dict[str, tuple[int, ...]] = {"humerus": (1,), "scapula": (2,), "both": (1, 2)}
TARGET_ORDER = ("humerus", "scapula", "both")
METRIC_NAMES = ("dsc", "hd", "asd")

_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def target_classes(target) -> tuple[int, ...]:
    if isinstance(target, str):
        try:
            return TARGETS[target]
        except KeyError:
            raise ValueError(f"unknown target {target!r}; expected one of {TARGET_ORDER}") from None
    if isinstance(target, (int, np.integer)):
        return (int(target),)
    return tuple(int(t) for t in target)


def target_mask(lbl: LabelVolume, target) -> np.ndarray:
    return np.isin(lbl.data, target_classes(target))


def physical_distance(delta_zyx: np.ndarray, spacing_xyz) -> np.ndarray:
    """Euclidean length of integer index offsets ``(..., 3)`` given in z, y, x order.

    The three squared terms are summed smallest first, so offsets that are
    axis permutations of each other on equally spaced axes give identical
    floats.
    """
    s = np.asarray(spacing_xyz, dtype=np.float64)[::-1]
    terms = np.sort((np.asarray(delta_zyx, dtype=np.float64) * s) ** 2, axis=-1)
    return np.sqrt((terms[..., 0] + terms[..., 1]) + terms[..., 2])


# --------------------------------------------------------------------------
# overlap
# --------------------------------------------------------------------------

def dice_masks(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (na + nb)


def dice(a: LabelVolume, b: LabelVolume, target="both") -> float:
    """Dice overlap of the target's voxel sets; 1.0 when both are empty."""
    check_same_geometry(a.geometry, b.geometry, "label volumes")
    return dice_masks(target_mask(a, target), target_mask(b, target))


# --------------------------------------------------------------------------
# surfaces and distances
# --------------------------------------------------------------------------

def surface_of(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_SIX_CONNECTED, border_value=0)
    return mask & ~interior


def surface_mask(lbl: LabelVolume, target="both") -> np.ndarray:
    """Boolean ``(nz, ny, nx)`` array of the target's surface voxels."""
    return surface_of(target_mask(lbl, target))


def surface_voxels(lbl: LabelVolume, target="both") -> np.ndarray:
    """Surface voxel indices as an ``(N, 3)`` array of ``(x, y, z)``, sorted."""
    zyx = np.argwhere(surface_mask(lbl, target))
    xyz = zyx[:, ::-1]
    return xyz[np.lexsort((xyz[:, 0], xyz[:, 1], xyz[:, 2]))]


def directed_surface_distances(surf_a: np.ndarray, surf_b: np.ndarray, spacing_xyz) -> np.ndarray:
    """Distance (mm) from each voxel of ``surf_a`` to the nearest voxel of ``surf_b``."""
    if not surf_a.any() or not surf_b.any():
        raise UndefinedMetricError("surface distance undefined for an empty surface")
    _, nearest = ndimage.distance_transform_edt(
        ~surf_b, sampling=tuple(spacing_xyz)[::-1], return_distances=True, return_indices=True
    )
    pts = np.argwhere(surf_a)
    feat = nearest[:, pts[:, 0], pts[:, 1], pts[:, 2]].T
    return physical_distance(pts - feat, spacing_xyz)


def _surface_pair(a: LabelVolume, b: LabelVolume, target):
    check_same_geometry(a.geometry, b.geometry, "label volumes")
    sa, sb = surface_mask(a, target), surface_mask(b, target)
    if not sa.any() or not sb.any():
        raise UndefinedMetricError(f"target {target!r} is empty in at least one volume")
    spacing = a.geometry.spacing
    return (
        directed_surface_distances(sa, sb, spacing),
        directed_surface_distances(sb, sa, spacing),
    )


def hausdorff(a: LabelVolume, b: LabelVolume, target="both", percentile: float = 100) -> float:
    """Symmetric Hausdorff distance (mm) between target surfaces.

    With ``percentile < 100`` each directed maximum is replaced by that
    percentile of the directed distances (e.g. 95 for HD95).
    """
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    d_ab, d_ba = _surface_pair(a, b, target)
    if percentile == 100:
        return float(max(d_ab.max(), d_ba.max()))
    return float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))


def asd(a: LabelVolume, b: LabelVolume, target="both") -> float:
    """Symmetric average surface distance (mm)."""
    d_ab, d_ba = _surface_pair(a, b, target)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class TargetMetrics:
    dsc: float
    hd: float = math.nan
    asd: float = math.nan
    dsc_defined: bool = True
    surface_defined: bool = True

    @property
    def defined(self) -> bool:
        """Surface metrics defined, i.e. the target is present in both volumes."""
        return self.surface_defined


@dataclass
class MetricsReport:
    """Per-target DSC/HD/ASD; ``counts`` holds how many cases fed each mean."""

    targets: dict[str, TargetMetrics]
    case_id: str = ""
    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def __getitem__(self, target: str) -> TargetMetrics:
        return self.targets[target]

    def row(self) -> list[float]:
        """Nine values in table order: humerus, scapula, both x (dsc, hd, asd)."""
        return [getattr(self.targets[t], m) for t in TARGET_ORDER for m in METRIC_NAMES]


def evaluate_case(pred: LabelVolume, truth: LabelVolume, case_id: str = "", percentile: float = 100) -> MetricsReport:
    check_same_geometry(pred.geometry, truth.geometry, "prediction and truth")
    spacing = truth.geometry.spacing
    out = {}
    for t in TARGET_ORDER:
        ma, mb = target_mask(pred, t), target_mask(truth, t)
        tm = TargetMetrics(dice_masks(ma, mb), dsc_defined=bool(ma.any() or mb.any()))
        sa, sb = surface_of(ma), surface_of(mb)
        if sa.any() and sb.any():
            d_ab = directed_surface_distances(sa, sb, spacing)
            d_ba = directed_surface_distances(sb, sa, spacing)
            if percentile == 100:
                tm.hd = float(max(d_ab.max(), d_ba.max()))
            else:
                tm.hd = float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))
            tm.asd = float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))
        else:
            tm.surface_defined = False
        out[t] = tm
    return MetricsReport(out, case_id)


def aggregate(reports: Sequence[MetricsReport], case_id: str = "mean") -> MetricsReport:
    """Arithmetic mean per target and metric over the entries that are defined."""
    if not reports:
        raise ValueError("nothing to aggregate")
    targets, counts = {}, {}
    for t in TARGET_ORDER:
        entries = [r.targets[t] for r in reports]
        dsc = [e.dsc for e in entries if e.dsc_defined]
        surf = [e for e in entries if e.surface_defined]
        targets[t] = TargetMetrics(
            dsc=float(np.mean(dsc)) if dsc else math.nan,
            hd=float(np.mean([e.hd for e in surf])) if surf else math.nan,
            asd=float(np.mean([e.asd for e in surf])) if surf else math.nan,
            dsc_defined=bool(dsc),
            surface_defined=bool(surf),
        )
        counts[t] = {
            "dsc": len(dsc),
            "surface": len(surf),
            "undefined": len(entries) - len(surf),
        }
    return MetricsReport(targets, case_id, counts)


REPORT_FIELDS = ("case_id", "target", "dsc", "hd", "asd", "defined")


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_reports_csv(reports: Iterable[MetricsReport], path) -> Path:
    """One row per (case, target), ordered by case id then target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reports = sorted(reports, key=lambda r: r.case_id)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            for t in TARGET_ORDER:
                m = r.targets[t]
                w.writerow([r.case_id, t, _fmt(m.dsc), _fmt(m.hd), _fmt(m.asd), int(m.defined)])
    return path


def read_reports_csv(path) -> list[MetricsReport]:
    by_case: dict[str, dict[str, TargetMetrics]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            hd, asd_ = float(row["hd"]), float(row["asd"])
            by_case.setdefault(row["case_id"], {})[row["target"]] = TargetMetrics(
                dsc=float(row["dsc"]),
                hd=hd,
                asd=asd_,
                # an undefined entry with DSC 1.0 can only be empty vs empty
                dsc_defined=bool(int(row["defined"])) or float(row["dsc"]) != 1.0,
                surface_defined=bool(int(row["defined"])),
            )
    return [MetricsReport(t, cid) for cid, t in by_case.items()]
