"""Volume containers, resampling, cropping and intensity normalization.

Arrays are stored C-ordered with shape ``(nz, ny, nx)`` so that x is the
fastest-varying axis in memory. Geometry tuples (dims, spacing, origin) are
always given in ``(x, y, z)`` order; use :attr:`VolumeGeometry.shape` to go
from one to the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, TypeVar, Union

import numpy as np

from .errors import GeometryError

NUM_CLASSES = 3
BACKGROUND, HUMERUS, SCAPULA = 0, 1, 2
CLASS_NAMES = ("background", "humerus", "scapula")


def _triple(values, name, cast):
    try:
        out = tuple(cast(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise GeometryError(f"{name} must be three numbers, got {values!r}") from exc
    if len(out) != 3:
        raise GeometryError(f"{name} must have 3 components, got {len(out)}")
    return out


@dataclass(frozen=True)
class VolumeGeometry:
    """Regular grid: dims (voxels), spacing (mm) and origin (mm), in x, y, z order.

    The physical position of voxel index ``i`` along an axis is
    ``origin + i * spacing``.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = _triple(self.dims, "dims", int)
        spacing = _triple(self.spacing, "spacing", float)
        origin = _triple(self.origin, "origin", float)
        if any(d < 1 for d in dims):
            raise GeometryError(f"dims must be >= 1, got {dims}")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise GeometryError(f"spacing must be strictly positive, got {spacing}")
        if not all(np.isfinite(o) for o in origin):
            raise GeometryError(f"origin must be finite, got {origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)``."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.dims))

    def axis_positions(self, axis: int) -> np.ndarray:
        """Physical coordinates (mm) of voxel centers along geometry axis 0=x, 1=y, 2=z."""
        return self.origin[axis] + np.arange(self.dims[axis]) * self.spacing[axis]

    def with_dims(self, dims) -> "VolumeGeometry":
        return VolumeGeometry(dims, self.spacing, self.origin)


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Real-valued intensities (float32) over a geometry."""

    geometry: VolumeGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.shape != self.geometry.shape:
            raise GeometryError(
                f"data shape {data.shape} does not match geometry shape {self.geometry.shape}"
            )
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Class ids per voxel: 0 background, 1 humerus, 2 scapula."""

    geometry: VolumeGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.shape != self.geometry.shape:
            raise GeometryError(
                f"data shape {raw.shape} does not match geometry shape {self.geometry.shape}"
            )
        if raw.size and (raw.min() < 0 or raw.max() >= NUM_CLASSES):
            raise ValueError(f"label values must lie in 0..{NUM_CLASSES - 1}")
        object.__setattr__(self, "data", np.ascontiguousarray(raw, dtype=np.uint8))

    def mask(self, classes) -> np.ndarray:
        """Boolean mask of voxels whose label is in ``classes``."""
        return np.isin(self.data, classes)


Volume = Union[ScalarVolume, LabelVolume]
V = TypeVar("V", ScalarVolume, LabelVolume)


def _rebuild(vol: V, geometry: VolumeGeometry, data: np.ndarray) -> V:
    return type(vol)(geometry, data)


def check_same_geometry(a: VolumeGeometry, b: VolumeGeometry, what: str = "volumes") -> None:
    if a != b:
        raise GeometryError(f"{what} have different geometry: {a} vs {b}")


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def _continuous_index(source: VolumeGeometry, target: VolumeGeometry, axis: int) -> np.ndarray:
    pos = target.axis_positions(axis)
    return (pos - source.origin[axis]) / source.spacing[axis]


def _axis_is_identity(source: VolumeGeometry, target: VolumeGeometry, axis: int) -> bool:
    return (
        source.dims[axis] == target.dims[axis]
        and source.spacing[axis] == target.spacing[axis]
        and source.origin[axis] == target.origin[axis]
    )


def _linear_along(data: np.ndarray, array_axis: int, cidx: np.ndarray) -> np.ndarray:
    n = data.shape[array_axis]
    if n == 1:
        return np.repeat(data, len(cidx), axis=array_axis)
    c = np.clip(cidx, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
    frac = c - i0
    lo = np.take(data, i0, axis=array_axis)
    hi = np.take(data, i0 + 1, axis=array_axis)
    bshape = [1] * data.ndim
    bshape[array_axis] = len(cidx)
    frac = frac.reshape(bshape)
    return lo * (1.0 - frac) + hi * frac


def nearest_index(cidx: np.ndarray, n: int) -> np.ndarray:
    """Round continuous indices half-up and clamp to ``[0, n-1]``."""
    return np.clip(np.floor(np.asarray(cidx) + 0.5), 0, n - 1).astype(np.intp)


def resample_trilinear(vol: ScalarVolume, target: VolumeGeometry) -> ScalarVolume:
    """Trilinear resampling onto ``target`` with edge-clamped sampling.

    Axis-aligned grids make trilinear interpolation separable, so it is done
    as three 1D linear passes. Axes whose geometry already matches are copied
    untouched, which keeps identity resampling bit-exact.
    """
    if not isinstance(target, VolumeGeometry):
        target = VolumeGeometry(*target)
    src = vol.geometry
    if src == target:
        return ScalarVolume(target, vol.data.copy())
    data = vol.data.astype(np.float64)
    for axis in range(3):
        if _axis_is_identity(src, target, axis):
            continue
        data = _linear_along(data, 2 - axis, _continuous_index(src, target, axis))
    return ScalarVolume(target, data.astype(np.float32))


def resample_nearest(lbl: LabelVolume, target: VolumeGeometry) -> LabelVolume:
    """Nearest-neighbour resampling in physical space (ties round up)."""
    if not isinstance(target, VolumeGeometry):
        target = VolumeGeometry(*target)
    src = lbl.geometry
    data = lbl.data
    for axis in range(3):
        if _axis_is_identity(src, target, axis):
            continue
        idx = nearest_index(_continuous_index(src, target, axis), src.dims[axis])
        data = np.take(data, idx, axis=2 - axis)
    return LabelVolume(target, data.copy())


def sample_trilinear(data: np.ndarray, cx, cy, cz) -> np.ndarray:
    """Trilinear lookup of a ``(nz, ny, nx)`` array at continuous index positions.

    Positions outside the grid are clamped to the nearest edge.
    """
    out = np.zeros(np.shape(cx), dtype=np.float64)
    corners = []
    for c, n in ((cx, data.shape[2]), (cy, data.shape[1]), (cz, data.shape[0])):
        c = np.clip(np.asarray(c, dtype=np.float64), 0.0, n - 1.0)
        if n == 1:
            i0 = np.zeros(c.shape, dtype=np.intp)
            corners.append((i0, i0, np.zeros_like(c)))
            continue
        i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
        corners.append((i0, i0 + 1, c - i0))
    (x0, x1, fx), (y0, y1, fy), (z0, z1, fz) = corners
    for zi, wz in ((z0, 1.0 - fz), (z1, fz)):
        for yi, wy in ((y0, 1.0 - fy), (y1, fy)):
            for xi, wx in ((x0, 1.0 - fx), (x1, fx)):
                out += data[zi, yi, xi] * (wz * wy * wx)
    return out


def sample_nearest(data: np.ndarray, cx, cy, cz) -> np.ndarray:
    nz, ny, nx = data.shape
    return data[nearest_index(cz, nz), nearest_index(cy, ny), nearest_index(cx, nx)]


# --------------------------------------------------------------------------
# crop / pad, normalization
# --------------------------------------------------------------------------

def _crop_pad_bounds(n: int, target: int) -> tuple[int, int]:
    """Low/high amounts to remove (crop) or add (pad); odd surplus goes high."""
    surplus = abs(target - n)
    low = surplus // 2
    return low, surplus - low


def crop_or_pad_centered(vol: V, target_dims: Sequence[int]) -> V:
    """Center-crop and/or pad each axis to ``target_dims`` (x, y, z).

    On an odd surplus the extra voxel is dropped (or added) at the
    high-index side. Scalar volumes are padded with their minimum, label
    volumes with background.
    """
    target_dims = _triple(target_dims, "target_dims", int)
    if any(d < 1 for d in target_dims):
        raise GeometryError(f"target dims must be >= 1, got {target_dims}")
    geom = vol.geometry
    data = vol.data
    origin = list(geom.origin)
    if isinstance(vol, LabelVolume):
        fill = 0
    else:
        fill = float(data.min()) if data.size else 0.0
    for axis in range(3):
        n, t = geom.dims[axis], target_dims[axis]
        if n == t:
            continue
        arr_axis = 2 - axis
        low, high = _crop_pad_bounds(n, t)
        if t < n:
            sl = [slice(None)] * 3
            sl[arr_axis] = slice(low, n - high)
            data = data[tuple(sl)]
            origin[axis] += low * geom.spacing[axis]
        else:
            widths = [(0, 0)] * 3
            widths[arr_axis] = (low, high)
            data = np.pad(data, widths, mode="constant", constant_values=fill)
            origin[axis] -= low * geom.spacing[axis]
    new_geom = VolumeGeometry(target_dims, geom.spacing, tuple(origin))
    return _rebuild(vol, new_geom, np.array(data, copy=True))


def normalize_min_max(vol: ScalarVolume) -> ScalarVolume:
    """Rescale intensities to [0, 1]; a constant volume maps to zeros."""
    data = vol.data.astype(np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        return ScalarVolume(vol.geometry, np.zeros_like(vol.data))
    out = (data - lo) / (hi - lo)
    return ScalarVolume(vol.geometry, out.astype(np.float32))


def isotropic_grid(geometry: VolumeGeometry, spacing=(1.0, 1.0, 1.0)) -> VolumeGeometry:
    """Grid with ``spacing`` starting at the origin of ``geometry`` and staying inside its extent."""
    spacing = _triple(spacing, "spacing", float)
    dims = tuple(
        int(math.floor((geometry.dims[a] - 1) * geometry.spacing[a] / spacing[a] + 1e-9)) + 1 for a in range(3)
    )
    return VolumeGeometry(dims, spacing, geometry.origin)


def preprocess_volume(vol: V, spacing=(1.0, 1.0, 1.0), dims=(144, 144, 80)) -> V:
    """Resample to ``spacing``, center crop/pad to ``dims`` and (images only) normalize.

    Images are resampled trilinearly and normalized last, so padding cannot
    push intensities outside [0, 1]. Labels use nearest neighbour and the
    same grid, so a pair with shared geometry stays aligned.
    """
    grid = isotropic_grid(vol.geometry, spacing)
    if isinstance(vol, LabelVolume):
        return crop_or_pad_centered(resample_nearest(vol, grid), dims)
    return normalize_min_max(crop_or_pad_centered(resample_trilinear(vol, grid), dims))
