"""Elastic distortion and flips for paired image/label volumes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .volume import (
    LabelVolume,
    ScalarVolume,
    V,
    VolumeGeometry,
    _linear_along,
    check_same_geometry,
    sample_nearest,
    sample_trilinear,
)

DEFAULT_SIGMA_MM = 2.0
DEFAULT_CONTROL_SPACING_MM = 32.0


@dataclass(frozen=True, eq=False)
class DistortionField:
    """Displacements (mm) on a coarse control grid laid over ``geometry``.

    ``nodes`` has shape ``(3, gz, gy, gx)``; component 0 is the x
    displacement. Node ``m`` along an axis sits at ``origin + m * control_spacing``
    and the grid reaches at least the last voxel center.
    """

    geometry: VolumeGeometry
    control_spacing: float
    sigma: float
    nodes: np.ndarray = field(repr=False)

    def displacement(self) -> np.ndarray:
        """Dense field, shape ``(3, nz, ny, nx)``, trilinearly interpolated from the nodes."""
        g = self.geometry
        out = self.nodes.astype(np.float64)
        for axis in range(3):
            cidx = (g.axis_positions(axis) - g.origin[axis]) / self.control_spacing
            out = _linear_along(out, 3 - axis, cidx)
        return out

    def source_indices(self):
        """Continuous source indices ``(cx, cy, cz)`` sampled by backward warping."""
        g = self.geometry
        disp = self.displacement()
        iz, iy, ix = np.meshgrid(*(np.arange(n) for n in g.shape), indexing="ij")
        return (
            ix + disp[0] / g.spacing[0],
            iy + disp[1] / g.spacing[1],
            iz + disp[2] / g.spacing[2],
        )


def control_grid_shape(geometry: VolumeGeometry, control_spacing: float) -> tuple[int, int, int]:
    """Node counts ``(gz, gy, gx)`` covering the volume extent."""
    counts = []
    for axis in range(3):
        extent = (geometry.dims[axis] - 1) * geometry.spacing[axis]
        counts.append(max(2, math.ceil(extent / control_spacing - 1e-9) + 1))
    return counts[2], counts[1], counts[0]


def sample_distortion(
    geometry: VolumeGeometry,
    sigma: float = DEFAULT_SIGMA_MM,
    control_spacing: float = DEFAULT_CONTROL_SPACING_MM,
    seed=None,
) -> DistortionField:
    """Random field with i.i.d. N(0, sigma^2) node displacements per component."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if not control_spacing > 0:
        raise ValueError(f"control_spacing must be > 0, got {control_spacing}")
    rng = np.random.default_rng(seed)
    shape = (3, *control_grid_shape(geometry, control_spacing))
    nodes = rng.normal(0.0, sigma, size=shape) if sigma > 0 else np.zeros(shape)
    return DistortionField(geometry, float(control_spacing), float(sigma), nodes)


def constant_field(geometry: VolumeGeometry, displacement_mm) -> DistortionField:
    """Field with the same displacement (x, y, z mm) everywhere."""
    shape = control_grid_shape(geometry, DEFAULT_CONTROL_SPACING_MM)
    nodes = np.empty((3, *shape))
    for c in range(3):
        nodes[c] = displacement_mm[c]
    return DistortionField(geometry, DEFAULT_CONTROL_SPACING_MM, 0.0, nodes)


def warp(vol: V, field: DistortionField) -> V:
    """Backward warp: output voxel ``p`` takes the input value at ``p + u(p)``.

    Scalars are sampled trilinearly and labels by nearest neighbour; both
    clamp at the volume edge.
    """
    check_same_geometry(vol.geometry, field.geometry, "volume and distortion field")
    cx, cy, cz = field.source_indices()
    if isinstance(vol, LabelVolume):
        return LabelVolume(vol.geometry, sample_nearest(vol.data, cx, cy, cz))
    if isinstance(vol, ScalarVolume):
        return ScalarVolume(vol.geometry, sample_trilinear(vol.data, cx, cy, cz))
    raise TypeError(f"cannot warp {type(vol).__name__}")


def warp_pair(image: ScalarVolume, label: LabelVolume, field: DistortionField):
    if image.geometry != label.geometry:
        raise GeometryError("image and label geometry differ")
    return warp(image, field), warp(label, field)


def random_flip(pair, axes_mask=(True, False, False), seed=None, prob: float = 0.5):
    """Flip image and label together along each enabled axis (x, y, z) with ``prob``."""
    image, label = pair
    check_same_geometry(image.geometry, label.geometry, "image and label")
    rng = np.random.default_rng(seed)
    img, lbl = image.data, label.data
    for axis, enabled in enumerate(axes_mask):
        # draw for every axis so decisions do not depend on the mask
        flip = rng.random() < prob
        if enabled and flip:
            img = np.flip(img, axis=2 - axis)
            lbl = np.flip(lbl, axis=2 - axis)
    return ScalarVolume(image.geometry, img), LabelVolume(label.geometry, lbl)
