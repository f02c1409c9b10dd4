"""Voxel-grid primitives: label volumes, masks, morphology, components, EDT.

Grid conventions used throughout the package:

* arrays are indexed ``[x, y, z]`` and serialized x-fastest;
* voxel ``(i, j, k)`` has its center at ``((i+0.5)*sx, (j+0.5)*sy, (k+0.5)*sz)``
  in millimetres;
* anything outside the grid counts as background (this affects boundary
  detection, erosion at the border, and the distance transform);
* the distance transform measures from foreground voxel centers to the
  nearest background voxel *center*, so inscribed-sphere radii derived
  from it are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
from numba import njit

from .errors import EmptyInputError, FormatError, GridMismatchError

# Fixed substructure label encoding (0 = background).
LABEL_NAMES = {
    0: "background",
    1: "LV",
    2: "RV",
    3: "LA",
    4: "RA",
    5: "Myo",
    6: "AO",
    7: "PA",
}
LABEL_IDS = {name: lid for lid, name in LABEL_NAMES.items()}
CHAMBER_LABELS = (1, 2, 3, 4)  # LV, RV, LA, RA
ARTERY_LABELS = (6, 7)  # AO, PA initial parts

_STRUCT6 = ndi.generate_binary_structure(3, 1)
_STRUCT26 = ndi.generate_binary_structure(3, 3)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return _STRUCT6
    if connectivity == 26:
        return _STRUCT26
    raise FormatError(f"connectivity must be 6 or 26, got {connectivity}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _check_grid(dims, spacing) -> tuple[tuple[int, int, int], tuple[float, float, float]]:
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    if len(dims) != 3 or len(spacing) != 3:
        raise FormatError("dims and spacing must have three components")
    if any(d < 1 for d in dims):
        raise FormatError(f"dims components must be >= 1, got {dims}")
    if any(s <= 0 for s in spacing):
        raise FormatError(f"spacing components must be > 0, got {spacing}")
    return dims, spacing


@dataclass(frozen=True)
class LabelVolume:
    """Dense 3D grid of unsigned 8-bit substructure labels.

    Parameters
    ----------
    dims : (nx, ny, nz) voxel counts.
    spacing : (sx, sy, sz) millimetres per voxel.
    labels : array of shape ``dims``, values in 0..7.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims, spacing = _check_grid(self.dims, self.spacing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        arr = np.asarray(self.labels, dtype=np.uint8)
        if arr.shape != dims:
            if arr.size == dims[0] * dims[1] * dims[2] and arr.ndim == 1:
                arr = arr.reshape(dims, order="F")  # x-fastest flat input
            else:
                raise FormatError(f"labels shape {arr.shape} does not match dims {dims}")
        if arr.max(initial=0) > 7:
            raise FormatError("label ids must lie in 0..7")
        object.__setattr__(self, "labels", _freeze(arr))

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        return tuple(d * s for d, s in zip(self.dims, self.spacing))

    def mask_of(self, label_id: int) -> "BinaryMask":
        return BinaryMask(self.dims, self.spacing, self.labels == label_id)

    def count_of(self, label_id: int) -> int:
        return int((self.labels == label_id).sum())


@dataclass(frozen=True)
class BinaryMask:
    """Boolean voxel grid with the same layout contract as LabelVolume."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims, spacing = _check_grid(self.dims, self.spacing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        arr = np.asarray(self.bits)
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        if arr.shape != dims:
            if arr.size == dims[0] * dims[1] * dims[2] and arr.ndim == 1:
                arr = arr.reshape(dims, order="F")
            else:
                raise FormatError(f"bits shape {arr.shape} does not match dims {dims}")
        object.__setattr__(self, "bits", _freeze(arr))

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        return tuple(d * s for d, s in zip(self.dims, self.spacing))

    @property
    def foreground_count(self) -> int:
        return int(self.bits.sum())

    def same_grid(self, other) -> bool:
        return self.dims == other.dims and np.allclose(self.spacing, other.spacing)

    def with_bits(self, bits: np.ndarray) -> "BinaryMask":
        return BinaryMask(self.dims, self.spacing, bits)


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected-component partition: ids 1..n by descending size, 0 = background."""

    component_id: np.ndarray = field(repr=False)
    component_sizes: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "component_id", _freeze(np.asarray(self.component_id, dtype=np.int32)))
        object.__setattr__(self, "component_sizes", _freeze(np.asarray(self.component_sizes, dtype=np.int64)))

    @property
    def n_components(self) -> int:
        return int(self.component_sizes.size)

    def mask_of(self, cid: int) -> np.ndarray:
        return self.component_id == cid


def connected_components(mask: BinaryMask, connectivity: int = 6) -> ComponentLabeling:
    """Partition foreground into connected components.

    Components are relabeled 1..n by descending voxel count; ties keep the
    raster order of first occurrence so the result is deterministic.
    """
    if mask.bits.size == 0:
        raise EmptyInputError("mask has an empty grid")
    raw, n = ndi.label(mask.bits, structure=_structure(connectivity))
    if n == 0:
        return ComponentLabeling(np.zeros(mask.dims, np.int32), np.zeros(0, np.int64))
    sizes = np.bincount(raw.ravel())[1:]  # skip background
    order = np.argsort(-sizes, kind="stable")  # descending, stable for ties
    remap = np.zeros(n + 1, np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    return ComponentLabeling(remap[raw], sizes[order])


def count_islands(mask: BinaryMask, connectivity: int = 6) -> int:
    """Number of connected components of the mask's foreground."""
    return connected_components(mask, connectivity).n_components


def erode(mask: BinaryMask, iterations: int = 1) -> BinaryMask:
    """6-neighborhood erosion; out-of-grid voxels count as background."""
    if iterations < 0:
        raise FormatError("iterations must be >= 0")
    if iterations == 0 or not mask.bits.any():
        return mask
    out = ndi.binary_erosion(mask.bits, structure=_STRUCT6, iterations=iterations, border_value=0)
    return mask.with_bits(out)


def boundary(mask: BinaryMask) -> BinaryMask:
    """Foreground voxels with at least one background 6-neighbor.

    Out-of-grid voxels count as background, so foreground touching the grid
    border is always boundary.
    """
    interior = ndi.binary_erosion(mask.bits, structure=_STRUCT6, border_value=0)
    return mask.with_bits(mask.bits & ~interior)


def upsample_nearest(vol: LabelVolume, target_dims, target_spacing) -> LabelVolume:
    """Resample a label volume onto a new grid by nearest input voxel center.

    Both grids must describe the same physical extent within half of the
    coarser voxel along each axis.
    """
    target_dims, target_spacing = _check_grid(target_dims, target_spacing)
    idx = []
    for ax in range(3):
        ext_in = vol.dims[ax] * vol.spacing[ax]
        ext_out = target_dims[ax] * target_spacing[ax]
        tol = 0.5 * max(vol.spacing[ax], target_spacing[ax])
        if abs(ext_in - ext_out) > tol:
            raise GridMismatchError(
                f"axis {ax}: extent {ext_out:.3f} mm differs from source {ext_in:.3f} mm "
                f"beyond half-voxel tolerance {tol:.3f}"
            )
        centers = (np.arange(target_dims[ax]) + 0.5) * target_spacing[ax]
        # nearest input center; exact midpoints resolve to the upper index
        j = np.floor(centers / vol.spacing[ax]).astype(np.int64)
        np.clip(j, 0, vol.dims[ax] - 1, out=j)
        idx.append(j)
    out = vol.labels[np.ix_(idx[0], idx[1], idx[2])]
    return LabelVolume(target_dims, target_spacing, out)


# Squared-distance sentinel for "no background seen yet"; any true squared
# distance in a physically sized grid is far below this.
_EDT_BIG = 1e18


@njit(cache=True)
def _edt_pass(f: np.ndarray, step: float) -> None:
    """One separable squared-EDT pass along the last axis, in place.

    Lower-envelope-of-parabolas scan: each 1D row is replaced with
    ``min_j f[j] + ((i-j)*step)**2``.
    """
    n0, n1, n = f.shape
    s2 = step * step
    v = np.empty(n, np.int64)  # parabola sites
    z = np.empty(n + 1, np.float64)  # envelope breakpoints
    out = np.empty(n, np.float64)
    for a in range(n0):
        for b in range(n1):
            row = f[a, b]
            k = 0
            v[0] = 0
            z[0] = -1e30
            z[1] = 1e30
            for q in range(1, n):
                p = v[k]
                s = (row[q] - row[p] + s2 * (q * q - p * p)) / (2.0 * s2 * (q - p))
                while s <= z[k]:
                    k -= 1
                    p = v[k]
                    s = (row[q] - row[p] + s2 * (q * q - p * p)) / (2.0 * s2 * (q - p))
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = 1e30
            k = 0
            for q in range(n):
                while z[k + 1] < q:
                    k += 1
                d = q - v[k]
                out[q] = row[v[k]] + s2 * d * d
            row[:] = out


def distance_transform(mask: BinaryMask) -> np.ndarray:
    """Exact Euclidean distance (mm) from foreground voxel centers to the
    nearest background voxel center.

    The grid is conceptually surrounded by a one-voxel background ring, so
    foreground at the border is at most one spacing away from background.
    Background voxels map to 0.  Anisotropic spacing is honored.
    """
    nx, ny, nz = mask.dims
    f = np.zeros((nx + 2, ny + 2, nz + 2), np.float64)
    f[1:-1, 1:-1, 1:-1] = np.where(mask.bits, _EDT_BIG, 0.0)
    sx, sy, sz = mask.spacing
    _edt_pass(f, sz)  # along z
    f = np.ascontiguousarray(f.swapaxes(1, 2))  # (x, z, y)
    _edt_pass(f, sy)  # along y
    f = np.ascontiguousarray(f.swapaxes(1, 2).swapaxes(0, 2))  # (z, y, x)
    _edt_pass(f, sx)  # along x
    f = f.swapaxes(0, 2)[1:-1, 1:-1, 1:-1]
    return _freeze(np.sqrt(f))
