"""Connectivity analysis between chambers and great-artery initial parts.

The central trick: coarse substructure labels are resampled onto the
high-resolution blood-pool grid, the blood pool's surface layer is deleted
from the label map, and the map is restricted to blood-pool foreground.
Structures that merely touch across a wall lose their contact (the contact
zone is all surface), while true lumen connections survive because their
interior is thicker than one boundary layer.

Connectivity of a structure pair is then decided on the pair's own voxels:
the two labels are connected iff they share a 6-connected component of the
pair submask (equivalently, their voxels touch) after boundary removal.
Deciding per pair, rather than on one global labeling, keeps an atrial
septal defect from implying a ventricular one via the merged component.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.ndimage as ndi

from .config import PipelineConfig
from .errors import EmptyInputError, GridMismatchError
from .volume import (
    CHAMBER_LABELS,
    LABEL_NAMES,
    BinaryMask,
    LabelVolume,
    boundary,
    connected_components,
    count_islands,
    upsample_nearest,
)

_STRUCT6 = ndi.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class CaseInput:
    """One case: a high-resolution blood pool and coarse substructure labels.

    The substructure volume covers the four chambers, myocardium, and the
    *initial parts* of the aorta and pulmonary artery (labels 6/7); distal
    vessel lumen is present only in the blood pool.
    """

    case_id: str
    blood_pool: BinaryMask
    substructures: LabelVolume

    def __post_init__(self):
        for ax in range(3):
            ea = self.blood_pool.extent_mm[ax]
            eb = self.substructures.extent_mm[ax]
            tol = 0.5 * max(self.blood_pool.spacing[ax], self.substructures.spacing[ax])
            if abs(ea - eb) > tol:
                raise GridMismatchError(
                    f"axis {ax}: blood pool extent {ea:.3f} mm vs substructures {eb:.3f} mm"
                )
        if self.blood_pool.foreground_count == 0:
            raise EmptyInputError("blood pool is empty")

    @cached_property
    def upsampled_labels(self) -> np.ndarray:
        """Substructure labels resampled onto the blood-pool grid."""
        up = upsample_nearest(self.substructures, self.blood_pool.dims, self.blood_pool.spacing)
        return up.labels


@dataclass(frozen=True)
class ConnectionFeatures:
    """Boolean/categorical connectivity facts for one case."""

    la_ra_connected: bool
    lv_rv_connected: bool
    ao_origin: str  # "LV" | "RV" | "Both" | "None"
    pa_origin: str
    n_initial_parts: int
    missing_chambers: frozenset[str]

    def __post_init__(self):
        if self.ao_origin not in ("LV", "RV", "Both", "None"):
            raise ValueError(f"bad ao_origin {self.ao_origin!r}")
        if self.pa_origin not in ("LV", "RV", "Both", "None"):
            raise ValueError(f"bad pa_origin {self.pa_origin!r}")
        if self.n_initial_parts not in (0, 1, 2):
            raise ValueError(f"n_initial_parts must be 0..2, got {self.n_initial_parts}")


def connectivity_map(case: CaseInput) -> np.ndarray:
    """Label map on the blood-pool grid after boundary removal.

    Boundary voxels of the blood pool are deleted, labels are restricted to
    blood-pool foreground, and myocardium is dropped (the rules only ever
    reason about blood).
    """
    bdry = boundary(case.blood_pool).bits
    cmap = np.where(case.blood_pool.bits & ~bdry, case.upsampled_labels, 0)
    cmap[cmap == 5] = 0
    return cmap


def _pair_connected(cmap: np.ndarray, a: int, b: int) -> bool:
    ma = cmap == a
    mb = cmap == b
    if not ma.any() or not mb.any():
        return False
    # direct 6-adjacency between the two label regions
    if (ndi.binary_dilation(ma, structure=_STRUCT6) & mb).any():
        return True
    # co-membership in a 6-connected component of the pair submask
    comp, n = ndi.label(ma | mb, structure=_STRUCT6)
    for cid in range(1, n + 1):
        sel = comp == cid
        if (sel & ma).any() and (sel & mb).any():
            return True
    return False


def _origin(cmap: np.ndarray, artery: int) -> str:
    lv = _pair_connected(cmap, artery, 1)
    rv = _pair_connected(cmap, artery, 2)
    if lv and rv:
        return "Both"
    if lv:
        return "LV"
    if rv:
        return "RV"
    return "None"


def _initial_part_count(cmap: np.ndarray) -> int:
    """Distinct components occupied by the AO/PA initial parts.

    Each artery label votes for the component holding most of its voxels,
    so a label fragmented by noise still counts once.
    """
    sub = (cmap == 6) | (cmap == 7)
    if not sub.any():
        return 0
    comp, _ = ndi.label(sub, structure=_STRUCT6)
    dominant = set()
    for lab in (6, 7):
        ids = comp[cmap == lab]
        if ids.size:
            dominant.add(int(np.bincount(ids).argmax()))
    return len(dominant)


def analyze_connections(case: CaseInput, cfg: PipelineConfig | None = None) -> ConnectionFeatures:
    """Extract chamber/artery connectivity facts from one case.

    Deterministic and pure: identical input always yields identical
    features.  Boundary removal only deletes voxels, so it can separate
    structures but never connect ones that were apart.
    """
    del cfg  # connectivity analysis has no tunable knobs today
    cmap = connectivity_map(case)
    missing = frozenset(
        LABEL_NAMES[lab] for lab in CHAMBER_LABELS if case.substructures.count_of(lab) == 0
    )
    return ConnectionFeatures(
        la_ra_connected=_pair_connected(cmap, 3, 4),
        lv_rv_connected=_pair_connected(cmap, 1, 2),
        ao_origin=_origin(cmap, 6),
        pa_origin=_origin(cmap, 7),
        n_initial_parts=_initial_part_count(cmap),
        missing_chambers=missing,
    )


def la_island_count(case: CaseInput, connectivity: int = 6) -> int:
    """Number of disjoint pieces the left atrium falls into."""
    la = case.substructures.mask_of(3)
    if la.foreground_count == 0:
        return 0
    return count_islands(la, connectivity)
