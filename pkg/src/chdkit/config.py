"""Pipeline configuration: every tunable knob in one place.

A config travels with the data it shaped: sampled skeletons and template
libraries record a fingerprint of the knobs that influence skeleton
geometry, and matching refuses to compare skeletons produced under
different fingerprints.  Decision-stage knobs (gates, rule thresholds) are
deliberately excluded from the fingerprint so they can be swept against a
fixed library.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass

from .errors import FormatError

ENV_CONFIG_VAR = "CHD_PIPELINE_CONFIG"

# Knobs that change the geometry of a SampledSkeleton.  Only these enter
# the fingerprint; everything else may vary against a fixed library.
_SHAPE_KNOBS = (
    "sample_count",
    "min_island_voxels",
    "erosion_iters",
    "normalize_radii",
    "solid_connectivity",
    "skeleton_connectivity",
)

_RANGES = {
    "sample_count": (1, 100_000),
    "emd_gate": (0.0, math.inf),
    "narrow_ratio": (0.0, 1.0),
    "erosion_iters": (0, 16),
    "min_island_voxels": (0, 10_000_000),
    "ca_max_len_mm": (0.0, 1000.0),
    "aah_min_len_mm": (0.0, 1000.0),
    "flank_window": (1, 1000),
    "dsvc_min_branch_mm": (0.0, 1000.0),
    "dsvc_superior_fraction": (0.0, 1.0),
}


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs of the classification pipeline.

    Attributes
    ----------
    sample_count : int
        Number of points a skeleton is resampled to.
    emd_gate : float
        Selective-prediction gate: a case whose minimum template distance
        exceeds this is reported Uncertain.
    narrow_ratio : float
        A skeleton interval is "narrow" when its radii fall below this
        fraction of the flanking median radius.
    erosion_iters : int
        Smoothing erosions applied during vessel refinement.
    min_island_voxels : int
        Connected components smaller than this are dropped during vessel
        refinement.
    ca_max_len_mm, aah_min_len_mm : float
        Narrow-run length thresholds separating a short coarctation-like
        narrowing from a long hypoplastic arch.
    flank_window : int
        Number of samples on each side of a candidate narrow run used to
        estimate the local reference radius.
    solid_connectivity : int
        Voxel adjacency (6 or 26) for components of solid structures.
    skeleton_connectivity : int
        Voxel adjacency (6 or 26) for skeleton voxels.
    normalize_radii : bool
        Whether radii are rescaled together with positions during skeleton
        normalization.
    tof_narrow_corroboration : bool
        Optional extra requirement of a proximal narrow run before the
        both-ventricle aorta rule fires.
    pua_require_low_r : bool
        Optional extra requirement of a low pulmonary-side median radius
        before the PuA template match is accepted.
    dsvc_min_branch_mm : float
        Minimum branch length for a superior venous inflow to count.
    dsvc_superior_fraction : float
        Fraction of the venous skeleton's vertical extent (from the top)
        in which inflow endpoints are considered superior.
    """

    sample_count: int = 128
    emd_gate: float = 0.01
    narrow_ratio: float = 0.5
    erosion_iters: int = 1
    min_island_voxels: int = 50
    ca_max_len_mm: float = 15.0
    aah_min_len_mm: float = 25.0
    flank_window: int = 5
    solid_connectivity: int = 6
    skeleton_connectivity: int = 26
    normalize_radii: bool = True
    tof_narrow_corroboration: bool = False
    pua_require_low_r: bool = False
    dsvc_min_branch_mm: float = 5.0
    dsvc_superior_fraction: float = 0.25

    def __post_init__(self) -> None:
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise FormatError(f"config {name}={v!r} outside [{lo}, {hi}]")
        if self.solid_connectivity not in (6, 26):
            raise FormatError("solid_connectivity must be 6 or 26")
        if self.skeleton_connectivity not in (6, 26):
            raise FormatError("skeleton_connectivity must be 6 or 26")

    def fingerprint(self) -> str:
        """Stable hash of the skeleton-shaping knobs."""
        blob = ";".join(f"{k}={getattr(self, k)!r}" for k in _SHAPE_KNOBS)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **kwargs)

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, target_type: type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise FormatError(f"config {name}: cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        if raw.lower() in ("inf", "infinity"):
            return math.inf
        return float(raw)
    return raw


def parse_config(text: str) -> PipelineConfig:
    """Parse a key=value config file body; unknown keys are errors."""
    fields = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    types = {f.name: type(getattr(PipelineConfig(), f.name)) for f in dataclasses.fields(PipelineConfig)}
    kwargs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        kwargs[key] = _coerce(key, raw, types[key])
    return PipelineConfig(**kwargs)


def load_config(path: str | os.PathLike | None = None) -> PipelineConfig:
    """Load config from `path`, falling back to $CHD_PIPELINE_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_VAR) or None
    if path is None:
        return PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
