"""chdkit: congenital heart disease classification from 3D segmentations.

The pipeline consumes a high-resolution blood-pool mask plus a coarse
substructure label volume, extracts chamber/artery connectivity and
great-vessel shape features, matches the vessel skeleton against a
categorized template library with exact earth mover's distance, and
applies rule-based final determination with selective prediction (the
classifier may answer Uncertain rather than guess).
"""

from .config import PipelineConfig, load_config, parse_config
from .connections import CaseInput, ConnectionFeatures, analyze_connections
from .emd import emd, solve_transport
from .errors import ChdkitError
from .evaluation import ConfusionMatrix, accumulate, dice, metrics
from .phantoms import PhantomSpec, generate, preset_spec
from .pipeline import CaseResult, run_case
from .rules import CHDType, Diagnosis, classify
from .skeleton import (
    SampledSkeleton,
    SkeletonFeatures,
    SkeletonGraph,
    build_graph,
    extract_vessels,
    refine_vessels,
    sample_and_normalize,
    skeleton_features,
    skeletonize,
)
from .templates import ShapeMatch, Template, TemplateLibrary, build_library, match_templates
from .volume import (
    BinaryMask,
    ComponentLabeling,
    LabelVolume,
    boundary,
    connected_components,
    count_islands,
    distance_transform,
    erode,
    upsample_nearest,
)

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "load_config", "parse_config",
    "CaseInput", "ConnectionFeatures", "analyze_connections",
    "emd", "solve_transport",
    "ChdkitError",
    "ConfusionMatrix", "accumulate", "dice", "metrics",
    "PhantomSpec", "generate", "preset_spec",
    "CaseResult", "run_case",
    "CHDType", "Diagnosis", "classify",
    "SampledSkeleton", "SkeletonFeatures", "SkeletonGraph",
    "build_graph", "extract_vessels", "refine_vessels",
    "sample_and_normalize", "skeleton_features", "skeletonize",
    "ShapeMatch", "Template", "TemplateLibrary", "build_library", "match_templates",
    "BinaryMask", "ComponentLabeling", "LabelVolume",
    "boundary", "connected_components", "count_islands",
    "distance_transform", "erode", "upsample_nearest",
    "__version__",
]
