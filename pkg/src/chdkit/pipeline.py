"""End-to-end case processing: volumes in, Diagnosis out."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.ndimage as ndi

from .config import PipelineConfig
from .connections import CaseInput, ConnectionFeatures, analyze_connections, la_island_count
from .rules import Diagnosis, classify
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
from .templates import ShapeMatch, TemplateLibrary, match_templates
from .volume import BinaryMask, distance_transform

_STRUCT6 = ndi.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class CaseResult:
    """Diagnosis plus the intermediates that produced it."""

    case_id: str
    diagnosis: Diagnosis
    connections: ConnectionFeatures
    vessel_skeleton: Optional[SkeletonGraph]
    sampled: Optional[SampledSkeleton]
    shape_match: Optional[ShapeMatch]
    skeleton_feats: Optional[SkeletonFeatures]
    la_islands: int


def vessel_skeleton_graph(case: CaseInput, cfg: PipelineConfig) -> Optional[SkeletonGraph]:
    """Refined-vessel skeleton graph with radii and substructure labels."""
    vessels = refine_vessels(extract_vessels(case, cfg), cfg)
    if vessels.foreground_count == 0:
        return None
    skel = skeletonize(vessels)
    edt = distance_transform(vessels)
    return build_graph(skel, edt, labels=case.upsampled_labels)


def venous_skeleton_graph(case: CaseInput, cfg: PipelineConfig) -> Optional[SkeletonGraph]:
    """Skeleton of the right-heart venous complex (RA + RV + attached veins).

    Unlabeled blood components that touch the right atrium are treated as
    venous inflow (the substructure map never labels the caval veins).
    """
    up = case.upsampled_labels
    blood = case.blood_pool.bits
    ra = blood & (up == 4)
    core = blood & ((up == 2) | (up == 4))
    unlabeled = blood & (up == 0)
    if unlabeled.any() and ra.any():
        comp, n = ndi.label(unlabeled, structure=_STRUCT6)
        ra_grown = ndi.binary_dilation(ra, structure=_STRUCT6)
        touching = np.unique(comp[ra_grown & unlabeled])
        touching = touching[touching > 0]
        if touching.size:
            core = core | np.isin(comp, touching)
    mask = case.blood_pool.with_bits(core)
    mask = refine_vessels(mask, cfg)
    if mask.foreground_count == 0:
        return None
    skel = skeletonize(mask)
    edt = distance_transform(mask)
    return build_graph(skel, edt)


def run_case(case: CaseInput, library: TemplateLibrary, cfg: PipelineConfig) -> CaseResult:
    """Run the full analysis on one case.

    Pure function of its inputs; cases can be processed concurrently.
    """
    conn = analyze_connections(case, cfg)
    graph = vessel_skeleton_graph(case, cfg)
    sampled = None
    match = None
    skf = None
    if graph is not None and graph.n_nodes:
        sampled = sample_and_normalize(graph, cfg, provenance=case.case_id)
        match = match_templates(sampled, library)
        skf = skeleton_features(graph, cfg)
    islands = la_island_count(case)
    rv_graph = venous_skeleton_graph(case, cfg)
    diagnosis = classify(conn, skf, match, islands, rv_graph, cfg)
    return CaseResult(
        case_id=case.case_id,
        diagnosis=diagnosis,
        connections=conn,
        vessel_skeleton=graph,
        sampled=sampled,
        shape_match=match,
        skeleton_feats=skf,
        la_islands=islands,
    )


def case_skeleton(case: CaseInput, cfg: PipelineConfig) -> Optional[SampledSkeleton]:
    """Just the sampled, normalized vessel skeleton (template building)."""
    graph = vessel_skeleton_graph(case, cfg)
    if graph is None or graph.n_nodes == 0:
        return None
    return sample_and_normalize(graph, cfg, provenance=case.case_id)


def diagnosis_record(result: CaseResult, cfg: PipelineConfig) -> dict:
    """JSON-ready record of one case's diagnosis and audit trail."""
    rec = result.diagnosis.to_dict()
    rec["case_id"] = result.case_id
    rec["cfg_fingerprint"] = cfg.fingerprint()
    rec["connection_features"] = {
        "la_ra_connected": result.connections.la_ra_connected,
        "lv_rv_connected": result.connections.lv_rv_connected,
        "ao_origin": result.connections.ao_origin,
        "pa_origin": result.connections.pa_origin,
        "n_initial_parts": result.connections.n_initial_parts,
        "missing_chambers": sorted(result.connections.missing_chambers),
    }
    if result.shape_match is not None:
        rec["shape_match"] = {
            "best_category": result.shape_match.best_category,
            "best_template_id": result.shape_match.best_template_id,
            "min_emd": result.shape_match.min_emd,
        }
    rec["la_islands"] = result.la_islands
    return rec
