"""Final determination: connectivity + shape features -> CHD labels.

Rules fire independently and their results are unioned — a case can
legitimately carry several diagnoses.  The one interaction is that a
combined atrial+ventricular defect (AVSD) replaces the separate ASD/VSD
labels.  Selective-prediction gates run first: a missing chamber or a
poor best template match yields the distinguished Uncertain outcome
instead of a guess.

Every emitted label and every gate records an audit entry citing the
feature values that fired it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .config import PipelineConfig
from .connections import ConnectionFeatures
from .skeleton import SkeletonFeatures, SkeletonGraph, endpoint_branches


class CHDType(enum.Enum):
    ASD = "ASD"
    AVSD = "AVSD"
    VSD = "VSD"
    TOF = "TOF"
    PDA = "PDA"
    TGA = "TGA"
    CA = "CA"
    PuA = "PuA"
    PAS = "PAS"
    DORV = "DORV"
    CAT = "CAT"
    DAA = "DAA"
    APVC = "APVC"
    AAH = "AAH"
    IAA = "IAA"
    DSVC = "DSVC"
    NORMAL = "Normal"

    @classmethod
    def from_name(cls, name: str) -> "CHDType":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown CHD type {name!r}")


assert len(CHDType) == 17

SHAPE_CATEGORIES = ("CAT", "DAA", "PuA", "PAS", "IAA", "Normal")


@dataclass(frozen=True)
class Diagnosis:
    """Either a non-empty label set or the Uncertain outcome, with audit."""

    uncertain: bool
    labels: frozenset[CHDType]
    reasons: tuple[dict, ...] = field(default=())

    def __post_init__(self):
        if self.uncertain:
            if self.labels:
                raise ValueError("Uncertain diagnosis cannot carry labels")
            if not self.reasons:
                raise ValueError("Uncertain diagnosis must carry a gate reason")
        else:
            if not self.labels:
                raise ValueError("certain diagnosis needs at least one label")
            if CHDType.NORMAL in self.labels and len(self.labels) > 1:
                raise ValueError("Normal cannot co-occur with a CHD label")

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(sorted(l.value for l in self.labels))

    def to_dict(self) -> dict:
        return {
            "outcome": "Uncertain" if self.uncertain else "LabelSet",
            "labels": list(self.label_names),
            "reasons": list(self.reasons),
        }


def _uncertain(*reasons: dict) -> Diagnosis:
    return Diagnosis(uncertain=True, labels=frozenset(), reasons=tuple(reasons))


def count_superior_inflows(rv_skeleton: SkeletonGraph, cfg: PipelineConfig) -> int:
    """Distinct superior inflow branches of the venous (right-heart) skeleton.

    An inflow counts when a skeleton endpoint sits in the top
    `dsvc_superior_fraction` of the skeleton's vertical extent and its
    branch is at least `dsvc_min_branch_mm` long (short spurs are thinning
    artifacts, not vessels).
    """
    if rv_skeleton is None or rv_skeleton.n_nodes == 0:
        return 0
    z = rv_skeleton.positions[:, 2]
    zmin, zmax = float(z.min()), float(z.max())
    if zmax - zmin <= 0:
        return 0
    threshold = zmax - cfg.dsvc_superior_fraction * (zmax - zmin)
    count = 0
    for node, length in endpoint_branches(rv_skeleton):
        if rv_skeleton.positions[node, 2] >= threshold and length >= cfg.dsvc_min_branch_mm:
            count += 1
    return count


def classify(
    conn: ConnectionFeatures,
    skel: Optional[SkeletonFeatures],
    match,  # ShapeMatch | None
    la_islands: int,
    rv_skeleton: Optional[SkeletonGraph],
    cfg: PipelineConfig,
) -> Diagnosis:
    """Apply the final-determination rules to one case's features.

    Gates run first: any missing chamber, an absent/failed shape match, or
    a minimum template distance above `cfg.emd_gate` defers the case to a
    human (Uncertain).  Rules then fire independently and are unioned.
    Deterministic: identical features give an identical Diagnosis.
    """
    # --- selective-prediction gates
    if conn.missing_chambers:
        return _uncertain(
            {
                "gate": "missing_chamber",
                "detail": "at least one chamber segment is empty",
                "chambers": sorted(conn.missing_chambers),
            }
        )
    if match is None:
        return _uncertain(
            {"gate": "no_shape_match", "detail": "no vessel skeleton to match against templates"}
        )
    if match.min_emd > cfg.emd_gate:
        return _uncertain(
            {
                "gate": "emd",
                "detail": "minimum template distance exceeds the gate",
                "min_emd": match.min_emd,
                "emd_gate": cfg.emd_gate,
                "best_category": match.best_category,
            }
        )

    labels: set[CHDType] = set()
    reasons: list[dict] = []

    def fire(label: CHDType, **why):
        labels.add(label)
        reasons.append({"rule": label.value, **why})

    # --- septal defects
    if conn.la_ra_connected and conn.lv_rv_connected:
        fire(CHDType.AVSD, la_ra_connected=True, lv_rv_connected=True)
    elif conn.la_ra_connected:
        fire(CHDType.ASD, la_ra_connected=True)
    elif conn.lv_rv_connected:
        fire(CHDType.VSD, lv_rv_connected=True)

    # --- outflow connection rules
    if conn.ao_origin == "RV" and conn.pa_origin == "RV":
        fire(CHDType.DORV, ao_origin=conn.ao_origin, pa_origin=conn.pa_origin)
    if conn.ao_origin == "Both" and conn.lv_rv_connected:
        corroborated = True
        if cfg.tof_narrow_corroboration and skel is not None:
            corroborated = bool(skel.narrow_runs)
        if corroborated:
            fire(
                CHDType.TOF,
                ao_origin=conn.ao_origin,
                lv_rv_connected=True,
                narrow_corroboration=cfg.tof_narrow_corroboration,
            )
    if conn.ao_origin == "RV" and conn.pa_origin == "LV":
        fire(CHDType.TGA, ao_origin=conn.ao_origin, pa_origin=conn.pa_origin)

    # --- template shape categories
    cat = match.best_category
    if cat in ("CAT", "PuA", "PAS", "IAA"):
        ok = True
        extra: dict = {}
        if cat == "PuA" and skel is not None:
            # record the PA-side median radius; optionally require it to be
            # markedly below the whole-skeleton median
            extra["pa_side_median_r"] = skel.pa_side_median_r
            extra["median_r"] = skel.median_r
            if cfg.pua_require_low_r:
                ok = (
                    skel.pa_side_median_r is not None
                    and skel.median_r is not None
                    and skel.pa_side_median_r < cfg.narrow_ratio * skel.median_r
                )
        if ok:
            fire(CHDType.from_name(cat), best_category=cat, min_emd=match.min_emd, **extra)
    elif cat == "DAA" and skel is not None and skel.has_cycle:
        fire(CHDType.DAA, best_category=cat, has_cycle=True, min_emd=match.min_emd)

    # --- narrowing rules
    if skel is not None:
        for run in skel.narrow_runs:
            if run.length_mm < cfg.ca_max_len_mm:
                fire(
                    CHDType.CA,
                    narrow_run_mm=run.length_mm,
                    min_r=run.min_r,
                    neighbor_ratio=run.neighbor_ratio,
                )
                break
        for run in skel.narrow_runs:
            if run.length_mm >= cfg.aah_min_len_mm:
                fire(
                    CHDType.AAH,
                    narrow_run_mm=run.length_mm,
                    min_r=run.min_r,
                    neighbor_ratio=run.neighbor_ratio,
                )
                break

    # --- duct: the two artery trees are fused beyond the valve plane even
    # though both initial parts are distinct and no double-arch explains it
    if (
        skel is not None
        and skel.artery_trees_fused
        and conn.n_initial_parts == 2
        and cat != "DAA"
    ):
        fire(
            CHDType.PDA,
            artery_trees_fused=True,
            n_initial_parts=conn.n_initial_parts,
            best_category=cat,
        )

    # --- venous rules
    inflows = count_superior_inflows(rv_skeleton, cfg) if rv_skeleton is not None else 0
    if inflows >= 2:
        fire(CHDType.DSVC, superior_inflow_branches=inflows)
    if la_islands >= 2:
        fire(CHDType.APVC, la_islands=la_islands)

    if labels:
        return Diagnosis(uncertain=False, labels=frozenset(labels), reasons=tuple(reasons))
    if cat == "Normal":
        return Diagnosis(
            uncertain=False,
            labels=frozenset({CHDType.NORMAL}),
            reasons=({"rule": "Normal", "best_category": cat, "min_emd": match.min_emd},),
        )
    return _uncertain(
        {
            "gate": "rule_shape_disagreement",
            "detail": "no connection rule fired but the best shape category is not Normal",
            "best_category": cat,
            "min_emd": match.min_emd,
        }
    )
