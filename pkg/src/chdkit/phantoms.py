"""Parametric synthetic heart phantoms with known ground-truth labels.

A phantom is a small scene of axis-aligned ellipsoids (chambers, a
myocardial shell) and swept-cone tubes (great arteries, veins) rasterized
into a high-resolution blood pool plus a coarse substructure label volume,
mimicking the two segmentation resolutions the pipeline consumes.
Structural defects are local, deterministic edits of the base scene, and
each implies the label a correct classifier should produce.

Base anatomy is defined for a 128 mm reference extent and scales with the
requested grid, so growing the voxel spacing grows the phantom with it
(voxel content is invariant under uniform spacing changes).  All random
jitter derives from the seed; the same spec always rasterizes to
bit-identical volumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .connections import CaseInput
from .errors import PhantomSpecError
from .rules import CHDType
from .volume import BinaryMask, LabelVolume

REFERENCE_EXTENT = 128.0

DEFECT_KINDS = (
    "septal_hole",
    "double_arch",
    "absent_pa_trunk",
    "narrow_segment",
    "extra_duct",
    "reversed_origins",
    "rv_origin_both",
    "ao_overriding",
    "extra_svc",
    "la_split",
    "arch_interruption",
    "common_trunk",
    "pa_sling_course",
)

# Defects that rebuild or edit the same tube cannot be combined.  Kinds
# sharing a group id are mutually exclusive; septal holes at different
# locations are always fine.
_CONFLICT_GROUPS = {
    "double_arch": "ao_course",
    "arch_interruption": "ao_arch_body",
    "narrow_segment": "ao_arch_body",
    "reversed_origins": "origins",
    "rv_origin_both": "origins",
    "ao_overriding": "origins",
    "common_trunk": "origins",
    "absent_pa_trunk": "pa_course",
    "pa_sling_course": "pa_course",
}
# common_trunk and reversed origins also rebuild the whole AO course
_ALSO_CONFLICTS = {
    ("common_trunk", "double_arch"),
    ("common_trunk", "arch_interruption"),
    ("common_trunk", "narrow_segment"),
    ("absent_pa_trunk", "extra_duct"),
}


@dataclass(frozen=True)
class Defect:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise PhantomSpecError(f"unknown defect kind {self.kind!r}")
        if self.kind == "septal_hole":
            loc = self.params.get("location")
            if loc not in ("atrial", "ventricular"):
                raise PhantomSpecError(f"septal_hole location must be atrial|ventricular, got {loc!r}")


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]


@dataclass(frozen=True)
class Tube:
    """Polyline centerline with per-point radii, swept as cone segments."""

    points: tuple[tuple[float, float, float], ...]
    radii: tuple[float, ...]

    def __post_init__(self):
        if len(self.points) != len(self.radii) or len(self.points) < 2:
            raise PhantomSpecError("tube needs >= 2 points with one radius each")


@dataclass(frozen=True)
class PhantomSpec:
    """Full description of one synthetic case."""

    seed: int
    dims: tuple[int, int, int] = (128, 128, 128)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    low_factor: int = 4
    defects: tuple[Defect, ...] = ()

    def __post_init__(self):
        for d, f in zip(self.dims, (self.low_factor,) * 3):
            if d % f:
                raise PhantomSpecError(f"dims {self.dims} not divisible by low_factor {f}")
        groups: dict[str, str] = {}
        kinds = [d.kind for d in self.defects]
        for kind in kinds:
            g = _CONFLICT_GROUPS.get(kind)
            if g is not None:
                if g in groups:
                    raise PhantomSpecError(
                        f"defects {groups[g]!r} and {kind!r} both edit {g}; pick one"
                    )
                groups[g] = kind
        for a, b in _ALSO_CONFLICTS:
            if a in kinds and b in kinds:
                raise PhantomSpecError(f"defects {a!r} and {b!r} are incompatible")
        locs = [d.params.get("location") for d in self.defects if d.kind == "septal_hole"]
        if len(locs) != len(set(locs)):
            raise PhantomSpecError("duplicate septal_hole location")

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "dims": list(self.dims),
                "spacing": list(self.spacing),
                "low_factor": self.low_factor,
                "defects": [{"kind": d.kind, "params": d.params} for d in self.defects],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        raw = json.loads(text)
        return cls(
            seed=int(raw["seed"]),
            dims=tuple(raw.get("dims", (128, 128, 128))),
            spacing=tuple(raw.get("spacing", (1.0, 1.0, 1.0))),
            low_factor=int(raw.get("low_factor", 4)),
            defects=tuple(Defect(d["kind"], d.get("params", {})) for d in raw.get("defects", ())),
        )


# --- base anatomy -------------------------------------------------------------


class _Scene:
    """Mutable working geometry for one phantom, in reference millimetres."""

    def __init__(self, rng: np.random.Generator):
        t = rng.uniform(-2.0, 2.0, 3)  # global translation jitter
        cj = rng.uniform(0.94, 1.06, 8)  # chamber radius jitters
        vj = rng.uniform(0.96, 1.04, 4)  # vessel radius jitters
        wig = rng.uniform(-0.8, 0.8, (8, 3))  # vessel control-point wiggle
        self.scale = rng.uniform(0.97, 1.03)

        def pt(x, y, z, w=None):
            p = np.array([x, y, z]) + t
            if w is not None:
                p = p + wig[w]
            return tuple(p)

        self.chambers: dict[str, list[Ellipsoid]] = {
            "LV": [Ellipsoid(pt(44, 58, 40), (14 * cj[0], 15 * cj[1], 19 * cj[0]))],
            "RV": [Ellipsoid(pt(74, 58, 38), (13 * cj[2], 14 * cj[3], 17 * cj[2]))],
            "LA": [Ellipsoid(pt(47, 88, 44), (12 * cj[4], 11 * cj[5], 11 * cj[4]))],
            "RA": [Ellipsoid(pt(74, 88, 44), (12 * cj[6], 11 * cj[7], 12 * cj[6]))],
        }
        self.myo_margin = 4.0
        ao_r = 6.0 * vj[0]
        pa_r = 6.5 * vj[1]
        pa_br = 4.0 * vj[2]
        svc_r = 4.0 * vj[3]
        self._pt = pt
        self.ao_points = [pt(46, 58, 50), pt(48, 60, 72, 0), pt(58, 64, 86, 1),
                          pt(72, 68, 86, 2), pt(86, 70, 74, 3), pt(90, 74, 28)]
        self.ao_radii = [ao_r, ao_r * 0.97, ao_r * 0.93, ao_r * 0.9, ao_r * 0.87, ao_r * 0.83]
        self.pa_trunk = [pt(72, 56, 48), pt(68, 54, 66, 4), pt(62, 50, 74)]
        self.pa_trunk_radii = [pa_r, pa_r * 0.97, pa_r * 0.95]
        self.pa_left = [pt(62, 50, 74), pt(52, 47, 77, 5), pt(38, 44, 82)]
        self.pa_right = [pt(62, 50, 74), pt(78, 48, 80, 6), pt(92, 46, 82)]
        self.pa_branch_r = pa_br
        self.svcs = [Tube((pt(75, 88, 50), pt(75, 88, 98, 7)), (svc_r, svc_r * 0.95))]
        self.ao_initial_mm = 16.0
        self.pa_initial_mm = 14.0
        # windows on the AO arc: radius multipliers / gaps, filled by defects
        self.ao_narrow: list[tuple[float, float, float]] = []  # (start, end, factor)
        self.ao_gaps: list[tuple[float, float]] = []
        self.extra_tubes: list[Tube] = []  # unlabeled blood (ducts, second SVC)
        self.holes: list[tuple[str, Ellipsoid]] = []  # (label_rule, ball)
        self.boxes: list[np.ndarray] = []  # defect bounding boxes, mm

    def tube_ao(self) -> Tube:
        return Tube(tuple(self.ao_points), tuple(self.ao_radii))

    def tubes_pa(self) -> list[tuple[Tube, bool]]:
        """(tube, is_trunk) pairs; the trunk carries the initial-part label."""
        out = []
        if self.pa_trunk is not None:
            out.append((Tube(tuple(self.pa_trunk), tuple(self.pa_trunk_radii)), True))
        br = self.pa_branch_r
        out.append((Tube(tuple(self.pa_left), (br,) * len(self.pa_left)), False))
        out.append((Tube(tuple(self.pa_right), (br,) * len(self.pa_right)), False))
        return out


def _tube_box(points, radii, pad=2.0) -> np.ndarray:
    pts = np.asarray(points, float)
    r = float(np.max(radii)) + pad
    return np.array([pts.min(axis=0) - r, pts.max(axis=0) + r])


def _ball_box(e: Ellipsoid, pad=2.0) -> np.ndarray:
    c = np.asarray(e.center)
    r = np.asarray(e.radii) + pad
    return np.array([c - r, c + r])


# --- defect handlers ----------------------------------------------------------


def _apply_defects(scene: _Scene, defects: tuple[Defect, ...]) -> set[CHDType]:
    truth: set[CHDType] = set()
    for d in defects:
        p = d.params
        if d.kind == "septal_hole":
            if p["location"] == "atrial":
                ball = Ellipsoid(scene._pt(60.5, 88, 44), (6.0, p.get("diameter", 8.0) / 2, p.get("diameter", 8.0) / 2))
                scene.holes.append(("atrial", ball))
                truth.add(CHDType.ASD)
            else:
                ball = Ellipsoid(scene._pt(59.5, 58, 40), (7.0, p.get("diameter", 9.0) / 2, p.get("diameter", 9.0) / 2))
                scene.holes.append(("ventricular", ball))
                truth.add(CHDType.VSD)
            scene.boxes.append(_ball_box(ball))
        elif d.kind == "ao_overriding":
            old = _tube_box(scene.ao_points[:2], scene.ao_radii[:2])
            scene.ao_points[0] = scene._pt(59.5, 58, 49)
            scene.ao_points[1] = scene._pt(52, 60, 72, 0)
            scene.boxes.append(_merge_boxes(old, _tube_box(scene.ao_points[:2], scene.ao_radii[:2])))
            truth.add(CHDType.TOF)
        elif d.kind == "reversed_origins":
            old = _merge_boxes(
                _tube_box(scene.ao_points[:2], scene.ao_radii[:2]),
                _tube_box(scene.pa_trunk[:2], scene.pa_trunk_radii[:2]),
            )
            scene.ao_points[0] = scene._pt(72, 56, 48)
            scene.ao_points[1] = scene._pt(66, 60, 70, 0)
            scene.pa_trunk[0] = scene._pt(46, 58, 50)
            scene.pa_trunk[1] = scene._pt(54, 53, 68, 4)
            scene.boxes.append(
                _merge_boxes(
                    old,
                    _merge_boxes(
                        _tube_box(scene.ao_points[:2], scene.ao_radii[:2]),
                        _tube_box(scene.pa_trunk[:2], scene.pa_trunk_radii[:2]),
                    ),
                )
            )
            truth.add(CHDType.TGA)
        elif d.kind == "rv_origin_both":
            old = _merge_boxes(
                _tube_box(scene.ao_points[:2], scene.ao_radii[:2]),
                _tube_box(scene.pa_trunk[:2], scene.pa_trunk_radii[:2]),
            )
            scene.ao_points[0] = scene._pt(68, 50, 50)
            scene.ao_points[1] = scene._pt(60, 58, 72, 0)
            scene.pa_trunk[0] = scene._pt(79, 63, 48)
            scene.pa_trunk[1] = scene._pt(70, 56, 68, 4)
            scene.boxes.append(
                _merge_boxes(
                    old,
                    _merge_boxes(
                        _tube_box(scene.ao_points[:2], scene.ao_radii[:2]),
                        _tube_box(scene.pa_trunk[:2], scene.pa_trunk_radii[:2]),
                    ),
                )
            )
            truth.add(CHDType.DORV)
        elif d.kind == "common_trunk":
            box = _merge_boxes(
                _tube_box(scene.ao_points, scene.ao_radii),
                _tube_box(scene.pa_trunk, scene.pa_trunk_radii),
            )
            base = scene._pt(52, 58, 48)
            split = scene._pt(56, 56, 68)
            r0 = scene.ao_radii[0] * 1.25
            scene.ao_points = [base, split, scene._pt(58, 62, 86, 1), scene._pt(72, 66, 86, 2),
                               scene._pt(86, 70, 74, 3), scene._pt(90, 74, 28)]
            scene.ao_radii = [r0, r0 * 0.9, 5.6, 5.4, 5.2, 5.0]
            scene.pa_trunk = [split, scene._pt(60, 52, 73, 4), scene._pt(62, 50, 76)]
            scene.pa_trunk_radii = [r0 * 0.8, 5.2, 5.0]
            scene.pa_left[0] = scene.pa_trunk[-1]
            scene.pa_right[0] = scene.pa_trunk[-1]
            scene.ao_initial_mm = 18.0
            scene.pa_initial_mm = 10.0
            scene.boxes.append(box)
            truth.add(CHDType.CAT)
        elif d.kind == "double_arch":
            box = _tube_box(scene.ao_points, scene.ao_radii)
            split = scene._pt(48, 60, 70, 0)
            join = scene._pt(84, 70, 72, 3)
            front = Tube(
                (split, scene._pt(58, 62, 84, 1), scene._pt(72, 66, 84, 2), join),
                (4.8, 4.6, 4.6, 4.8),
            )
            back = Tube(
                (split, scene._pt(56, 74, 76), scene._pt(70, 78, 76), join),
                (4.4, 4.2, 4.2, 4.4),
            )
            scene.ao_points = [scene.ao_points[0], split]
            scene.ao_radii = scene.ao_radii[:2]
            scene.extra_tubes.extend([front, back])
            scene.extra_tubes.append(Tube((join, scene._pt(90, 74, 28)), (4.8, 4.6)))
            scene.boxes.append(
                _merge_boxes(box, _merge_boxes(_tube_box(front.points, front.radii), _tube_box(back.points, back.radii)))
            )
            truth.add(CHDType.DAA)
        elif d.kind == "narrow_segment":
            start = p.get("start_mm", 44.0)
            end = p.get("end_mm", 56.0)
            ratio = p.get("ratio", 0.4)
            scene.ao_narrow.append((start, end, ratio))
            scene.boxes.append(_tube_box(scene.ao_points, scene.ao_radii))
            truth.add(CHDType.AAH if (end - start) >= 25.0 else CHDType.CA)
        elif d.kind == "arch_interruption":
            start = p.get("start_mm", 42.0)
            end = p.get("end_mm", 54.0)
            scene.ao_gaps.append((start, end))
            scene.boxes.append(_tube_box(scene.ao_points, scene.ao_radii))
            truth.add(CHDType.IAA)
        elif d.kind == "extra_duct":
            duct = Tube(
                (scene._pt(88, 72, 58), scene._pt(74, 60, 62), scene._pt(58, 49, 75)),
                (3.0, 3.0, 3.0),
            )
            scene.extra_tubes.append(duct)
            scene.boxes.append(_tube_box(duct.points, duct.radii))
            truth.add(CHDType.PDA)
        elif d.kind == "absent_pa_trunk":
            box = _tube_box(scene.pa_trunk, scene.pa_trunk_radii)
            scene.pa_trunk = None
            scene.pa_trunk_radii = None
            thin = p.get("radius", 2.4)
            scene.pa_branch_r = thin
            mid = scene._pt(62, 50, 76)
            scene.pa_left = [mid, scene._pt(52, 47, 78, 5), scene._pt(38, 44, 82)]
            scene.pa_right = [mid, scene._pt(78, 48, 80, 6), scene._pt(92, 46, 82)]
            scene.boxes.append(
                _merge_boxes(box, _merge_boxes(_tube_box(scene.pa_left, [thin]), _tube_box(scene.pa_right, [thin])))
            )
            truth.add(CHDType.PuA)
        elif d.kind == "pa_sling_course":
            box = _tube_box(scene.pa_left, [scene.pa_branch_r])
            scene.pa_left = [
                scene.pa_left[0],
                scene._pt(70, 58, 68),
                scene._pt(76, 74, 66),
                scene._pt(58, 84, 68),
                scene._pt(42, 78, 72, 5),
            ]
            scene.boxes.append(_merge_boxes(box, _tube_box(scene.pa_left, [scene.pa_branch_r])))
            truth.add(CHDType.PAS)
        elif d.kind == "extra_svc":
            svc2 = Tube((scene._pt(66, 87, 50), scene._pt(58, 84, 98, 7)), (3.5, 3.3))
            scene.svcs.append(svc2)
            scene.boxes.append(_tube_box(svc2.points, svc2.radii))
            truth.add(CHDType.DSVC)
        elif d.kind == "la_split":
            box = _ball_box(scene.chambers["LA"][0])
            scene.chambers["LA"] = [
                Ellipsoid(scene._pt(41, 84, 41), (7.0, 7.0, 7.0)),
                Ellipsoid(scene._pt(55, 94, 52), (6.0, 6.0, 6.0)),
            ]
            for e in scene.chambers["LA"]:
                box = _merge_boxes(box, _ball_box(e))
            scene.boxes.append(box)
            truth.add(CHDType.APVC)
        else:  # pragma: no cover - DEFECT_KINDS is exhaustive
            raise PhantomSpecError(f"unhandled defect {d.kind!r}")
    # label-implication merges
    if CHDType.TOF in truth:
        truth.discard(CHDType.VSD)
    if CHDType.ASD in truth and CHDType.VSD in truth:
        truth -= {CHDType.ASD, CHDType.VSD}
        truth.add(CHDType.AVSD)
    if not truth:
        truth.add(CHDType.NORMAL)
    return truth


def _merge_boxes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array([np.minimum(a[0], b[0]), np.maximum(a[1], b[1])])


# --- rasterization ------------------------------------------------------------


class _Raster:
    def __init__(self, dims, spacing, jitter_scale):
        self.dims = dims
        self.spacing = np.asarray(spacing, float)
        # reference-mm -> world-mm: per-axis stretch to the grid extent,
        # times the seeded isotropic size jitter
        self.world = np.asarray(
            [dims[i] * spacing[i] / REFERENCE_EXTENT for i in range(3)]
        ) * jitter_scale
        self.blood = np.zeros(dims, bool)
        self.label = np.zeros(dims, np.uint8)

    def _to_world(self, p) -> np.ndarray:
        return np.asarray(p, float) * self.world

    def _grid_range(self, lo_mm, hi_mm):
        lo = np.maximum(np.floor(lo_mm / self.spacing - 0.5).astype(int), 0)
        hi = np.minimum(np.ceil(hi_mm / self.spacing + 0.5).astype(int) + 1, self.dims)
        if (lo >= hi).any():
            return None
        return lo, hi

    def _centers(self, lo, hi):
        ax = [(np.arange(lo[i], hi[i]) + 0.5) * self.spacing[i] for i in range(3)]
        return np.meshgrid(*ax, indexing="ij")

    def paint_ellipsoid(self, e: Ellipsoid, label: int | None, blood: bool):
        c = self._to_world(e.center)
        r = np.asarray(e.radii, float) * self.world
        rng = self._grid_range(c - r, c + r)
        if rng is None:
            return
        lo, hi = rng
        X, Y, Z = self._centers(lo, hi)
        inside = (
            ((X - c[0]) / r[0]) ** 2 + ((Y - c[1]) / r[1]) ** 2 + ((Z - c[2]) / r[2]) ** 2
        ) <= 1.0
        sl = (slice(lo[0], hi[0]), slice(lo[1], hi[1]), slice(lo[2], hi[2]))
        if blood:
            self.blood[sl] |= inside
        if label is not None:
            self.label[sl][inside] = label

    def paint_shell(self, e: Ellipsoid, margin: float, label: int):
        c = self._to_world(e.center)
        r_in = np.asarray(e.radii, float) * self.world
        r_out = r_in + margin * self.world
        rng = self._grid_range(c - r_out, c + r_out)
        if rng is None:
            return
        lo, hi = rng
        X, Y, Z = self._centers(lo, hi)
        q_out = ((X - c[0]) / r_out[0]) ** 2 + ((Y - c[1]) / r_out[1]) ** 2 + ((Z - c[2]) / r_out[2]) ** 2
        q_in = ((X - c[0]) / r_in[0]) ** 2 + ((Y - c[1]) / r_in[1]) ** 2 + ((Z - c[2]) / r_in[2]) ** 2
        shell = (q_out <= 1.0) & (q_in > 1.0)
        sl = (slice(lo[0], hi[0]), slice(lo[1], hi[1]), slice(lo[2], hi[2]))
        self.label[sl][shell] = label

    def paint_tube(
        self,
        tube: Tube,
        label: int | None = None,
        label_until_mm: float | None = None,
        narrow: list | None = None,
        gaps: list | None = None,
    ):
        """Sweep cone segments along the densified centerline.

        `narrow` entries (start, end, factor) shrink the radius inside an
        arc window; `gaps` remove blood inside a window entirely; both are
        in reference arc millimetres from the tube start.
        """
        pts = np.array([self._to_world(p) for p in tube.points])
        rr = np.asarray(tube.radii, float) * float(np.mean(self.world))
        # densify to ~3 mm segments for smooth sweeping
        dense_p = [pts[0]]
        dense_r = [rr[0]]
        dense_s = [0.0]
        s_ref = 0.0
        for i in range(len(pts) - 1):
            seg = pts[i + 1] - pts[i]
            L = float(np.linalg.norm(seg))
            ref_L = L / float(np.mean(self.world))
            n = max(1, int(np.ceil(L / 3.0)))
            for k in range(1, n + 1):
                t = k / n
                dense_p.append(pts[i] + t * seg)
                dense_r.append(rr[i] + t * (rr[i + 1] - rr[i]))
                dense_s.append(s_ref + t * ref_L)
            s_ref += ref_L
        for i in range(len(dense_p) - 1):
            a, b = dense_p[i], dense_p[i + 1]
            ra, rb = dense_r[i], dense_r[i + 1]
            sa, sb = dense_s[i], dense_s[i + 1]
            mid_s = 0.5 * (sa + sb)
            factor = 1.0
            for ws, we, f in narrow or ():
                if ws <= mid_s <= we:
                    factor = min(factor, f)
            skip = any(ws <= mid_s <= we for ws, we in gaps or ())
            if skip:
                continue
            ra_, rb_ = ra * factor, rb * factor
            rmax = max(ra_, rb_)
            lo_mm = np.minimum(a, b) - rmax
            hi_mm = np.maximum(a, b) + rmax
            rng = self._grid_range(lo_mm, hi_mm)
            if rng is None:
                continue
            lo, hi = rng
            X, Y, Z = self._centers(lo, hi)
            d = b - a
            L2 = float(d @ d)
            if L2 == 0:
                continue
            t = ((X - a[0]) * d[0] + (Y - a[1]) * d[1] + (Z - a[2]) * d[2]) / L2
            np.clip(t, 0.0, 1.0, out=t)
            r_here = ra_ + t * (rb_ - ra_)
            dist2 = (X - (a[0] + t * d[0])) ** 2 + (Y - (a[1] + t * d[1])) ** 2 + (Z - (a[2] + t * d[2])) ** 2
            inside = dist2 <= r_here**2
            sl = (slice(lo[0], hi[0]), slice(lo[1], hi[1]), slice(lo[2], hi[2]))
            self.blood[sl] |= inside
            if label is not None and label_until_mm is not None and sa < label_until_mm:
                lab_inside = inside & (sa + t * (sb - sa) <= label_until_mm)
                self.label[sl][lab_inside] = label

    def paint_hole(self, rule: str, ball: Ellipsoid):
        c = self._to_world(ball.center)
        r = np.asarray(ball.radii, float) * self.world
        rng = self._grid_range(c - r, c + r)
        if rng is None:
            return
        lo, hi = rng
        X, Y, Z = self._centers(lo, hi)
        inside = (
            ((X - c[0]) / r[0]) ** 2 + ((Y - c[1]) / r[1]) ** 2 + ((Z - c[2]) / r[2]) ** 2
        ) <= 1.0
        sl = (slice(lo[0], hi[0]), slice(lo[1], hi[1]), slice(lo[2], hi[2]))
        self.blood[sl] |= inside
        left, right = (3, 4) if rule == "atrial" else (1, 2)
        lab = np.where(X < c[0], left, right).astype(np.uint8)
        region = self.label[sl]
        region[inside] = lab[inside]


def _majority_downsample(label: np.ndarray, factor: int) -> np.ndarray:
    """Blockwise majority vote; ties go to the smaller label id."""
    nx, ny, nz = label.shape
    blocks = label.reshape(nx // factor, factor, ny // factor, factor, nz // factor, factor)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5).reshape(-1, factor**3)
    counts = np.zeros((blocks.shape[0], 8), np.int32)
    for lab in range(8):
        counts[:, lab] = (blocks == lab).sum(axis=1)
    # argmax returns the first (smallest) label on ties
    out = counts.argmax(axis=1).astype(np.uint8)
    return out.reshape(nx // factor, ny // factor, nz // factor)


@dataclass(frozen=True)
class PhantomResult:
    case: CaseInput
    truth: frozenset[CHDType]
    defect_boxes_mm: tuple[np.ndarray, ...]


def generate_detailed(spec: PhantomSpec) -> PhantomResult:
    """Rasterize a phantom spec into a case plus its ground truth."""
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    scene = _Scene(rng)
    truth = _apply_defects(scene, spec.defects)
    ras = _Raster(spec.dims, spec.spacing, scene.scale)
    # myocardial shell first; blood and chamber labels override it
    ras.paint_shell(scene.chambers["LV"][0], scene.myo_margin, 5)
    ras.paint_tube(scene.tube_ao(), label=6, label_until_mm=scene.ao_initial_mm,
                   narrow=scene.ao_narrow, gaps=scene.ao_gaps)
    for tube, is_trunk in scene.tubes_pa():
        if is_trunk:
            ras.paint_tube(tube, label=7, label_until_mm=scene.pa_initial_mm)
        else:
            ras.paint_tube(tube)
    for svc in scene.svcs:
        ras.paint_tube(svc)
    for tube in scene.extra_tubes:
        ras.paint_tube(tube)
    for name, lab in (("LV", 1), ("RV", 2), ("LA", 3), ("RA", 4)):
        for e in scene.chambers[name]:
            ras.paint_ellipsoid(e, lab, blood=True)
    for rule, ball in scene.holes:
        ras.paint_hole(rule, ball)
    low = _majority_downsample(ras.label, spec.low_factor)
    low_spacing = tuple(s * spec.low_factor for s in spec.spacing)
    low_dims = tuple(d // spec.low_factor for d in spec.dims)
    case = CaseInput(
        case_id=_case_id(spec),
        blood_pool=BinaryMask(spec.dims, spec.spacing, ras.blood),
        substructures=LabelVolume(low_dims, low_spacing, low),
    )
    world = np.asarray([spec.dims[i] * spec.spacing[i] / REFERENCE_EXTENT for i in range(3)]) * scene.scale
    boxes = tuple(b * world for b in scene.boxes)
    return PhantomResult(case=case, truth=frozenset(truth), defect_boxes_mm=boxes)


def generate(spec: PhantomSpec) -> tuple[CaseInput, frozenset[CHDType]]:
    res = generate_detailed(spec)
    return res.case, res.truth


def _case_id(spec: PhantomSpec) -> str:
    kinds = "+".join(d.kind for d in spec.defects) or "normal"
    return f"phantom-{kinds}-s{spec.seed}"


# --- presets ------------------------------------------------------------------

PRESETS: dict[str, tuple[Defect, ...]] = {
    "normal": (),
    "asd": (Defect("septal_hole", {"location": "atrial", "diameter": 8.0}),),
    "vsd": (Defect("septal_hole", {"location": "ventricular", "diameter": 9.0}),),
    "avsd": (
        Defect("septal_hole", {"location": "atrial", "diameter": 8.0}),
        Defect("septal_hole", {"location": "ventricular", "diameter": 9.0}),
    ),
    "tof": (
        Defect("septal_hole", {"location": "ventricular", "diameter": 9.0}),
        Defect("ao_overriding"),
    ),
    "tga": (Defect("reversed_origins"),),
    "dorv": (Defect("rv_origin_both"),),
    "cat": (Defect("common_trunk"),),
    "daa": (Defect("double_arch"),),
    "ca": (Defect("narrow_segment", {"start_mm": 44.0, "end_mm": 56.0, "ratio": 0.4}),),
    "aah": (Defect("narrow_segment", {"start_mm": 34.0, "end_mm": 66.0, "ratio": 0.45}),),
    "iaa": (Defect("arch_interruption", {"start_mm": 42.0, "end_mm": 54.0}),),
    "pda": (Defect("extra_duct"),),
    "pua": (Defect("absent_pa_trunk"),),
    "pas": (Defect("pa_sling_course"),),
    "apvc": (Defect("la_split"),),
    "dsvc": (Defect("extra_svc"),),
}

PRESET_TRUTH = {
    "normal": CHDType.NORMAL, "asd": CHDType.ASD, "vsd": CHDType.VSD, "avsd": CHDType.AVSD,
    "tof": CHDType.TOF, "tga": CHDType.TGA, "dorv": CHDType.DORV, "cat": CHDType.CAT,
    "daa": CHDType.DAA, "ca": CHDType.CA, "aah": CHDType.AAH, "iaa": CHDType.IAA,
    "pda": CHDType.PDA, "pua": CHDType.PuA, "pas": CHDType.PAS, "apvc": CHDType.APVC,
    "dsvc": CHDType.DSVC,
}


def preset_spec(name: str, seed: int, dims=(128, 128, 128), spacing=(1.0, 1.0, 1.0)) -> PhantomSpec:
    if name not in PRESETS:
        raise PhantomSpecError(f"unknown preset {name!r}; choices: {', '.join(sorted(PRESETS))}")
    return PhantomSpec(seed=seed, dims=tuple(dims), spacing=tuple(spacing), defects=PRESETS[name])


# --- corruption helpers (selective-gate exercises) ------------------------------


def delete_chamber(case: CaseInput, chamber: str) -> CaseInput:
    """Zero out one chamber's label, simulating a failed segmentation."""
    from .volume import LABEL_IDS

    lab = LABEL_IDS[chamber]
    arr = case.substructures.labels.copy()
    arr[arr == lab] = 0
    return CaseInput(
        case_id=case.case_id + f"-no{chamber}",
        blood_pool=case.blood_pool,
        substructures=LabelVolume(case.substructures.dims, case.substructures.spacing, arr),
    )


def shift_case(case: CaseInput, voxels: tuple[int, int, int]) -> CaseInput:
    """Translate both volumes by whole high-res voxels (content must fit)."""
    hi = _shift_array(case.blood_pool.bits, voxels)
    if hi.sum() != case.blood_pool.bits.sum():
        raise PhantomSpecError("shift clips blood-pool content")
    factor = round(case.substructures.spacing[0] / case.blood_pool.spacing[0])
    if any(v % factor for v in voxels):
        raise PhantomSpecError(f"shift must be a multiple of the low-res factor {factor}")
    lowshift = tuple(v // factor for v in voxels)
    lo = _shift_array(case.substructures.labels, lowshift)
    return CaseInput(
        case_id=case.case_id + "-shifted",
        blood_pool=BinaryMask(case.blood_pool.dims, case.blood_pool.spacing, hi),
        substructures=LabelVolume(case.substructures.dims, case.substructures.spacing, lo),
    )


def _shift_array(arr: np.ndarray, voxels) -> np.ndarray:
    out = np.zeros_like(arr)
    src = []
    dst = []
    for ax, v in enumerate(voxels):
        n = arr.shape[ax]
        if v >= 0:
            src.append(slice(0, n - v))
            dst.append(slice(v, n))
        else:
            src.append(slice(-v, n))
            dst.append(slice(0, n + v))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def write_case(case: CaseInput, truth: frozenset[CHDType], directory: str | Path) -> Path:
    """Emit a case directory: CVOL volumes + truth sidecar."""
    from .vol_io import write_cvol

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_cvol(case.blood_pool, directory / "blood_pool.cvol")
    write_cvol(case.substructures, directory / "substructures.cvol")
    (directory / "truth.json").write_text(
        json.dumps({"case_id": case.case_id, "labels": sorted(t.value for t in truth)}, indent=2),
        encoding="utf-8",
    )
    return directory


def read_case(directory: str | Path) -> tuple[CaseInput, frozenset[CHDType] | None]:
    """Load a case directory written by `write_case` (truth optional)."""
    from .vol_io import read_cvol

    directory = Path(directory)
    blood = read_cvol(directory / "blood_pool.cvol")
    subs = read_cvol(directory / "substructures.cvol")
    truth = None
    case_id = directory.name
    tpath = directory / "truth.json"
    if tpath.exists():
        raw = json.loads(tpath.read_text(encoding="utf-8"))
        truth = frozenset(CHDType.from_name(n) for n in raw["labels"])
        case_id = raw.get("case_id", case_id)
    return CaseInput(case_id=case_id, blood_pool=blood, substructures=subs), truth
