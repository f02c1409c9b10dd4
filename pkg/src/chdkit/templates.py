"""Template library and best-match retrieval over sampled skeletons.

A library holds categorized reference skeletons for the six great-artery
shape categories.  Matching computes the exact earth mover's distance of a
case skeleton against every template; "highest similarity" means lowest
distance.  Skeletons are only comparable when produced under the same
config fingerprint, and that is enforced, not assumed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .emd import emd
from .errors import EmptyInputError, FingerprintMismatchError, FormatError
from .skeleton import SampledSkeleton, load_skeleton, save_skeleton

CATEGORIES = ("CAT", "DAA", "PuA", "PAS", "IAA", "Normal")


@dataclass(frozen=True)
class Template:
    """One reference skeleton with its shape category."""

    id: str
    category: str
    skeleton: SampledSkeleton

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise FormatError(f"unknown template category {self.category!r}")


@dataclass(frozen=True)
class TemplateLibrary:
    templates: tuple[Template, ...]
    cfg_fingerprint: str

    def __post_init__(self):
        if not self.templates:
            raise EmptyInputError("template library is empty")
        per_cat: dict[str, int] = {c: 0 for c in CATEGORIES}
        seen_ids = set()
        for t in self.templates:
            if t.id in seen_ids:
                raise FormatError(f"duplicate template id {t.id!r}")
            seen_ids.add(t.id)
            if t.skeleton.fingerprint and t.skeleton.fingerprint != self.cfg_fingerprint:
                raise FingerprintMismatchError(
                    f"template {t.id!r} fingerprint {t.skeleton.fingerprint!r} "
                    f"!= library {self.cfg_fingerprint!r}"
                )
            per_cat[t.category] += 1
        missing = [c for c, n in per_cat.items() if n == 0]
        if missing:
            raise FormatError(f"library lacks categories: {', '.join(missing)}")
        singletons = [c for c, n in per_cat.items() if n == 1]
        if singletons:
            warnings.warn(
                f"single-template categories: {', '.join(singletons)}; "
                "matching is more robust with several templates per category",
                stacklevel=3,
            )


@dataclass(frozen=True)
class ShapeMatch:
    """Result of matching one skeleton against the whole library."""

    best_category: str
    best_template_id: str
    min_emd: float
    per_template_emd: tuple[tuple[str, float], ...] = field(repr=False)

    def __post_init__(self):
        if not self.per_template_emd:
            raise EmptyInputError("shape match carries no per-template distances")
        lowest = min(v for _, v in self.per_template_emd)
        if abs(lowest - self.min_emd) > 1e-12:
            raise FormatError("min_emd does not match the per-template distances")


def build_library(cases: list[tuple[SampledSkeleton, str]]) -> TemplateLibrary:
    """Assemble a library from (skeleton, category) pairs.

    Template ids come from skeleton provenance; fingerprints must agree.
    """
    if not cases:
        raise EmptyInputError("cannot build a library from zero skeletons")
    fingerprints = {s.fingerprint for s, _ in cases}
    if len(fingerprints) > 1:
        raise FingerprintMismatchError(f"mixed fingerprints in library input: {sorted(fingerprints)}")
    templates = tuple(
        Template(id=s.provenance or f"template-{i:03d}", category=cat, skeleton=s)
        for i, (s, cat) in enumerate(cases)
    )
    return TemplateLibrary(templates=templates, cfg_fingerprint=fingerprints.pop())


def match_templates(s: SampledSkeleton, lib: TemplateLibrary) -> ShapeMatch:
    """Distance of `s` to every template; best = lowest, ties to lower id."""
    if s.fingerprint != lib.cfg_fingerprint:
        raise FingerprintMismatchError(
            f"case fingerprint {s.fingerprint!r} != library {lib.cfg_fingerprint!r}"
        )
    scored = sorted(
        ((t.id, emd(s, t.skeleton), t.category) for t in lib.templates),
        key=lambda row: (row[1], row[0]),
    )
    best_id, best_val, best_cat = scored[0]
    return ShapeMatch(
        best_category=best_cat,
        best_template_id=best_id,
        min_emd=float(best_val),
        per_template_emd=tuple((tid, float(v)) for tid, v, _ in sorted(scored)),
    )


# --- disk format -------------------------------------------------------------


def save_library(lib: TemplateLibrary, directory: str | Path) -> Path:
    """Write a library directory: manifest.json + one record per template."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, t in enumerate(lib.templates):
        fname = f"template_{i:03d}.skel"
        save_skeleton(t.skeleton, directory / fname, category=t.category)
        entries.append({"id": t.id, "category": t.category, "file": fname})
    manifest = {"cfg_fingerprint": lib.cfg_fingerprint, "templates": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return directory


def load_library(directory: str | Path) -> TemplateLibrary:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json under {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    templates = []
    for entry in manifest["templates"]:
        skel, _ = load_skeleton(directory / entry["file"])
        templates.append(Template(id=entry["id"], category=entry["category"], skeleton=skel))
    return TemplateLibrary(templates=tuple(templates), cfg_fingerprint=manifest["cfg_fingerprint"])
