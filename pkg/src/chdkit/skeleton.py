"""Great-vessel shape analysis: extraction, thinning, sampling, features.

The vessel mask is whatever blood remains once chamber and myocardium
labels are carved out.  It is cleaned (small islands, one smoothing
erosion), thinned to a one-voxel centerline, annotated with inscribed-
sphere radii from the distance transform, and finally resampled into a
normalized weighted point set whose weights are r**3 — a proxy for the
blood volume each sample represents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from skimage.morphology import skeletonize as _thin3d

from .config import PipelineConfig
from .connections import CaseInput
from .errors import EmptyInputError, FormatError
from .volume import BinaryMask, connected_components, erode

_OFFSETS26 = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ],
    dtype=np.int64,
)
_OFFSETS6 = np.array([(1, 0, 0), (0, 1, 0), (0, 0, 1)], dtype=np.int64)


# --- vessel mask ------------------------------------------------------------


def extract_vessels(case: CaseInput, cfg: PipelineConfig | None = None) -> BinaryMask:
    """Blood pool with chamber and myocardium voxels removed.

    The result keeps the artery initial parts, all distal vessel lumen,
    and any veins present in the blood pool.  May be empty; an empty
    vessel mask surfaces downstream as an Uncertain outcome.
    """
    del cfg
    up = case.upsampled_labels
    keep = case.blood_pool.bits & ~np.isin(up, (1, 2, 3, 4, 5))
    return case.blood_pool.with_bits(keep)


def _drop_small(mask: BinaryMask, min_voxels: int, connectivity: int) -> BinaryMask:
    if min_voxels <= 1 or not mask.bits.any():
        return mask
    comps = connected_components(mask, connectivity)
    keep_ids = np.flatnonzero(comps.component_sizes >= min_voxels) + 1
    if keep_ids.size == comps.n_components:
        return mask
    return mask.with_bits(np.isin(comps.component_id, keep_ids))


def refine_vessels(vessels: BinaryMask, cfg: PipelineConfig) -> BinaryMask:
    """Remove small islands, smooth with erosion, re-check islands."""
    out = _drop_small(vessels, cfg.min_island_voxels, cfg.solid_connectivity)
    out = erode(out, cfg.erosion_iters)
    return _drop_small(out, cfg.min_island_voxels, cfg.solid_connectivity)


def skeletonize(mask: BinaryMask) -> BinaryMask:
    """Topology-preserving one-voxel centerline of a binary mask.

    Iterative 3D thinning (directional boundary peeling that never removes
    a voxel whose deletion would change local topology), so component and
    cycle counts match the input and no interior voxels remain.
    """
    bits = mask.bits
    if not bits.any():
        return mask
    # thin only the content bounding box; thinning is translation-equivariant
    idx = np.argwhere(bits)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0) + 1
    sub = bits[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    thinned = _thin3d(sub).astype(bool)
    out = np.zeros(mask.dims, bool)
    out[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = thinned
    return mask.with_bits(out)


# --- skeleton graph ---------------------------------------------------------


@dataclass(frozen=True)
class SkeletonGraph:
    """Radius-annotated graph over skeleton voxels.

    One node per skeleton voxel, ordered by x-fastest flat voxel index;
    edges join 26-adjacent voxels.  Radii come from the distance transform
    of the mask the skeleton was thinned from.  `labels`, when present,
    carries the substructure label under each node.
    """

    positions: np.ndarray = field(repr=False)  # (n, 3) mm
    radii: np.ndarray = field(repr=False)  # (n,)
    edges: np.ndarray = field(repr=False)  # (e, 2) int64, u < v
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, np.float64).reshape(-1, 3)
        rad = np.asarray(self.radii, np.float64).reshape(-1)
        edg = np.asarray(self.edges, np.int64).reshape(-1, 2)
        if rad.shape[0] != pos.shape[0]:
            raise FormatError("radii length does not match node count")
        if (rad < 0).any():
            raise FormatError("radii must be nonnegative")
        if edg.size and (edg.min() < 0 or edg.max() >= pos.shape[0]):
            raise FormatError("edge endpoint out of range")
        for name, arr in (("positions", pos), ("radii", rad), ("edges", edg)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.labels is not None:
            lab = np.asarray(self.labels, np.uint8).reshape(-1)
            if lab.shape[0] != pos.shape[0]:
                raise FormatError("labels length does not match node count")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    @property
    def n_nodes(self) -> int:
        return int(self.positions.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, np.int64)
        if self.n_edges:
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        deg.flags.writeable = False
        return deg

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, ...]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            adj[u].append(int(v))
            adj[v].append(int(u))
        return tuple(np.array(sorted(a), np.int64) for a in adj)

    @cached_property
    def component_ids(self) -> np.ndarray:
        comp = np.full(self.n_nodes, -1, np.int64)
        nxt = 0
        for seed in range(self.n_nodes):
            if comp[seed] >= 0:
                continue
            stack = [seed]
            comp[seed] = nxt
            while stack:
                u = stack.pop()
                for v in self.neighbors[u]:
                    if comp[v] < 0:
                        comp[v] = nxt
                        stack.append(v)
            nxt += 1
        comp.flags.writeable = False
        return comp

    @property
    def n_components(self) -> int:
        return int(self.component_ids.max() + 1) if self.n_nodes else 0

    @property
    def cycle_rank(self) -> int:
        """Number of independent cycles (first Betti number)."""
        return self.n_edges - self.n_nodes + self.n_components


def build_graph(
    skel: BinaryMask,
    edt: np.ndarray,
    labels: np.ndarray | None = None,
) -> SkeletonGraph:
    """Lift a skeleton mask into a SkeletonGraph.

    `edt` must be the distance field of the mask the skeleton came from
    (every skeleton voxel must be foreground there).  Node order is the
    x-fastest flat voxel index, making downstream processing deterministic.
    """
    if edt.shape != skel.dims:
        raise FormatError("distance field shape does not match the skeleton grid")
    vox = np.argwhere(skel.bits)
    if vox.size == 0:
        return SkeletonGraph(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 2), np.int64))
    nx, ny, nz = skel.dims
    flat = vox[:, 0] + nx * (vox[:, 1] + ny * vox[:, 2])
    order = np.argsort(flat, kind="stable")
    vox = vox[order]
    node_at = np.full(skel.dims, -1, np.int64)
    node_at[vox[:, 0], vox[:, 1], vox[:, 2]] = np.arange(vox.shape[0])
    r = edt[vox[:, 0], vox[:, 1], vox[:, 2]]
    if (r <= 0).any():
        raise FormatError("skeleton voxel falls on distance-field background")
    spacing = np.asarray(skel.spacing)
    pos = (vox + 0.5) * spacing
    edges = []
    for off in _OFFSETS26:
        q = vox + off
        ok = ((q >= 0) & (q < (nx, ny, nz))).all(axis=1)
        if not ok.any():
            continue
        nb = node_at[q[ok, 0], q[ok, 1], q[ok, 2]]
        src = np.flatnonzero(ok)[nb >= 0]
        dst = nb[nb >= 0]
        if src.size:
            e = np.stack([node_at[vox[src, 0], vox[src, 1], vox[src, 2]], dst], axis=1)
            edges.append(np.sort(e, axis=1))
    if edges:
        alledges = np.unique(np.concatenate(edges, axis=0), axis=0)
    else:
        alledges = np.zeros((0, 2), np.int64)
    node_labels = None
    if labels is not None:
        node_labels = labels[vox[:, 0], vox[:, 1], vox[:, 2]]
    return SkeletonGraph(pos, r, alledges, node_labels)


# --- branch decomposition ---------------------------------------------------


def branch_paths(g: SkeletonGraph) -> list[np.ndarray]:
    """Decompose the graph into maximal paths between critical nodes.

    Critical nodes are endpoints (degree != 2) including isolated voxels;
    pure cycles with no critical node come out as one closed path whose
    first and last entries coincide.  Every edge appears in exactly one
    path.  Deterministic: traversal follows ascending node indices.
    """
    deg = g.degrees
    paths: list[np.ndarray] = []
    seen_edges: set[tuple[int, int]] = set()

    def edge_key(u: int, v: int) -> tuple[int, int]:
        return (u, v) if u < v else (v, u)

    for c in range(g.n_nodes):
        if deg[c] == 2:
            continue
        if deg[c] == 0:
            paths.append(np.array([c], np.int64))
            continue
        for first in g.neighbors[c]:
            if edge_key(c, first) in seen_edges:
                continue
            path = [c, int(first)]
            seen_edges.add(edge_key(c, int(first)))
            prev, cur = c, int(first)
            while deg[cur] == 2:
                a, b = g.neighbors[cur]
                nxt = int(b) if a == prev else int(a)
                seen_edges.add(edge_key(cur, nxt))
                path.append(nxt)
                prev, cur = cur, nxt
            paths.append(np.array(path, np.int64))
    # leftover edges are pure cycles of degree-2 nodes
    for s in range(g.n_nodes):
        if deg[s] != 2:
            continue
        nb = [v for v in g.neighbors[s] if edge_key(s, int(v)) not in seen_edges]
        if not nb:
            continue
        path = [s, int(nb[0])]
        seen_edges.add(edge_key(s, int(nb[0])))
        prev, cur = s, int(nb[0])
        while cur != s:
            a, b = g.neighbors[cur]
            nxt = int(b) if a == prev else int(a)
            seen_edges.add(edge_key(cur, nxt))
            path.append(nxt)
            prev, cur = cur, nxt
        paths.append(np.array(path, np.int64))
    return paths


def _path_arclengths(g: SkeletonGraph, path: np.ndarray) -> np.ndarray:
    pos = g.positions[path]
    if len(path) == 1:
        return np.zeros(1)
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def endpoint_branches(g: SkeletonGraph) -> list[tuple[int, float]]:
    """(endpoint node, arc length of its branch) for every degree<=1 node."""
    out = []
    for path in branch_paths(g):
        length = float(_path_arclengths(g, path)[-1])
        for node in (int(path[0]), int(path[-1])):
            if g.degrees[node] <= 1:
                out.append((node, length))
    # deduplicate single-node paths listing the same endpoint twice
    seen = set()
    uniq = []
    for node, length in out:
        if node not in seen:
            seen.add(node)
            uniq.append((node, length))
    return uniq


# --- sampling and normalization ---------------------------------------------


@dataclass(frozen=True)
class SampledSkeleton:
    """Normalized weighted point set describing vessel shape.

    Invariants (enforced on construction, up to float tolerance): weights
    are nonnegative and sum to 1; the weighted centroid sits at the origin;
    unless the input was degenerate (a single point, or all points
    coincident) the unweighted RMS distance of points from the origin is 1.
    """

    positions: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    provenance: str = ""
    fingerprint: str = ""

    def __post_init__(self):
        pos = np.asarray(self.positions, np.float64).reshape(-1, 3)
        rad = np.asarray(self.radii, np.float64).reshape(-1)
        w = np.asarray(self.weights, np.float64).reshape(-1)
        if not (pos.shape[0] == rad.shape[0] == w.shape[0]):
            raise FormatError("positions, radii and weights must agree in length")
        if pos.shape[0] == 0:
            raise EmptyInputError("sampled skeleton has no points")
        if (w < 0).any():
            raise FormatError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise FormatError(f"weights sum to {w.sum():.12f}, expected 1")
        for name, arr in (("positions", pos), ("radii", rad), ("weights", w)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_points(self) -> int:
        return int(self.positions.shape[0])


def _allocate(counts_target: int, lengths: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of samples to branches by length."""
    total = lengths.sum()
    if total <= 0:
        return np.zeros(len(lengths), np.int64)
    quota = counts_target * lengths / total
    base = np.floor(quota).astype(np.int64)
    short = counts_target - int(base.sum())
    if short > 0:
        frac = quota - base
        order = np.lexsort((np.arange(len(lengths)), -frac))
        base[order[:short]] += 1
    return base


def sample_and_normalize(
    g: SkeletonGraph,
    cfg: PipelineConfig,
    provenance: str = "",
) -> SampledSkeleton:
    """Resample the skeleton at uniform arc length and normalize it.

    Branches share the sample budget proportionally to their length;
    samples interpolate position and radius linearly along each branch.
    Raw weights are r**3.  Normalization translates the weighted centroid
    to the origin, divides positions (and radii, unless disabled) by the
    unweighted RMS distance from the origin, and rescales weights to sum 1,
    which makes downstream distances dimensionless.
    """
    if g.n_nodes == 0:
        raise EmptyInputError("cannot sample an empty skeleton graph")
    paths = branch_paths(g)
    arcs = [_path_arclengths(g, p) for p in paths]
    lengths = np.array([a[-1] for a in arcs])
    pts: list[np.ndarray] = []
    rads: list[np.ndarray] = []
    if lengths.sum() <= 0:
        for p in paths:  # degenerate: isolated voxels only
            pts.append(g.positions[p[:1]])
            rads.append(g.radii[p[:1]])
    else:
        counts = _allocate(cfg.sample_count, lengths)
        for path, arc, length, k in zip(paths, arcs, lengths, counts):
            if k == 0:
                continue
            s = (np.arange(k) + 0.5) / k * length
            pos = np.stack([np.interp(s, arc, g.positions[path][:, ax]) for ax in range(3)], axis=1)
            pts.append(pos)
            rads.append(np.interp(s, arc, g.radii[path]))
    pos = np.concatenate(pts, axis=0)
    rad = np.concatenate(rads)
    w = rad**3
    wsum = w.sum()
    if wsum <= 0:
        w = np.full(len(rad), 1.0 / len(rad))
        wsum = 1.0
    centroid = (w[:, None] * pos).sum(axis=0) / wsum
    pos = pos - centroid
    rms = float(np.sqrt((pos**2).sum(axis=1).mean()))
    if rms > 0:
        pos = pos / rms
        if cfg.normalize_radii:
            rad = rad / rms
            w = rad**3
    w = w / w.sum()
    return SampledSkeleton(pos, rad, w, provenance=provenance, fingerprint=cfg.fingerprint())


# --- shape features ----------------------------------------------------------


@dataclass(frozen=True)
class NarrowRun:
    """A maximal skeleton interval markedly thinner than its surroundings."""

    branch: int
    start_mm: float
    end_mm: float
    min_r: float
    neighbor_ratio: float  # min_r relative to the flanking median radius

    @property
    def length_mm(self) -> float:
        return self.end_mm - self.start_mm


@dataclass(frozen=True)
class SkeletonFeatures:
    """Cycle/narrowing facts read off the skeleton graph."""

    has_cycle: bool
    narrow_runs: tuple[NarrowRun, ...]
    max_narrow_run_length: float
    artery_trees_fused: bool = False
    pa_side_median_r: float | None = None
    median_r: float | None = None


def _branch_narrow_runs(
    branch_idx: int, r: np.ndarray, s: np.ndarray, window: int, ratio: float
) -> list[NarrowRun]:
    n = len(r)
    if n < 3:
        return []
    lmed = np.full(n, np.nan)
    rmed = np.full(n, np.nan)
    for i in range(1, n):
        lmed[i] = np.median(r[max(0, i - window) : i])
    for j in range(n - 1):
        rmed[j] = np.median(r[j + 1 : j + 1 + window])
    qualifying: list[tuple[int, int]] = []
    for i in range(1, n - 1):
        li = lmed[i]
        if not np.isfinite(li):
            continue
        runmax = -np.inf
        for j in range(i, n - 1):
            runmax = max(runmax, r[j])
            if runmax >= ratio * li:
                break  # no wider interval from this start can qualify
            if runmax < ratio * min(li, rmed[j]):
                qualifying.append((i, j))
    runs: list[NarrowRun] = []
    best_j = -1
    for i, j in sorted(qualifying, key=lambda t: (t[0], -t[1])):
        if j <= best_j:
            continue  # contained in an interval kept earlier
        best_j = j
        base = float(min(lmed[i], rmed[j]))
        rmin = float(r[i : j + 1].min())
        runs.append(
            NarrowRun(
                branch=branch_idx,
                start_mm=float(s[i]),
                end_mm=float(s[j]),
                min_r=rmin,
                neighbor_ratio=rmin / base if base > 0 else 0.0,
            )
        )
    return runs


def skeleton_features(g: SkeletonGraph, cfg: PipelineConfig) -> SkeletonFeatures:
    """Cycle presence, narrow runs, and artery-tree fusion facts."""
    runs: list[NarrowRun] = []
    for bidx, path in enumerate(branch_paths(g)):
        if len(path) < 3:
            continue
        runs.extend(
            _branch_narrow_runs(
                bidx,
                g.radii[path],
                _path_arclengths(g, path),
                cfg.flank_window,
                cfg.narrow_ratio,
            )
        )
    fused = False
    pa_median: float | None = None
    if g.labels is not None and g.n_nodes:
        comp = g.component_ids
        ao_comps = set(comp[g.labels == 6].tolist())
        pa_comps = set(comp[g.labels == 7].tolist())
        fused = bool(ao_comps & pa_comps)
        if pa_comps:
            sel = np.isin(comp, sorted(pa_comps))
            pa_median = float(np.median(g.radii[sel]))
    return SkeletonFeatures(
        has_cycle=g.cycle_rank >= 1,
        narrow_runs=tuple(runs),
        max_narrow_run_length=max((r.length_mm for r in runs), default=0.0),
        artery_trees_fused=fused,
        pa_side_median_r=pa_median,
        median_r=float(np.median(g.radii)) if g.n_nodes else None,
    )


# --- record serialization ----------------------------------------------------


def save_skeleton(s: SampledSkeleton, path: str | Path, category: str | None = None) -> Path:
    """Write a sampled skeleton as a text record, one "x y z r w" per point."""
    path = Path(path)
    lines = [
        "# chdkit sampled skeleton",
        f"# fingerprint = {s.fingerprint}",
        f"# case = {s.provenance}",
    ]
    if category is not None:
        lines.append(f"# category = {category}")
    lines.append("# columns = x y z r w")
    for p, r, w in zip(s.positions, s.radii, s.weights):
        lines.append(f"{p[0]!r} {p[1]!r} {p[2]!r} {r!r} {w!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_skeleton(path: str | Path) -> tuple[SampledSkeleton, str | None]:
    """Read a skeleton record; returns (skeleton, category-or-None)."""
    path = Path(path)
    meta: dict[str, str] = {}
    rows: list[list[float]] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if "=" in body:
                k, _, v = body.partition("=")
                meta[k.strip()] = v.strip()
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"{path}: expected 5 columns, got {len(parts)}")
        rows.append([float(t) for t in parts])
    if not rows:
        raise FormatError(f"{path}: skeleton record has no points")
    arr = np.array(rows)
    skel = SampledSkeleton(
        arr[:, :3],
        arr[:, 3],
        arr[:, 4],
        provenance=meta.get("case", ""),
        fingerprint=meta.get("fingerprint", ""),
    )
    return skel, meta.get("category")
