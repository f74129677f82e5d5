"""Sliding-window consensus instance segmentation.

Overlapping windows each contribute posterior co-membership evidence for
nearby pixel pairs; a global index matrix keeps pixel identities consistent
across windows, so the per-window sparse edge lists can be merged by plain
summation (map-reduce).  Community detection on the merged same-objectness
graph yields the consensus labeling; a resolution parameter controls the
granularity and can be selected automatically by agreement with individual
posterior samples.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from sklearn.metrics import normalized_mutual_info_score

from .community import leiden
from .errors import DimensionError, ParameterError
from .scene import validate_mixing_stack


@dataclass(frozen=True)
class WindowPlan:
    window_px: int
    stride_px: int
    pad_px: int
    windows: tuple[tuple[int, int], ...]  # (row, col) origins on the padded canvas
    image_dims: tuple[int, int]

    @property
    def padded_dims(self) -> tuple[int, int]:
        h, w = self.image_dims
        return (h + 2 * self.pad_px, w + 2 * self.pad_px)

    def max_multiplicity(self) -> int:
        """Largest number of windows covering any unpadded pixel."""
        maxima = []
        for dim, size in ((0, self.image_dims[0]), (1, self.image_dims[1])):
            counts = np.zeros(size, dtype=np.int64)
            for o in sorted({origin[dim] for origin in self.windows}):
                lo = max(0, o - self.pad_px)
                hi = min(size, o + self.window_px - self.pad_px)
                if lo < hi:
                    counts[lo:hi] += 1
            maxima.append(int(counts.max()))
        return maxima[0] * maxima[1]

    def pair_multiplicity(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Number of windows jointly covering each pixel-id pair.

        The joint count factorizes over dimensions: per dimension it is the
        number of window origins whose span contains both coordinates.
        """
        w = self.image_dims[1]
        coords = []
        for ids in (np.asarray(i), np.asarray(j)):
            coords.append((ids // w + self.pad_px, ids % w + self.pad_px))
        (r1, c1), (r2, c2) = coords
        out = np.ones(r1.shape, dtype=np.int64)
        for dim, (a, b) in enumerate(((r1, r2), (c1, c2))):
            origins = np.array(sorted({o[dim] for o in self.windows}), dtype=np.int64)
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            # origins o with o <= lo and o + window > hi
            upper = np.searchsorted(origins, lo, side="right")
            lower = np.searchsorted(origins, hi - self.window_px + 1, side="left")
            out *= np.maximum(0, upper - lower)
        return out


@dataclass(frozen=True)
class IndexMatrix:
    """Padded global pixel-index matrix: interior row-major, padding -1."""

    values: np.ndarray
    pad_px: int

    @property
    def interior_dims(self) -> tuple[int, int]:
        h, w = self.values.shape
        return (h - 2 * self.pad_px, w - 2 * self.pad_px)


@dataclass(frozen=True)
class EdgeList:
    """Canonical sparse coordinate triplets: i < j, positive weights."""

    i: np.ndarray
    j: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        if not (self.i.shape == self.j.shape == self.w.shape):
            raise DimensionError("edge arrays must have identical length")

    def __len__(self) -> int:
        return self.i.size

    @classmethod
    def empty(cls) -> "EdgeList":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64))

    def node_ids(self) -> np.ndarray:
        return np.unique(np.concatenate([self.i, self.j]))


@dataclass(frozen=True)
class CommunityLabels:
    """Community assignment over graph pixels; absent pixels are background."""

    pixels: np.ndarray  # sorted unique pixel ids
    labels: np.ndarray  # community id per pixel, contiguous from 1

    def __post_init__(self):
        if self.pixels.shape != self.labels.shape:
            raise DimensionError("pixels and labels must align")

    @property
    def n_communities(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def to_label_map(self, dims: tuple[int, int]) -> np.ndarray:
        out = np.zeros(dims[0] * dims[1], dtype=np.int32)
        out[self.pixels] = self.labels
        return out.reshape(dims)


@dataclass(frozen=True)
class ResolutionConfig:
    objective: str = "cpm"  # cpm | rb
    gamma: float = 0.05
    d_c: int = 5  # edge cutoff radius, px
    e_min: float = 0.01

    def __post_init__(self):
        if self.objective not in ("cpm", "rb"):
            raise ParameterError(f"unknown objective {self.objective!r}")
        if self.gamma <= 0:
            raise ParameterError("gamma must be positive")
        if self.d_c < 1:
            raise ParameterError("d_c must be >= 1")
        if not (0 <= self.e_min < 1):
            raise ParameterError("e_min must lie in [0, 1)")


def tile_plan(image_dims: tuple[int, int], window_px: int, stride_px: int
              ) -> tuple[WindowPlan, IndexMatrix]:
    """Build the sliding-window plan and the padded global index matrix.

    Padding is window - stride on each side so that (for stride dividing
    window) every unpadded pixel is covered by (window / stride)^2 windows;
    the index path pads with -1, the image path uses reflection padding.
    """
    h, w = image_dims
    if h <= 0 or w <= 0:
        raise ParameterError("image dims must be positive")
    if stride_px <= 0 or stride_px > window_px:
        raise ParameterError("stride must lie in [1, window]")
    pad = window_px - stride_px
    ph, pw = h + 2 * pad, w + 2 * pad
    if window_px > ph or window_px > pw:
        raise ParameterError("window larger than the padded canvas")

    def origins(padded: int) -> list[int]:
        out = list(range(0, padded - window_px + 1, stride_px))
        if out[-1] != padded - window_px:
            out.append(padded - window_px)  # ragged tail: keep full coverage
        return out

    windows = tuple(
        (r, c) for r in origins(ph) for c in origins(pw)
    )
    idx = np.full((ph, pw), -1, dtype=np.int64)
    idx[pad:pad + h, pad:pad + w] = np.arange(h * w).reshape(h, w)
    plan = WindowPlan(window_px=window_px, stride_px=stride_px, pad_px=pad,
                      windows=windows, image_dims=(h, w))
    return plan, IndexMatrix(values=idx, pad_px=pad)


def pad_reflect(image: np.ndarray, pad_px: int) -> np.ndarray:
    """Reflection padding for the image path of the tiling."""
    widths = [(pad_px, pad_px), (pad_px, pad_px)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, widths, mode="reflect")


def half_displacements(d_c: int) -> list[tuple[int, int]]:
    """One representative per antipodal displacement pair with |d| < d_c."""
    out = []
    for dy in range(0, d_c):
        for dx in range(-d_c + 1, d_c):
            if dy == 0 and dx <= 0:
                continue
            if dy * dy + dx * dx < d_c * d_c:
                out.append((dy, dx))
    return out


@njit(cache=True, nogil=True)
def _edges_kernel(fg, anyfg, idx, disps, e_min):
    """Co-membership triplets for all in-radius displacements.

    ``fg`` is (H, W, K) foreground probabilities.  Shifted-plane products
    are evaluated with explicit bounds checks, which is equivalent to the
    pad-by-d_c + circular-shift construction because wrapped entries land
    in the zero / -1 margin and are filtered either way.
    """
    h, w, k = fg.shape
    nnz = 0
    for r in range(h):
        for c in range(w):
            if anyfg[r, c]:
                nnz += 1
    cap = nnz * disps.shape[0]
    out_i = np.empty(cap, np.int64)
    out_j = np.empty(cap, np.int64)
    out_w = np.empty(cap, np.float64)
    n = 0
    for d in range(disps.shape[0]):
        dy = disps[d, 0]
        dx = disps[d, 1]
        r_lo = dy if dy > 0 else 0
        r_hi = h + dy if dy < 0 else h
        for r in range(r_lo, r_hi):
            r2 = r - dy
            c_lo = dx if dx > 0 else 0
            c_hi = w + dx if dx < 0 else w
            for c in range(c_lo, c_hi):
                if not anyfg[r, c]:
                    continue
                c2 = c - dx
                if not anyfg[r2, c2]:
                    continue
                i1 = idx[r, c]
                if i1 < 0:
                    continue
                i2 = idx[r2, c2]
                if i2 < 0:
                    continue
                e = 0.0
                for kk in range(k):
                    e += fg[r, c, kk] * fg[r2, c2, kk]
                if e > 0.0 and e >= e_min:
                    if i1 < i2:
                        out_i[n] = i1
                        out_j[n] = i2
                    else:
                        out_i[n] = i2
                        out_j[n] = i1
                    out_w[n] = e
                    n += 1
    return out_i[:n], out_j[:n], out_w[:n]


def window_edges(pi: np.ndarray, idx: np.ndarray, cfg: ResolutionConfig) -> EdgeList:
    """Same-objectness triplets for one window and one posterior sample.

    For one representative of each antipodal displacement pair within the
    cutoff radius, the foreground planes are shifted and multiplied against
    themselves; surviving entries (weight >= e_min, both pixel ids valid)
    are read off the index window and its shifted copy.  The background
    plane never participates.
    """
    stack = np.asarray(pi, dtype=np.float64)
    index = np.asarray(idx, dtype=np.int64)
    if stack.ndim != 3 or stack.shape[1:] != index.shape:
        raise DimensionError("stack (K+1, H, W) must match the index window")
    if stack.shape[0] <= 1:
        return EdgeList.empty()
    anyfg = stack[1:].max(axis=0) > 0
    if not anyfg.any():
        return EdgeList.empty()
    # Work on the foreground bounding box only; everything outside it can
    # contribute no edge.
    rows = np.flatnonzero(anyfg.any(axis=1))
    cols = np.flatnonzero(anyfg.any(axis=0))
    rs = slice(rows[0], rows[-1] + 1)
    cs = slice(cols[0], cols[-1] + 1)
    fg = np.ascontiguousarray(np.moveaxis(stack[1:, rs, cs], 0, -1))
    disps = np.asarray(half_displacements(cfg.d_c), dtype=np.int64).reshape(-1, 2)
    i, j, w = _edges_kernel(
        fg, anyfg[rs, cs], np.ascontiguousarray(index[rs, cs]), disps, cfg.e_min
    )
    # canonical i < j comes from the kernel; sorted order is established at
    # merge time where it is needed
    return EdgeList(i=i, j=j, w=w)


def merge_edges(parts, n_post: int) -> EdgeList:
    """Sum duplicate triplets across parts and divide by ``n_post``.

    The reduction is associative and commutative, so the result does not
    depend on part order or grouping.
    """
    if n_post < 1:
        raise ParameterError("n_post must be >= 1")
    parts = [p for p in parts if len(p)]
    if not parts:
        return EdgeList.empty()
    i = np.concatenate([p.i for p in parts])
    j = np.concatenate([p.j for p in parts])
    w = np.concatenate([p.w for p in parts])
    span = int(max(i.max(), j.max())) + 1
    key = i * span + j
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    boundaries = np.flatnonzero(np.diff(sorted_key)) + 1
    starts = np.concatenate([[0], boundaries])
    sums = np.add.reduceat(w[order], starts) / n_post
    uniq = sorted_key[starts]
    return EdgeList(i=(uniq // span).astype(np.int64),
                    j=(uniq % span).astype(np.int64),
                    w=sums)


def point_estimate(pi: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the mixing stack; ties go to the lowest index."""
    stack = validate_mixing_stack(pi)
    return stack.argmax(axis=0).astype(np.int32)


def detect_communities(graph: EdgeList, cfg: ResolutionConfig, seed: int) -> CommunityLabels:
    """Partition the same-objectness graph at the configured resolution."""
    if len(graph) == 0:
        raise ParameterError("cannot detect communities on an empty graph")
    nodes = graph.node_ids()
    compact = np.searchsorted(nodes, np.stack([graph.i, graph.j], axis=1))
    membership = leiden(compact, graph.w, nodes.size, gamma=cfg.gamma,
                        objective=cfg.objective, seed=seed)
    return CommunityLabels(pixels=nodes, labels=(membership + 1).astype(np.int32))


def foreground_nmi(consensus_map: np.ndarray, sample_map: np.ndarray) -> float | None:
    """NMI (2I / (Ha + Hb)) restricted to pixels foreground in both maps.

    Returns None when the common foreground is empty.
    """
    both = (consensus_map > 0) & (sample_map > 0)
    if not both.any():
        return None
    return float(normalized_mutual_info_score(
        consensus_map[both], sample_map[both], average_method="arithmetic"
    ))


def auto_resolution(graph: EdgeList, samples: list[np.ndarray], gamma_grid,
                    cfg: ResolutionConfig, seed: int
                    ) -> tuple[float, CommunityLabels]:
    """Pick the resolution that best agrees with the posterior samples.

    Scores each candidate gamma by the mean foreground-restricted NMI
    between the consensus labeling and the per-sample point estimates; ties
    resolve toward the smaller gamma.
    """
    grid = sorted(float(g) for g in gamma_grid)
    if len(grid) < 2:
        raise ParameterError("auto resolution needs at least 2 gamma candidates")
    if not samples:
        raise ParameterError("auto resolution needs at least 1 sample labeling")
    if not any((s > 0).any() for s in samples):
        raise ParameterError("all pixels are background in every sample")
    dims = samples[0].shape
    best_gamma = None
    best_labels = None
    best_score = -np.inf
    for gamma in grid:
        labels = detect_communities(graph, replace(cfg, gamma=gamma), seed)
        label_map = labels.to_label_map(dims)
        scores = [s for s in (foreground_nmi(label_map, smp) for smp in samples)
                  if s is not None]
        score = float(np.mean(scores)) if scores else -np.inf
        if score > best_score + 1e-12:
            best_score = score
            best_gamma = gamma
            best_labels = labels
    return best_gamma, best_labels


def filter_small_communities(labels: CommunityLabels, min_px: int) -> CommunityLabels:
    """Demote communities below ``min_px`` pixels to background.

    Posterior-noise debris (stray split fragments, jitter halos detached
    from any instance) otherwise shows up as spurious tiny communities.
    Labels are re-compacted to stay contiguous from 1.
    """
    if min_px <= 1 or labels.labels.size == 0:
        return labels
    counts = np.bincount(labels.labels)
    keep = counts[labels.labels] >= min_px
    kept_labels = labels.labels[keep]
    old = np.unique(kept_labels)
    remap = np.zeros(int(old.max()) + 1 if old.size else 1, dtype=np.int32)
    remap[old] = np.arange(1, old.size + 1)
    return CommunityLabels(pixels=labels.pixels[keep], labels=remap[kept_labels])


def crop_stack(stack: np.ndarray, origin: tuple[int, int], window_px: int,
               pad_px: int) -> np.ndarray:
    """Crop a window (padded-canvas origin) out of an unpadded mixing stack.

    Regions that fall into the padding margin read as pure background,
    which is equivalent for edge building because the index matrix is -1
    there anyway.
    """
    k1, h, w = stack.shape
    out = np.zeros((k1, window_px, window_px), dtype=stack.dtype)
    out[0] = 1.0
    r0 = origin[0] - pad_px
    c0 = origin[1] - pad_px
    src_r = slice(max(0, r0), min(h, r0 + window_px))
    src_c = slice(max(0, c0), min(w, c0 + window_px))
    if src_r.start >= src_r.stop or src_c.start >= src_c.stop:
        return out
    dst_r = slice(src_r.start - r0, src_r.stop - r0)
    dst_c = slice(src_c.start - c0, src_c.stop - c0)
    out[:, dst_r, dst_c] = stack[:, src_r, src_c]
    return out


def window_sampler_from_stacks(stacks: list[np.ndarray], plan: WindowPlan):
    """Adapter: full-image posterior stacks -> per-(window, sample) crops.

    Instance planes that do not intersect the window are dropped (decided
    from precomputed support boxes) so edge building scales with local,
    not global, instance count.
    """
    boxes: list[list[tuple[int, int, int, int] | None]] = []
    for stack in stacks:
        per_plane = []
        for k in range(1, stack.shape[0]):
            rows, cols = np.nonzero(stack[k])
            if rows.size == 0:
                per_plane.append(None)
            else:
                per_plane.append((rows.min(), rows.max() + 1, cols.min(), cols.max() + 1))
        boxes.append(per_plane)

    def sampler(window: tuple[int, int], sample: int) -> np.ndarray:
        stack = stacks[sample]
        r0 = window[0] - plan.pad_px
        c0 = window[1] - plan.pad_px
        r1, c1 = r0 + plan.window_px, c0 + plan.window_px
        keep = [0]
        for k, bb in enumerate(boxes[sample], start=1):
            if bb is not None and bb[0] < r1 and bb[1] > r0 and bb[2] < c1 and bb[3] > c0:
                keep.append(k)
        return crop_stack(stack[keep], window, plan.window_px, plan.pad_px)

    return sampler


def _worker_count() -> int:
    env = os.environ.get("SEGSTITCH_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_graph(plan: WindowPlan, index: IndexMatrix, per_window_samples,
                n_samples: int, cfg: ResolutionConfig, w_min: float = 0.0) -> EdgeList:
    """Map-reduce the per-(window, sample) edge lists into the global graph.

    After the merge (sum over parts divided by the posterior sample count)
    each weight is further divided by the number of windows jointly
    covering its pixel pair, making it the mean per-round co-membership in
    (0, 1].  Edges below ``w_min`` are pruned: a pair must co-belong in
    that fraction of rounds to count as same-object evidence.
    """
    if n_samples < 1:
        raise ParameterError("need at least one posterior sample")

    def run(win):
        r, c = win
        idx_crop = index.values[r:r + plan.window_px, c:c + plan.window_px]
        parts = [
            window_edges(per_window_samples(win, s), idx_crop, cfg)
            for s in range(n_samples)
        ]
        # pre-reduce per window (division deferred to the final merge)
        return merge_edges(parts, n_post=1)

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, plan.windows))
    else:
        parts = [run(win) for win in plan.windows]
    merged = merge_edges(parts, n_post=n_samples)
    if len(merged) == 0:
        return merged
    w = merged.w / plan.pair_multiplicity(merged.i, merged.j)
    keep = w >= w_min if w_min > 0 else slice(None)
    return EdgeList(i=merged.i[keep], j=merged.j[keep], w=w[keep])


def consensus_segment(image_dims: tuple[int, int], per_window_samples,
                      n_samples: int, cfg: ResolutionConfig, seed: int,
                      window_px: int = 80, stride_px: int = 20,
                      gamma_grid=None, sample_labels=None,
                      w_min: float = 0.0) -> CommunityLabels:
    """End-to-end consensus segmentation over sliding windows.

    With ``gamma_grid`` given, the resolution is selected automatically by
    agreement with ``sample_labels`` (per-sample point-estimate maps);
    otherwise the configured gamma is used directly.
    """
    plan, index = tile_plan(image_dims, window_px, stride_px)
    graph = build_graph(plan, index, per_window_samples, n_samples, cfg, w_min=w_min)
    if len(graph) == 0:
        # no foreground evidence anywhere: everything is background
        return CommunityLabels(pixels=np.zeros(0, np.int64), labels=np.zeros(0, np.int32))
    if gamma_grid is not None:
        if sample_labels is None:
            raise ParameterError("auto resolution needs per-sample point estimates")
        _, labels = auto_resolution(graph, sample_labels, gamma_grid, cfg, seed)
        return labels
    return detect_communities(graph, cfg, seed)
