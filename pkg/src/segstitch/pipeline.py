"""End-to-end drivers shared by the CLI, the service, and the estimator.

All randomness derives from the run seed through named sub-streams, so
scene generation, posterior simulation, and community detection are
reproducible independently of batch size or thread schedule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .consensus import (
    CommunityLabels,
    consensus_segment,
    crop_stack,
    filter_small_communities,
    point_estimate,
    tile_plan,
    window_sampler_from_stacks,
)
from .rng import seed_stream
from .scene import SceneBundle, generate_scene, simulate_posterior_samples


def synth_scene(config: RunConfig, scene_index: int) -> SceneBundle:
    rng = seed_stream(config.seed, "scene", scene_index)
    return generate_scene(config.scene(), rng)


def simulate_samples(config: RunConfig, bundle: SceneBundle, scene_index: int
                     ) -> list[np.ndarray]:
    rng = seed_stream(config.seed, "sample", scene_index)
    return simulate_posterior_samples(bundle, config.noise(), config.n_post, rng)


def segment_consensus(config: RunConfig, stacks: list[np.ndarray],
                      auto: bool = False, scene_index: int = 0) -> CommunityLabels:
    """Overlapping-window consensus segmentation of full-image posteriors."""
    dims = stacks[0].shape[1:]
    plan, _ = tile_plan(dims, config.window_px, config.stride_px)
    sampler = window_sampler_from_stacks(stacks, plan)
    seed = int(seed_stream(config.seed, "community", scene_index).integers(2**31))
    kwargs = {}
    if auto:
        kwargs["gamma_grid"] = config.gamma_grid
        kwargs["sample_labels"] = [point_estimate(s) for s in stacks]
    labels = consensus_segment(
        dims, sampler, n_samples=len(stacks), cfg=config.resolution(), seed=seed,
        window_px=config.window_px, stride_px=config.stride_px,
        w_min=config.w_min, **kwargs,
    )
    return filter_small_communities(labels, config.min_community_px)


@dataclass(frozen=True)
class RegionResult:
    label_map: np.ndarray
    n_communities: int
    nmi: float | None
    gamma: float


def segment_region(config: RunConfig, stacks: list[np.ndarray],
                   region: tuple[int, int, int, int], gamma: float,
                   seed: int) -> RegionResult:
    """Consensus segmentation of an (x, y, w, h) sub-rectangle.

    The same windowing code path runs on the cropped posteriors, so the
    result is bit-identical between the service and the CLI for equal
    (region, gamma, seed).  The reported NMI is the mean foreground
    agreement with the per-sample point estimates of the region.
    """
    from dataclasses import replace

    from .consensus import foreground_nmi
    from .errors import ParameterError

    x, y, w, h = region
    full_h, full_w = stacks[0].shape[1:]
    if not (0 <= x < x + w <= full_w and 0 <= y < y + h <= full_h):
        raise ParameterError(f"region {region} outside image {full_w}x{full_h}")
    cropped = [s[:, y:y + h, x:x + w] for s in stacks]
    cfg = replace(config, gamma=gamma, seed=seed)
    labels = segment_consensus(cfg, cropped, scene_index=0)
    label_map = labels.to_label_map((h, w))
    scores = [
        v for v in (foreground_nmi(label_map, point_estimate(s)) for s in cropped)
        if v is not None
    ]
    nmi = float(np.mean(scores)) if scores else None
    return RegionResult(label_map=label_map, n_communities=labels.n_communities,
                        nmi=nmi, gamma=gamma)


def segment_disjoint_point(config: RunConfig, stacks: list[np.ndarray]) -> np.ndarray:
    """Baseline: disjoint windows, per-window argmax of the first sample.

    Window-local instance ids are offset into a global id space, so an
    instance straddling a window boundary keeps distinct labels on the two
    sides; this is exactly the stitching artifact consensus removes.
    """
    stack = stacks[0]
    dims = stack.shape[1:]
    plan, _ = tile_plan(dims, config.window_px, config.window_px)
    out = np.zeros(dims, dtype=np.int32)
    next_label = 1
    for origin in plan.windows:
        local = point_estimate(crop_stack(stack, origin, plan.window_px, plan.pad_px))
        r0, c0 = origin[0] - plan.pad_px, origin[1] - plan.pad_px
        rs = slice(max(0, r0), min(dims[0], r0 + plan.window_px))
        cs = slice(max(0, c0), min(dims[1], c0 + plan.window_px))
        patch = local[rs.start - r0:rs.stop - r0, cs.start - c0:cs.stop - c0]
        ids = np.unique(patch)
        remap = np.zeros(int(ids.max()) + 1 if ids.size else 1, dtype=np.int32)
        for k in ids:
            if k > 0:
                remap[k] = next_label
                next_label += 1
        out[rs, cs] = remap[patch]
    return out
