"""Forward generative model for modular scenes, with parametric appearance.

A scene is composed from a repulsive sample of coarse object locations,
per-object boxes, blob-shaped instance rasters pasted into those boxes,
per-pixel mixing probabilities, a categorical mask draw, and Gaussian pixel
noise on top of the selected layer.  A posterior-sample simulator perturbs
the ground-truth mixing stack to stand in for a trained inference network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage

from .boxes import BoundingBox, SafParams, saf_transform
from .dpp import KernelParams, build_rbf_kernel, dpp_sample
from .errors import DimensionError, ParameterError
from .grids import GridSpec

WEIGHT_CEILING = 1.0 - 1e-3  # mixing weights live in [0, 1)


@dataclass(frozen=True)
class Raster:
    """Instance appearance and soft mask on the small foreground raster."""

    appearance: np.ndarray  # (H_fg, W_fg, C)
    weights: np.ndarray  # (H_fg, W_fg), strictly < 1

    def __post_init__(self):
        if self.appearance.ndim != 3 or self.weights.ndim != 2:
            raise DimensionError("raster expects (H, W, C) appearance and (H, W) weights")
        if self.appearance.shape[:2] != self.weights.shape:
            raise DimensionError("raster appearance and weights disagree in shape")
        if (self.weights < 0).any() or (self.weights >= 1).any():
            raise ParameterError("raster weights must lie in [0, 1)")


@dataclass(frozen=True)
class Layer:
    """Instance appearance and weights embedded at canvas scale."""

    appearance: np.ndarray  # (H, W, C)
    weights: np.ndarray  # (H, W)


@dataclass(frozen=True)
class FourierBlobParams:
    """Star-convex blob: radius as a finite Fourier series of the polar angle.

    ``origin`` is (x, y) in raster pixels; ``harmonics`` is a list of
    (amplitude, phase) pairs for cosine terms of increasing order.
    """

    origin: tuple[float, float]
    mean_radius: float
    harmonics: tuple[tuple[float, float], ...] = ()
    intensity: float = 1.0

    def __post_init__(self):
        if self.mean_radius <= 0:
            raise ParameterError("mean_radius must be positive")

    def radius(self, theta):
        r = np.full_like(np.asarray(theta, dtype=np.float64), self.mean_radius)
        for order, (amp, phase) in enumerate(self.harmonics, start=1):
            r = r + amp * np.cos(order * theta + phase)
        return r


@dataclass(frozen=True)
class BlobPriors:
    """Sampling ranges for blob parameters, in units of the raster size."""

    radius_frac: tuple[float, float] = (0.28, 0.40)
    max_harmonics: int = 3
    amp_frac: float = 0.25  # of mean radius, capped below the positivity limit
    origin_jitter_frac: float = 0.05
    intensity: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.max_harmonics > 5:
            raise ParameterError("at most 5 harmonics are supported")
        if self.amp_frac > 0.4:
            raise ParameterError("harmonic amplitude above 0.4 * radius risks negative radii")


@dataclass(frozen=True)
class BackgroundParams:
    kind: str = "flat"  # flat | oriented_grid
    level: float = 0.0
    contrast: float = 0.3
    spacing: tuple[int, int] = (8, 16)  # sampled per scene
    line_px: float = 1.0
    angles: tuple[float, ...] = (0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8)

    def __post_init__(self):
        if self.kind not in ("flat", "oriented_grid"):
            raise ParameterError(f"unknown background kind {self.kind!r}")


@dataclass(frozen=True)
class SceneConfig:
    grid: GridSpec
    kernel: KernelParams
    saf: SafParams = field(default_factory=SafParams.identity)
    blob: BlobPriors = field(default_factory=BlobPriors)
    background: BackgroundParams = field(default_factory=BackgroundParams)
    raster_px: int = 28
    channels: int = 1
    sigma: float = 0.05

    def __post_init__(self):
        if self.sigma <= 0:
            raise ParameterError("sigma must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    """Perturbation levels for the posterior-sample simulator."""

    mask_jitter: float = 0.0  # boundary dilation/erosion, fraction of min_obj_px
    box_jitter_px: float = 0.0
    drop_prob: float = 0.0
    split_prob: float = 0.0

    def __post_init__(self):
        if not (0 <= self.mask_jitter <= 1):
            raise ParameterError("mask_jitter must lie in [0, 1]")
        if self.box_jitter_px < 0:
            raise ParameterError("box_jitter_px must be >= 0")
        for name in ("drop_prob", "split_prob"):
            p = getattr(self, name)
            if not (0 <= p <= 1):
                raise ParameterError(f"{name} must lie in [0, 1]")


@dataclass
class SceneBundle:
    image: np.ndarray  # (H, W, C)
    truth_labels: np.ndarray  # (H, W) ints, 0 = background
    truth_boxes: list[BoundingBox]
    truth_pi: np.ndarray  # (K+1, H, W)
    background: np.ndarray  # (H, W, C)
    sigma: float
    presence: np.ndarray  # coarse presence field the boxes came from
    grid: GridSpec

    @property
    def true_count(self) -> int:
        return len(self.truth_boxes)


def validate_mixing_stack(pi, atol: float = 1e-6) -> np.ndarray:
    """Check the per-pixel simplex invariants of a mixing stack."""
    arr = np.asarray(pi, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionError("mixing stack must be (K+1, H, W)")
    if (arr < -atol).any():
        raise ParameterError("mixing stack has negative entries")
    col = arr.sum(axis=0)
    if np.abs(col - 1.0).max() > atol:
        raise ParameterError("mixing stack columns must sum to 1")
    return arr


def render_blob(params: FourierBlobParams, raster_dims: tuple[int, int],
                channels: int = 1) -> Raster:
    """Rasterize a blob: constant intensity inside the polar boundary.

    The weight is 1 inside (clamped to just below 1) and 0 outside.
    """
    theta_check = np.linspace(0, 2 * math.pi, 720, endpoint=False)
    if (params.radius(theta_check) <= 0).any():
        raise ParameterError("blob radius must stay positive for all angles")
    h, w = raster_dims
    ox, oy = params.origin
    ys, xs = np.indices((h, w), dtype=np.float64)
    dx = xs + 0.5 - ox
    dy = ys + 0.5 - oy
    dist = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    inside = dist <= params.radius(theta)
    weights = np.where(inside, WEIGHT_CEILING, 0.0)
    appearance = np.where(inside, params.intensity, 0.0)[..., None]
    appearance = np.repeat(appearance, channels, axis=2)
    return Raster(appearance=appearance, weights=weights)


def render_background(kind: str, params: BackgroundParams, dims: tuple[int, int],
                      channels: int = 1, spacing: int | None = None,
                      angle: float | None = None) -> np.ndarray:
    """Constant or oriented-grid background image of shape (H, W, C)."""
    h, w = dims
    if kind == "flat":
        return np.full((h, w, channels), params.level, dtype=np.float64)
    if kind != "oriented_grid":
        raise ParameterError(f"unknown background kind {kind!r}")
    spacing = params.spacing[0] if spacing is None else spacing
    if spacing < 2:
        raise ParameterError("grid spacing must be >= 2 px")
    angle = params.angles[0] if angle is None else angle
    if not any(abs(angle - a) < 1e-9 for a in params.angles):
        raise ParameterError(f"angle {angle} is not one of the configured orientations")
    ys, xs = np.indices((h, w), dtype=np.float64)
    u = xs * math.cos(angle) + ys * math.sin(angle)
    v = -xs * math.sin(angle) + ys * math.cos(angle)
    on_line = (np.mod(u, spacing) < params.line_px) | (np.mod(v, spacing) < params.line_px)
    img = params.level + params.contrast * on_line.astype(np.float64)
    return np.repeat(img[..., None], channels, axis=2)


def _bilinear_gather(src: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample ``src`` at fractional (row, col) positions with zero padding."""
    h, w = src.shape[:2]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out_shape = rows.shape + src.shape[2:]
    acc = np.zeros(out_shape, dtype=np.float64)
    for dr, dc, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = src[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
        if src.ndim == 3:
            acc += np.where(valid[..., None], vals, 0.0) * wgt[..., None]
        else:
            acc += np.where(valid, vals, 0.0) * wgt
    return acc


def paste(raster: np.ndarray, box: BoundingBox, canvas_dims: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample a raster into the box region of a larger canvas.

    Output is identically zero outside the box; portions of the box that
    fall off-canvas are clipped away.
    """
    if box.w <= 0 or box.h <= 0:
        raise ParameterError("box must have positive size")
    src = np.asarray(raster, dtype=np.float64)
    ch, cw = canvas_dims
    out = np.zeros((ch, cw) + src.shape[2:], dtype=np.float64)
    x1, y1, x2, y2 = box.corners()
    c_lo = max(0, int(math.floor(x1 + 0.5)))
    c_hi = min(cw, int(math.ceil(x2 - 0.5)) + 1)
    r_lo = max(0, int(math.floor(y1 + 0.5)))
    r_hi = min(ch, int(math.ceil(y2 - 0.5)) + 1)
    if c_lo >= c_hi or r_lo >= r_hi:
        return out
    cols, rows = np.meshgrid(np.arange(c_lo, c_hi), np.arange(r_lo, r_hi))
    # Pixel centers mapped into fractional raster coordinates.
    u = (cols + 0.5 - x1) / box.w * src.shape[1] - 0.5
    v = (rows + 0.5 - y1) / box.h * src.shape[0] - 0.5
    inside = (
        (cols + 0.5 >= x1) & (cols + 0.5 < x2) & (rows + 0.5 >= y1) & (rows + 0.5 < y2)
    )
    vals = _bilinear_gather(src, v, u)
    if src.ndim == 3:
        vals = np.where(inside[..., None], vals, 0.0)
    else:
        vals = np.where(inside, vals, 0.0)
    out[r_lo:r_hi, c_lo:c_hi] = vals
    return out


def crop(image: np.ndarray, box: BoundingBox, out_dims: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`paste`: bilinearly resample the box region of an
    image onto a raster of ``out_dims``; out-of-canvas reads are zero."""
    if box.w <= 0 or box.h <= 0:
        raise ParameterError("box must have positive size")
    src = np.asarray(image, dtype=np.float64)
    oh, ow = out_dims
    x1, y1, _, _ = box.corners()
    cols, rows = np.meshgrid(np.arange(ow), np.arange(oh))
    u = x1 + (cols + 0.5) / ow * box.w - 0.5
    v = y1 + (rows + 0.5) / oh * box.h - 0.5
    return _bilinear_gather(src, v, u)


def paste_layer(raster: Raster, box: BoundingBox, canvas_dims: tuple[int, int]) -> Layer:
    """Embed a full instance raster (appearance + weights) at canvas scale."""
    return Layer(
        appearance=paste(raster.appearance, box, canvas_dims),
        weights=np.clip(paste(raster.weights, box, canvas_dims), 0.0, WEIGHT_CEILING),
    )


def mix(weights) -> np.ndarray:
    """Turn K instance weight maps into a (K+1, H, W) mixing stack.

    pi_k = w_k / max(1, sum_j w_j), pixel-wise; pi_0 complements the total
    foreground probability.  With a single covering box the instance passes
    through unchanged.
    """
    stack = np.asarray(weights, dtype=np.float64)
    if stack.ndim != 3:
        raise DimensionError("mix expects K instance maps of identical shape (K, H, W)")
    if stack.shape[0] == 0:
        return mix_empty(stack.shape[1:])
    if (stack < 0).any() or (stack >= 1).any():
        raise ParameterError("instance weights must lie in [0, 1)")
    denom = np.maximum(1.0, stack.sum(axis=0))
    fg = stack / denom
    bg = 1.0 - fg.sum(axis=0)
    return np.concatenate([bg[None], fg], axis=0)


def mix_empty(canvas_dims: tuple[int, int]) -> np.ndarray:
    """Mixing stack of an empty scene: background probability one."""
    return np.ones((1,) + tuple(canvas_dims), dtype=np.float64)


def sample_mask(pi, rng: np.random.Generator) -> np.ndarray:
    """Independent per-pixel categorical draw from the mixing columns."""
    stack = validate_mixing_stack(pi)
    cum = np.cumsum(stack, axis=0)
    u = rng.random(stack.shape[1:])
    return (u[None, ...] < cum).argmax(axis=0).astype(np.int32)


def compose(m, layers, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Per-pixel Gaussian around the appearance of the selected layer."""
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    labels = np.asarray(m)
    stack = np.stack([np.asarray(l, dtype=np.float64) for l in layers])
    if labels.max(initial=0) >= stack.shape[0]:
        raise DimensionError("label map refers to a missing layer")
    mean = np.take_along_axis(stack, labels[None, :, :, None], axis=0)[0]
    return rng.normal(mean, sigma)


def _sample_blob(priors: BlobPriors, raster_px: int, rng: np.random.Generator) -> FourierBlobParams:
    lo, hi = priors.radius_frac
    radius = rng.uniform(lo, hi) * raster_px
    jitter = priors.origin_jitter_frac * raster_px
    origin = (
        raster_px / 2 + rng.uniform(-jitter, jitter),
        raster_px / 2 + rng.uniform(-jitter, jitter),
    )
    n_harm = int(rng.integers(0, priors.max_harmonics + 1))
    harmonics = []
    budget = priors.amp_frac * radius
    for _ in range(n_harm):
        harmonics.append((rng.uniform(0, budget / max(1, n_harm)), rng.uniform(0, 2 * math.pi)))
    intensity = rng.uniform(*priors.intensity)
    return FourierBlobParams(
        origin=origin, mean_radius=radius, harmonics=tuple(harmonics), intensity=intensity
    )


def generate_scene(config: SceneConfig, rng: np.random.Generator) -> SceneBundle:
    """Run the full forward model and record all ground truth."""
    grid = config.grid
    kernel = build_rbf_kernel(grid, config.kernel)
    presence = dpp_sample(kernel, rng)
    canvas = grid.native_shape

    boxes: list[BoundingBox] = []
    layers: list[Layer] = []
    for iy, ix in np.argwhere(presence):
        v = rng.normal(size=4)
        box = saf_transform(v, config.saf, (int(ix), int(iy)), grid)
        blob = _sample_blob(config.blob, config.raster_px, rng)
        raster = render_blob(blob, (config.raster_px, config.raster_px), config.channels)
        boxes.append(box)
        layers.append(paste_layer(raster, box, canvas))

    bg_kind = config.background.kind
    if bg_kind == "oriented_grid":
        spacing = int(rng.integers(config.background.spacing[0], config.background.spacing[1] + 1))
        angle = config.background.angles[int(rng.integers(len(config.background.angles)))]
        background = render_background(bg_kind, config.background, canvas, config.channels,
                                       spacing=spacing, angle=angle)
    else:
        background = render_background(bg_kind, config.background, canvas, config.channels)

    if layers:
        pi = mix([layer.weights for layer in layers])
    else:
        pi = mix_empty(canvas)
    labels = sample_mask(pi, rng)
    appearance = [background] + [layer.appearance for layer in layers]
    image = compose(labels, appearance, config.sigma, rng)
    return SceneBundle(
        image=image,
        truth_labels=labels,
        truth_boxes=boxes,
        truth_pi=pi,
        background=background,
        sigma=config.sigma,
        presence=presence,
        grid=grid,
    )


def _disk_footprint(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return (yy**2 + xx**2) <= radius**2


def _jitter_support(plane: np.ndarray, amount_px: float, rng: np.random.Generator) -> np.ndarray:
    """Grey dilation (grow) or erosion (shrink) of one instance map."""
    radius = int(round(abs(amount_px)))
    if radius == 0:
        return plane
    rows, cols = np.nonzero(plane)
    if rows.size == 0:
        return plane
    pad = radius + 1
    r0, r1 = max(0, rows.min() - pad), min(plane.shape[0], rows.max() + pad + 1)
    c0, c1 = max(0, cols.min() - pad), min(plane.shape[1], cols.max() + pad + 1)
    patch = plane[r0:r1, c0:c1]
    foot = _disk_footprint(radius)
    if amount_px > 0:
        patch = scipy.ndimage.grey_dilation(patch, footprint=foot)
    else:
        padded = np.pad(patch, radius)  # erode against a zero surround
        patch = scipy.ndimage.grey_erosion(padded, footprint=foot)[
            radius:-radius, radius:-radius
        ]
    out = plane.copy()
    out[r0:r1, c0:c1] = patch
    return out


def _shift_support(plane: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(plane)
    h, w = plane.shape
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    out[dst_r, dst_c] = plane[src_r, src_c]
    return out


def _split_support(plane: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    rows, cols = np.nonzero(plane)
    if rows.size < 2:
        return [plane]
    cy, cx = rows.mean(), cols.mean()
    theta = rng.uniform(0, math.pi)
    side = (cols - cx) * math.cos(theta) + (rows - cy) * math.sin(theta) > 0
    if side.all() or (~side).all():
        return [plane]
    a = np.zeros_like(plane)
    b = np.zeros_like(plane)
    a[rows[side], cols[side]] = plane[rows[side], cols[side]]
    b[rows[~side], cols[~side]] = plane[rows[~side], cols[~side]]
    return [a, b]


def simulate_posterior_samples(
    bundle: SceneBundle, noise: NoiseConfig, n_post: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Perturbed copies of the truth mixing stack, one per posterior draw.

    Per instance and per draw: optional drop, boundary dilation/erosion up
    to ``mask_jitter * min_obj_px``, integer translation up to
    ``box_jitter_px``, and an instance split along a random line through
    the centroid.  Zero noise reproduces the truth stack exactly.
    """
    if n_post < 1:
        raise ParameterError("n_post must be >= 1")
    canvas = bundle.truth_pi.shape[1:]
    samples = []
    for _ in range(n_post):
        maps: list[np.ndarray] = []
        for k in range(1, bundle.truth_pi.shape[0]):
            plane = bundle.truth_pi[k]
            if noise.drop_prob > 0 and rng.random() < noise.drop_prob:
                continue
            if noise.mask_jitter > 0:
                amount = rng.uniform(-1, 1) * noise.mask_jitter * bundle.grid.min_obj_px
                plane = _jitter_support(plane, amount, rng)
            if noise.box_jitter_px > 0:
                dy, dx = np.round(rng.uniform(-noise.box_jitter_px, noise.box_jitter_px, 2))
                plane = _shift_support(plane, int(dy), int(dx))
            if noise.split_prob > 0 and rng.random() < noise.split_prob:
                maps.extend(_split_support(plane, rng))
            else:
                maps.append(plane)
        samples.append(mix(maps) if maps else mix_empty(canvas))
    return samples
