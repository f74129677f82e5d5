"""Bounding-box geometry: latent-to-box transform, overlap measures, NMS.

Each coarse grid cell carries one box proposal.  A 4-vector latent is
squashed through an affine-plus-sigmoid map into (center offset, size)
coordinates; proposals then compete through a greedy non-max suppression
sweep scored by provisional presence plus presence probability, using
intersection-over-min-area as the overlap measure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .grids import GridSpec, as_binary_field, as_prob_field


@dataclass(frozen=True)
class SafParams:
    """Affine parameters of the latent-to-box squashing map."""

    bias: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        bias = np.asarray(self.bias, dtype=np.float64).reshape(4)
        weight = np.asarray(self.weight, dtype=np.float64).reshape(4, 4)
        if not (np.isfinite(bias).all() and np.isfinite(weight).all()):
            raise ParameterError("SAF parameters must be finite")
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "weight", weight)

    @classmethod
    def identity(cls) -> "SafParams":
        return cls(bias=np.zeros(4), weight=np.zeros((4, 4)))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel units, center + size convention."""

    cx: float
    cy: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2)"""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )


@dataclass(frozen=True)
class ProposalSet:
    """One box per coarse grid point, with presence probs and provisional field.

    ``boxes`` is aligned to row-major coarse grid indices.
    """

    boxes: list[BoundingBox]
    probs: np.ndarray
    provisional: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        object.__setattr__(self, "probs", as_prob_field(self.probs, self.grid))
        object.__setattr__(self, "provisional", as_binary_field(self.provisional, self.grid))
        if len(self.boxes) != self.grid.n_coarse:
            raise ParameterError(
                f"expected {self.grid.n_coarse} boxes, got {len(self.boxes)}"
            )


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def saf_transform(
    v, params: SafParams, grid_index: tuple[int, int], grid: GridSpec
) -> BoundingBox:
    """Map an unconstrained 4-vector latent to a bounding box.

    ``grid_index`` is (ix, iy) = (column, row) on the coarse grid.  The
    squashed 4-vector t places the center inside the cell and interpolates
    the size between the configured object-size bounds:

        cx = (W / coarse_w) * (ix + t0)
        cy = (H / coarse_h) * (iy + t1)
        w, h = min_obj + (max_obj - min_obj) * t(2, 3)
    """
    ix, iy = grid_index
    if not (0 <= ix < grid.coarse_w and 0 <= iy < grid.coarse_h):
        raise ParameterError(f"grid index {grid_index} outside coarse grid")
    vec = np.asarray(v, dtype=np.float64).reshape(4)
    t = _sigmoid(params.bias + params.weight @ vec)
    size_span = grid.max_obj_px - grid.min_obj_px
    return BoundingBox(
        cx=grid.width_px / grid.coarse_w * (ix + t[0]),
        cy=grid.height_px / grid.coarse_h * (iy + t[1]),
        w=grid.min_obj_px + size_span * t[2],
        h=grid.min_obj_px + size_span * t[3],
    )


def overlap(a: BoundingBox, b: BoundingBox) -> tuple[float, float]:
    """(intersection-over-min-area, intersection-over-union), both in [0, 1].

    IoMIN equals 1 whenever one box engulfs the other, which makes it the
    right measure for threshold-based duplicate suppression; IoU <= IoMIN.
    """
    if a.area <= 0 or b.area <= 0:
        raise ParameterError("boxes must have positive area")
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    iomin = min(1.0, inter / min(a.area, b.area))
    iou = min(1.0, inter / (a.area + b.area - inter))
    return iomin, iou


def _score_order(scores: np.ndarray) -> np.ndarray:
    # Descending score; ties broken toward the lower flattened index so the
    # sweep is deterministic and seed-independent.
    flat = scores.ravel()
    return np.lexsort((np.arange(flat.size), -flat))


def nms(proposals: ProposalSet, alpha: float) -> np.ndarray:
    """Greedy duplicate suppression over the proposal set.

    Scores are provisional + probability, so every provisionally-on
    proposal outranks every provisionally-off one.  A proposal survives
    iff its IoMIN with every higher-scored survivor is <= ``alpha``; the
    returned presence field keeps the surviving provisionally-on points.
    """
    if not (0 < alpha <= 1):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    scores = proposals.provisional + proposals.probs
    order = _score_order(scores)
    survivors: list[int] = []
    for idx in order:
        box = proposals.boxes[idx]
        if all(overlap(box, proposals.boxes[s])[0] <= alpha for s in survivors):
            survivors.append(int(idx))
    out = np.zeros(proposals.grid.n_coarse, dtype=np.int8)
    prov = proposals.provisional.ravel()
    for idx in survivors:
        out[idx] = prov[idx]
    return out.reshape(proposals.grid.coarse_shape)


def select_top_k(
    c, scores, k_max: int
) -> tuple[list[int], list[int]]:
    """Fixed-width slot selection for batched downstream processing.

    Ranks all grid points by score (descending, lower flat index wins
    ties) and returns ``k_max`` slots; the mask coefficient of a slot is
    the presence value of its grid point, so slots beyond the surviving
    instances multiply downstream mixing weights to zero.  Slots past the
    grid size carry index -1.
    """
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    presence = as_binary_field(c).ravel()
    score_arr = np.asarray(scores, dtype=np.float64).ravel()
    if presence.size != score_arr.size:
        raise ParameterError("presence field and scores must match in size")
    order = _score_order(score_arr)[: k_max]
    indices = [int(i) for i in order]
    coeffs = [int(presence[i]) for i in order]
    while len(indices) < k_max:
        indices.append(-1)
        coeffs.append(0)
    return indices, coeffs
