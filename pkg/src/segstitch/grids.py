"""Native and coarse pixel grids plus validation helpers for gridded fields.

The native grid is the image raster itself.  The coarse grid subsamples it
with a spacing equal to the smallest admissible object size, so that one
coarse cell can host at most one small object.  Object-presence fields and
probability maps live on the coarse grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class GridSpec:
    """Dimensions of the native image grid and the derived coarse grid.

    Parameters
    ----------
    height_px, width_px : int
        Native image dimensions.
    min_obj_px, max_obj_px : int
        Bounds on the linear size of objects; the coarse grid spacing
        equals ``min_obj_px``.
    """

    height_px: int
    width_px: int
    min_obj_px: int
    max_obj_px: int
    coarse_h: int = field(init=False)
    coarse_w: int = field(init=False)

    def __post_init__(self):
        if self.min_obj_px <= 0:
            raise ParameterError("min_obj_px must be positive")
        if self.min_obj_px > self.max_obj_px:
            raise ParameterError("min_obj_px must not exceed max_obj_px")
        if self.max_obj_px > min(self.height_px, self.width_px):
            raise ParameterError("max_obj_px must not exceed image dims")
        object.__setattr__(self, "coarse_h", math.ceil(self.height_px / self.min_obj_px))
        object.__setattr__(self, "coarse_w", math.ceil(self.width_px / self.min_obj_px))

    @property
    def coarse_shape(self) -> tuple[int, int]:
        return (self.coarse_h, self.coarse_w)

    @property
    def native_shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    @property
    def n_coarse(self) -> int:
        return self.coarse_h * self.coarse_w

    @property
    def n_native(self) -> int:
        return self.height_px * self.width_px


def as_binary_field(values, grid: GridSpec | None = None) -> np.ndarray:
    """Validate an object-presence field: 2-D, entries in {0, 1}."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DimensionError(f"binary field must be 2-D, got shape {arr.shape}")
    if grid is not None and arr.shape != grid.coarse_shape:
        raise DimensionError(
            f"binary field shape {arr.shape} does not match coarse grid {grid.coarse_shape}"
        )
    if not np.isin(arr, (0, 1)).all():
        raise ParameterError("binary field entries must be 0 or 1")
    return arr.astype(np.int8)


def as_prob_field(values, grid: GridSpec | None = None) -> np.ndarray:
    """Validate a probability map: 2-D, entries in [0, 1], no NaN."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"probability field must be 2-D, got shape {arr.shape}")
    if grid is not None and arr.shape != grid.coarse_shape:
        raise DimensionError(
            f"probability field shape {arr.shape} does not match coarse grid {grid.coarse_shape}"
        )
    if np.isnan(arr).any():
        raise ParameterError("probability field contains NaN")
    if (arr < 0).any() or (arr > 1).any():
        raise ParameterError("probability field entries must lie in [0, 1]")
    return arr


def coarse_coordinates(grid: GridSpec) -> np.ndarray:
    """Integer (row, col) coordinates of all coarse cells, row-major, shape (n, 2)."""
    rows, cols = np.indices(grid.coarse_shape)
    return np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
