"""Determinantal point process over the coarse object grid.

An L-ensemble with an RBF similarity kernel provides the repulsive prior on
object locations: the probability of switching on a subset of coarse cells
is det(S_subset) / det(S + I).  The module provides kernel construction,
exact log-probability, exact sampling, the expected cardinality, and a
Monte-Carlo estimator of the KL divergence from an independent-Bernoulli
field to the point process.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericalError, ParameterError
from .grids import GridSpec, as_binary_field, as_prob_field, coarse_coordinates

# Near-singular RBF submatrices are routine for small repulsion lengths;
# Cholesky is retried with escalating diagonal jitter before giving up.
_JITTER_SCALE = 1e-10
_JITTER_RETRIES = 3


@dataclass(frozen=True)
class KernelParams:
    """Density ``rho`` and repulsion length ``ell`` (in coarse-cell units)."""

    rho: float
    ell: float

    def __post_init__(self):
        if not (self.rho > 0 and np.isfinite(self.rho)):
            raise ParameterError(f"rho must be positive and finite, got {self.rho}")
        if not (self.ell > 0 and np.isfinite(self.ell)):
            raise ParameterError(f"ell must be positive and finite, got {self.ell}")


@dataclass
class KernelMatrix:
    """Dense symmetric PSD similarity matrix over the coarse grid.

    ``shape`` is the coarse grid shape; ``matrix`` is (n, n) with
    n = coarse_h * coarse_w, row-major cell ordering.
    """

    matrix: np.ndarray
    shape: tuple[int, int]
    rho: float
    _log_partition: float | None = field(default=None, repr=False)
    _eig: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def log_partition(self) -> float:
        """log det(S + I), cached; the normalizer of the subset distribution."""
        if self._log_partition is None:
            ident = np.eye(self.n)
            self._log_partition = _chol_logdet(self.matrix + ident, self.rho)
            if not np.isfinite(self._log_partition):
                raise NumericalError("log det(S + I) is not finite")
        return self._log_partition

    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached eigendecomposition (eigenvalues clipped to >= 0)."""
        if self._eig is None:
            try:
                w, v = np.linalg.eigh(self.matrix)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"eigendecomposition failed for {self.n}x{self.n} kernel "
                    f"(diag={self.rho}, cond estimate unavailable)"
                ) from exc
            self._eig = (np.maximum(w, 0.0), v)
        return self._eig


def _chol_logdet(a: np.ndarray, scale: float) -> float:
    """Log-determinant of a symmetric PSD matrix via Cholesky.

    On failure the matrix is checked for genuine rank deficiency (-inf
    sentinel); a borderline-PSD matrix is retried with escalating diagonal
    jitter starting at 1e-10 * scale.
    """
    if a.shape[0] == 0:
        return 0.0
    try:
        chol = scipy.linalg.cholesky(a, lower=True, check_finite=False)
        return 2.0 * float(np.sum(np.log(np.diag(chol))))
    except scipy.linalg.LinAlgError:
        pass
    eigs = np.linalg.eigvalsh(a)
    if eigs[0] <= _JITTER_SCALE * scale:
        return -np.inf
    for k in range(_JITTER_RETRIES):
        jit = _JITTER_SCALE * scale * 10**k
        try:
            chol = scipy.linalg.cholesky(
                a + jit * np.eye(a.shape[0]), lower=True, check_finite=False
            )
            return 2.0 * float(np.sum(np.log(np.diag(chol))))
        except scipy.linalg.LinAlgError:
            continue
    return -np.inf


def build_rbf_kernel(grid: GridSpec, params: KernelParams) -> KernelMatrix:
    """S[l, m] = rho * exp(-|r_l - r_m|^2 / (2 ell^2)) over coarse-cell coords.

    Distances are measured between integer (row, col) coarse coordinates
    with unit spacing, so ``ell`` is unit-free with respect to pixel size.
    """
    coords = coarse_coordinates(grid)
    diff = coords[:, None, :] - coords[None, :, :]
    sq_dist = np.einsum("ijk,ijk->ij", diff, diff)
    matrix = params.rho * np.exp(-sq_dist / (2.0 * params.ell**2))
    matrix = 0.5 * (matrix + matrix.T)
    return KernelMatrix(matrix=matrix, shape=grid.coarse_shape, rho=params.rho)


def _check_subset_dims(kernel: KernelMatrix, subset: np.ndarray) -> np.ndarray:
    arr = as_binary_field(subset)
    if arr.shape != kernel.shape:
        raise DimensionError(
            f"subset shape {arr.shape} does not match kernel grid {kernel.shape}"
        )
    return arr


def dpp_log_prob(kernel: KernelMatrix, subset) -> float:
    """log P(subset) = log det(S_subset) - log det(S + I).

    The determinant of the empty submatrix is 1.  A numerically singular
    submatrix yields -inf (zero probability), not an error.
    """
    arr = _check_subset_dims(kernel, subset)
    idx = np.flatnonzero(arr.ravel())
    log_z = kernel.log_partition()
    if idx.size == 0:
        return -log_z
    sub = kernel.matrix[np.ix_(idx, idx)]
    return _chol_logdet(sub, kernel.rho) - log_z


def dpp_sample(kernel: KernelMatrix, rng: np.random.Generator) -> np.ndarray:
    """Draw one exact sample via eigendecomposition + projection elimination.

    The standard two-stage scheme: each eigenvector is kept independently
    with probability lambda / (1 + lambda); the kept orthonormal set then
    defines a projection process sampled by sequential elimination.
    """
    w, v = kernel.eig()
    keep = rng.random(kernel.n) < w / (1.0 + w)
    vecs = v[:, keep]
    out = np.zeros(kernel.shape, dtype=np.int8)
    flat = out.ravel()
    k = vecs.shape[1]
    for _ in range(k):
        probs = np.einsum("ij,ij->i", vecs, vecs)
        probs = np.maximum(probs, 0.0)
        total = probs.sum()
        if total <= 0:
            break
        item = int(rng.choice(kernel.n, p=probs / total))
        flat[item] = 1
        if vecs.shape[1] == 1:
            break
        # Eliminate the pivot column to zero row `item`, then re-orthonormalize.
        j = int(np.argmax(np.abs(vecs[item, :])))
        pivot = vecs[:, j]
        vecs = vecs - np.outer(pivot / pivot[item], vecs[item, :])
        vecs = np.delete(vecs, j, axis=1)
        q, r = np.linalg.qr(vecs)
        # Guard against rank loss from cancellation.
        ok = np.abs(np.diag(r)) > 1e-12
        vecs = q[:, ok]
        if vecs.shape[1] == 0:
            break
    return out


def dpp_expected_cardinality(kernel: KernelMatrix) -> float:
    """E[|subset|] = tr(S (S + I)^-1) = sum_i lambda_i / (1 + lambda_i)."""
    w, _ = kernel.eig()
    return float(np.sum(w / (1.0 + w)))


def grid_kl_mc(p, kernel: KernelMatrix, n_mc: int = 1, *, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of KL[Bernoulli-field(p) || DPP(S)].

    Draws ``n_mc`` i.i.d. Bernoulli fields from ``p`` and averages

        sum_cells [w log p + (1 - w) log(1 - p)] - log det(S_w)

    then adds log det(S + I).  Entries of ``p`` exactly 0 or 1 are legal:
    their log terms contribute zero under the 0 * log 0 convention.
    """
    if n_mc < 1:
        raise ParameterError("n_mc must be >= 1")
    probs = as_prob_field(p)
    if probs.shape != kernel.shape:
        raise DimensionError(
            f"probability field shape {probs.shape} does not match kernel grid {kernel.shape}"
        )
    flat_p = probs.ravel()
    with np.errstate(divide="ignore"):
        log_p = np.where(flat_p > 0, np.log(np.where(flat_p > 0, flat_p, 1.0)), 0.0)
        log_1mp = np.where(flat_p < 1, np.log(np.where(flat_p < 1, 1.0 - flat_p, 1.0)), 0.0)
    draws = rng.random((n_mc, flat_p.size)) < flat_p
    total = 0.0
    for i in range(n_mc):
        on = draws[i]
        cross = float(np.sum(np.where(on, log_p, log_1mp)))
        idx = np.flatnonzero(on)
        if idx.size:
            log_det = _chol_logdet(kernel.matrix[np.ix_(idx, idx)], kernel.rho)
        else:
            log_det = 0.0
        total += cross - log_det
    estimate = total / n_mc + kernel.log_partition()
    if np.isnan(estimate):
        raise NumericalError("KL estimate is NaN")
    return float(estimate)


def enumerate_subsets(shape: tuple[int, int]):
    """Yield every binary field over a small grid (2^n of them), row-major bits."""
    h, w = shape
    n = h * w
    if n > 24:
        raise ParameterError(f"enumeration over 2^{n} subsets is not tractable")
    for code in range(1 << n):
        bits = (code >> np.arange(n)) & 1
        yield bits.astype(np.int8).reshape(h, w)
