"""Evaluation of the normalized training objective and its controller.

All quantities here are plain evaluations: reconstruction and KL terms with
their scale-freeing pre-factors, the posterior statistics that feed the
constraint controller, the asymmetric penalty with explicit multiplier
updates, the pairwise overlap penalty, the warm-up probability blend, and a
histogram-based noise-scale estimate.  No gradients are involved; multiplier
dynamics are the explicit descent step implied by the stop-gradient
convention of the loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .boxes import ProposalSet
from .errors import DimensionError, ParameterError
from .grids import as_prob_field


@dataclass(frozen=True)
class LossTerms:
    rec: float
    kl_bg: float
    kl_fg: float
    kl_box: float
    kl_grid: float

    @property
    def total_kl(self) -> float:
        return self.kl_bg + self.kl_fg + self.kl_box + self.kl_grid


@dataclass(frozen=True)
class NGridState:
    """Exponentially-weighted moving average of the grid-KL magnitude."""

    ema: float | None = None
    decay: float = 0.9

    def __post_init__(self):
        if not (0 < self.decay < 1):
            raise ParameterError("decay must lie in (0, 1)")

    def update(self, value: float) -> "NGridState":
        mag = abs(float(value))
        if self.ema is None:
            return replace(self, ema=mag)
        return replace(self, ema=self.decay * self.ema + (1 - self.decay) * mag)


@dataclass(frozen=True)
class QValues:
    density: float
    area: float
    rec: float

    def __post_init__(self):
        if not (0 <= self.density <= 1):
            raise ParameterError("density must lie in [0, 1]")
        if self.area < 0 or self.rec < 0:
            raise ParameterError("area and rec must be >= 0")


@dataclass(frozen=True)
class Constraint:
    """One inequality constraint with its clamped penalty multiplier."""

    lam: float = 1.0
    lam_lo: float = 0.1
    lam_hi: float = 10.0
    q_lo: float = 0.0
    q_hi: float = 1.0
    step: float = 0.1

    def __post_init__(self):
        if not (self.lam_lo <= self.lam <= self.lam_hi):
            raise ParameterError("lambda outside its clamp range")
        if self.q_lo > self.q_hi:
            raise ParameterError("q_lo must not exceed q_hi")


@dataclass(frozen=True)
class SaprState:
    rec: Constraint
    density: Constraint
    area: Constraint

    @classmethod
    def default(cls, density_bounds=(0.01, 0.2), area_bounds=(0.01, 0.4),
                rec_hi=1.0, step=0.1) -> "SaprState":
        # rec_lo is pinned at 0 so a satisfied solution is never degraded.
        return cls(
            rec=Constraint(q_lo=0.0, q_hi=rec_hi, step=step),
            density=Constraint(q_lo=density_bounds[0], q_hi=density_bounds[1], step=step),
            area=Constraint(q_lo=area_bounds[0], q_hi=area_bounds[1], step=step),
        )


def recon_loss(x, pi_hat, layers, sigma: float) -> float:
    """Per-pixel-mean weighted squared reconstruction error.

    (1 / n_pixels) * (1 / 2 sigma^2) * sum_p sum_k pi_k(p) |x(p) - y_k(p)|^2
    """
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    img = np.asarray(x, dtype=np.float64)
    stack = np.stack([np.asarray(l, dtype=np.float64) for l in layers])
    pi = np.asarray(pi_hat, dtype=np.float64)
    if stack.shape[0] != pi.shape[0] or stack.shape[1:3] != pi.shape[1:]:
        raise DimensionError("mixing stack and layers disagree in shape")
    if img.shape != stack.shape[1:]:
        raise DimensionError("image and layers disagree in shape")
    sq = ((img[None] - stack) ** 2).sum(axis=-1)
    n_pix = img.shape[0] * img.shape[1]
    return float((pi * sq).sum() / (2.0 * sigma**2 * n_pix))


def gaussian_kl(mu, sigma) -> float:
    """Exact KL from N(mu, diag sigma) to the standard normal."""
    m = np.asarray(mu, dtype=np.float64)
    s = np.asarray(sigma, dtype=np.float64)
    if (s <= 0).any():
        raise ParameterError("sigma must be positive elementwise")
    return float(0.5 * np.sum(s**2 + m**2 - 1.0 - 2.0 * np.log(s)))


def kl_total(
    bg: tuple,
    fg: list[tuple],
    box: list[tuple],
    grid_kl_value: float,
    dims: tuple[int, int, int],
    state: NGridState,
    rec: float = 0.0,
) -> tuple[LossTerms, NGridState]:
    """Apply the scale-freeing pre-factors to the four KL contributions.

    ``dims`` is (D_bg, D_fg, K_hat).  The grid term is divided by a running
    magnitude estimate, updated here with |grid_kl_value|; with no
    instances the per-instance terms contribute zero.
    """
    d_bg, d_fg, k_hat = dims
    if k_hat < 0:
        raise ParameterError("K_hat must be >= 0")
    if len(fg) != k_hat or len(box) != k_hat:
        raise DimensionError(
            f"expected {k_hat} foreground/box posteriors, got {len(fg)}/{len(box)}"
        )
    kl_bg = gaussian_kl(*bg) / d_bg
    if k_hat > 0:
        kl_fg = sum(gaussian_kl(*t) for t in fg) / (d_fg * k_hat)
        kl_box = sum(gaussian_kl(*t) for t in box) / (4.0 * k_hat)
    else:
        kl_fg = 0.0
        kl_box = 0.0
    new_state = state.update(grid_kl_value)
    kl_grid = float(grid_kl_value) / new_state.ema if new_state.ema > 0 else 0.0
    terms = LossTerms(rec=rec, kl_bg=kl_bg, kl_fg=kl_fg, kl_box=kl_box, kl_grid=kl_grid)
    return terms, new_state


def q_values(c, pi, boxes, grid, rec: float) -> QValues:
    """Posterior statistics that feed the constraint controller.

    density: mean presence over the coarse grid.  area: half the summed
    soft-mask areas plus half the summed box areas, each normalized by the
    pixel count.  rec passes through.
    """
    presence = np.asarray(c)
    pi_arr = np.asarray(pi, dtype=np.float64)
    n_pix = grid.n_native
    density = float(presence.mean()) if presence.size else 0.0
    mask_area = float(pi_arr[1:].sum()) if pi_arr.shape[0] > 1 else 0.0
    box_area = float(sum(b.w * b.h for b in boxes))
    area = 0.5 * mask_area / n_pix + 0.5 * box_area / n_pix
    return QValues(density=density, area=area, rec=float(rec))


def _u_term(q_hat: float, q_lo: float) -> float:
    return q_hat * math.copysign(1.0, q_hat - q_lo) if q_hat != q_lo else 0.0


def _v_term(q_hat: float, q_lo: float, q_hi: float) -> float:
    return min(q_hat - q_lo, q_hi - q_hat)


def sapr_step(q: QValues, state: SaprState, kl: float) -> tuple[float, SaprState]:
    """One evaluation + multiplier update of the constrained objective.

    loss = kl + sum_beta [lambda * u + lambda * v] with u = Q sign(Q - Q_lo)
    and v = min(Q - Q_lo, Q_hi - Q); the multiplier then descends its own
    gradient, lambda <- clamp(lambda - step * v), so violation (v < 0)
    raises the penalty and satisfaction decays it toward the floor.
    """
    loss = float(kl)
    updated = {}
    for name in ("rec", "density", "area"):
        con: Constraint = getattr(state, name)
        q_hat = getattr(q, name)
        u = _u_term(q_hat, con.q_lo)
        v = _v_term(q_hat, con.q_lo, con.q_hi)
        loss += con.lam * u + con.lam * v
        new_lam = min(con.lam_hi, max(con.lam_lo, con.lam - con.step * v))
        updated[name] = replace(con, lam=new_lam)
    return loss, SaprState(**updated)


def overlap_penalty(weights, lambda_overlap: float) -> float:
    """lambda * sum_p sum_{k != k'} w_k(p) w_k'(p), ordered pairs."""
    if lambda_overlap < 0:
        raise ParameterError("lambda_overlap must be >= 0")
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 3:
        raise DimensionError("weights must be (K, H, W)")
    total = w.sum(axis=0)
    cross = total**2 - (w**2).sum(axis=0)
    return float(lambda_overlap * cross.sum())


def warmup_blend(p, delta, proposals: ProposalSet, f_t: float) -> np.ndarray:
    """Blend presence probabilities with background-residual ranks.

    Each proposal's box interior averages the residual map; proposals are
    ranked ascending by that average (largest residual gets the top rank)
    and the probability map moves toward rank / n_proposals by ``f_t``.
    """
    if not (0 <= f_t <= 1):
        raise ParameterError("f_t must lie in [0, 1]")
    probs = as_prob_field(p)
    res = np.asarray(delta, dtype=np.float64)
    grid = proposals.grid
    if res.shape != grid.native_shape:
        raise DimensionError("residual map must match the native grid")
    n = grid.n_coarse
    averages = np.zeros(n)
    for i, box in enumerate(proposals.boxes):
        x1, y1, x2, y2 = box.corners()
        c_lo = max(0, int(math.floor(x1 + 0.5)))
        c_hi = min(grid.width_px, int(math.ceil(x2 - 0.5)) + 1)
        r_lo = max(0, int(math.floor(y1 + 0.5)))
        r_hi = min(grid.height_px, int(math.ceil(y2 - 0.5)) + 1)
        patch = res[r_lo:r_hi, c_lo:c_hi]
        averages[i] = patch.mean() if patch.size else 0.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[np.argsort(averages, kind="stable")] = np.arange(1, n + 1)
    blended = (1 - f_t) * probs + f_t * (ranks / n).reshape(grid.coarse_shape)
    return blended


@dataclass(frozen=True)
class SigmaEstimate:
    value: float
    method: str  # "em" or "otsu"


def _otsu_split(values: np.ndarray) -> float:
    """Threshold maximizing inter-class variance on a 256-bin histogram."""
    hist, edges = np.histogram(values, bins=256)
    mids = 0.5 * (edges[:-1] + edges[1:])
    weight = hist.astype(np.float64)
    total = weight.sum()
    w0 = np.cumsum(weight)
    w1 = total - w0
    mu0 = np.cumsum(weight * mids)
    mu_total = mu0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = mu0 / w0
        m1 = (mu_total - mu0) / w1
        between = w0 * w1 * (m0 - m1) ** 2
    between[~np.isfinite(between)] = -1
    return float(mids[int(np.argmax(between))])


def estimate_sigma(image, n_iter: int = 200, tol: float = 1e-8) -> SigmaEstimate:
    """Noise-scale estimate from a two-component Gaussian intensity fit.

    Returns the standard deviation of the higher-mean component, an upper
    bound on the pixel noise scale.  If EM degenerates the estimate falls
    back to an inter-class threshold split and says so.
    """
    values = np.asarray(image, dtype=np.float64).ravel()
    spread = values.max() - values.min()
    if not np.isfinite(spread) or spread <= 0:
        raise ParameterError("sigma estimation needs a non-constant image")

    # Deterministic EM init from the quartiles.
    mu = np.array([np.quantile(values, 0.25), np.quantile(values, 0.75)])
    sd = np.full(2, values.std() / 2 + 1e-12)
    w = np.array([0.5, 0.5])
    degenerate = False
    prev = -np.inf
    for _ in range(n_iter):
        log_pdf = (
            -0.5 * ((values[:, None] - mu[None]) / sd[None]) ** 2
            - np.log(sd[None])
            - 0.5 * math.log(2 * math.pi)
            + np.log(w[None])
        )
        shift = log_pdf.max(axis=1, keepdims=True)
        post = np.exp(log_pdf - shift)
        norm = post.sum(axis=1, keepdims=True)
        post /= norm
        ll = float((np.log(norm[:, 0]) + shift[:, 0]).sum())
        resp = post.sum(axis=0)
        if (resp < 1e-6 * values.size).any():
            degenerate = True
            break
        w = resp / values.size
        mu = (post * values[:, None]).sum(axis=0) / resp
        sd = np.sqrt((post * (values[:, None] - mu[None]) ** 2).sum(axis=0) / resp)
        if (sd < 1e-9 * spread).any() or not np.isfinite(sd).all():
            degenerate = True
            break
        if abs(ll - prev) < tol * (abs(prev) + 1):
            break
        prev = ll
    if abs(mu[1] - mu[0]) < 1e-6 * spread:
        degenerate = True

    if not degenerate:
        fg = int(np.argmax(mu))
        return SigmaEstimate(value=float(sd[fg]), method="em")

    threshold = _otsu_split(values)
    upper = values[values > threshold]
    if upper.size < 2:
        upper = np.sort(values)[values.size // 2 :]
    return SigmaEstimate(value=float(upper.std()), method="otsu")
