"""Value-and-analytic-gradient implementations of every refinement loss term,
composed into the two competing hypothesis losses.

All gradients are taken with respect to the logits z and chained through
P = sigmoid(z) via dP/dz = P(1-P).  Every term except the foreground-variance
("gravity") term is normalized by voxel count, so the fixed weighting
coefficients behave consistently across volume sizes; the gravity term is
normalized intrinsically by its probability weights.  The full derivations
live in docs/gradients.md and are validated by the finite-difference checker
in :mod:`segtta.gradcheck`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import expit

from .volume import Spacing, Volume, require_same_grid

# Charbonnier smoothing of |.| in the TV/geodesic terms, probability clamp in
# the entropy term, and the mass guard in the gravity weights.
TV_EPS = 1e-6
PROB_CLAMP = 1e-7
GRAVITY_EPS = 1e-8

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LossTermResult:
    """Scalar loss value plus its gradient with respect to the logits."""

    value: float
    grad_z: Volume


@dataclass(frozen=True)
class CompactWeights:
    """Coefficients of the compaction hypothesis loss (entropy + total
    variation + foreground-coordinate variance + logit anchor)."""

    lambda_ent: float = 10.0
    lambda_tv: float = 0.5
    lambda_grav: float = 50.0
    lambda_anc: float = 50.0

    name = "compact"

    def __post_init__(self):
        _require_nonnegative(self)


@dataclass(frozen=True)
class DiffuseWeights:
    """Coefficients of the diffuse-recovery hypothesis loss (entropy +
    edge-gated boundary penalty + inflation + logit anchor)."""

    lambda_ent: float = 2.0
    lambda_geo: float = 50.0
    lambda_inf: float = 5.0
    lambda_anc: float = 0.1

    name = "diffuse"

    def __post_init__(self):
        _require_nonnegative(self)


@dataclass(frozen=True)
class EdgeMapConfig:
    """Edge-stopping map parameters: Gaussian scale (physical units) and the
    gradient sensitivity of g = 1 / (1 + alpha * |grad I|^2)."""

    sigma_mm: float = 1.0
    alpha: float = 10.0


def _require_nonnegative(cfg) -> None:
    for field, value in vars(cfg).items():
        if field.startswith("lambda_") and value < 0:
            raise ValueError(f"{field} must be >= 0, got {value}")


# ---------------------------------------------------------------------------
# raw array kernels (shared by the public ops and the optimizer hot loop)
# ---------------------------------------------------------------------------


def _entropy(z: np.ndarray, p: np.ndarray, pq: np.ndarray, n: int):
    # H = mean(-[P ln max(P,c) + (1-P) ln max(1-P,c)]); the clamp applies to
    # the log arguments only, so saturated voxels contribute ~0 value.
    q = 1.0 - p
    lp = np.log(np.maximum(p, PROB_CLAMP))
    lq = np.log(np.maximum(q, PROB_CLAMP))
    value = -(p.ravel() @ lp.ravel() + q.ravel() @ lq.ravel()) / n
    # dH/dP = -(lp - lq + [P > c] - [1-P > c]); the indicator difference
    # vanishes in-band and supplies the exact derivative at saturated voxels.
    dh_dp = np.subtract(lq, lp, out=lq)
    sat_lo = p <= PROB_CLAMP
    if sat_lo.any():
        dh_dp[sat_lo] += 1.0
    sat_hi = q <= PROB_CLAMP
    if sat_hi.any():
        dh_dp[sat_hi] -= 1.0
    dh_dp *= pq
    dh_dp /= n
    return value, dh_dp


def _charbonnier_faces(p: np.ndarray, face_w: Sequence[np.ndarray] | None, n: int):
    # sum over axes of w * (sqrt(d^2 + eps^2) - eps) with d the forward
    # difference (replicate boundary: final slab is zero), averaged over N;
    # zero-difference entries contribute exactly zero.
    value = 0.0
    grad = np.zeros_like(p)
    d = np.empty_like(p)
    root = np.empty_like(p)
    for axis in range(3):
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        last = [slice(None)] * 3
        src[axis] = slice(1, None)
        dst[axis] = slice(None, -1)
        last[axis] = slice(-1, None)
        np.subtract(p[tuple(src)], p[tuple(dst)], out=d[tuple(dst)])
        d[tuple(last)] = 0.0
        np.multiply(d, d, out=root)
        root += TV_EPS * TV_EPS
        np.sqrt(root, out=root)
        np.divide(d, root, out=d)  # d now holds u
        root -= TV_EPS  # smoothed |d|, exactly zero where d is zero
        if face_w is None:
            value += root.sum()
        else:
            # (w * root).sum() keeps the same pairwise reduction as the
            # unweighted path, so g == 1 reproduces tv bit-for-bit
            value += (face_w[axis] * root).sum()
        if face_w is not None:
            d *= face_w[axis]
        grad -= d
        grad[tuple(src)] += d[tuple(dst)]
    return value / n, grad / n


def _face_weights(g: np.ndarray) -> list[np.ndarray]:
    # face value between voxel k and k+1 along each axis: (g_k + g_{k+1}) / 2;
    # the final slab pairs with itself (its difference is zero anyway).
    weights = []
    for axis in range(3):
        w = g.copy()
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        src[axis] = slice(1, None)
        dst[axis] = slice(None, -1)
        w[tuple(dst)] = 0.5 * (g[tuple(src)] + g[tuple(dst)])
        weights.append(w)
    return weights


def _tv(p: np.ndarray, pq: np.ndarray, n: int):
    value, grad_p = _charbonnier_faces(p, None, n)
    return value, grad_p * pq


def _geodesic(p: np.ndarray, pq: np.ndarray, g: np.ndarray, n: int):
    value, grad_p = _charbonnier_faces(p, _face_weights(g), n)
    return value, grad_p * pq


@lru_cache(maxsize=32)
def _axis_coords(dims: tuple[int, int, int], spacing: Spacing):
    xs = []
    for axis, (n, s) in enumerate(zip(dims, spacing)):
        shape = [1, 1, 1]
        shape[axis] = n
        c = (np.arange(n, dtype=np.float64) * s).reshape(shape)
        c.flags.writeable = False
        xs.append(c)
    return tuple(xs)


def _gravity(p: np.ndarray, pq: np.ndarray, spacing: Spacing):
    # V = sum_v w_v ||x_v - c||^2 with w = P / (sum P + eps) and c = sum w x;
    # the gradient is differentiated through both w and c:
    #   dV/dP_k = (||x_k - c||^2 - V - 2 (1 - sum w) c.(x_k - c)) / (sum P + eps)
    # where (1 - sum w) = eps / (sum P + eps).  Both the value and the grad
    # basis separate over axes, so everything heavy is assembled from 1D
    # per-axis pieces broadcast together once.
    coords = _axis_coords(p.shape, spacing)
    marg = (p.sum(axis=(1, 2)), p.sum(axis=(0, 2)), p.sum(axis=(0, 1)))
    mass = float(marg[0].sum())
    total = mass + GRAVITY_EPS
    deltas = []
    value = 0.0
    for c_ax, m_ax in zip(coords, marg):
        ctr = float(m_ax @ c_ax.ravel()) / total
        delta = c_ax - ctr
        value += float(m_ax @ np.square(delta.ravel()))
        deltas.append((delta, ctr))
    value /= total
    # per-axis basis: delta^2 - 2 (eps/total) ctr delta, still 1D
    shrink = 2.0 * (1.0 - mass / total)
    basis = [d * d - shrink * ctr * d for d, ctr in deltas]
    grad_p = basis[0] + basis[1] + basis[2]  # broadcast to full shape
    grad_p -= value
    grad_p *= pq
    grad_p /= total
    return value, grad_p


def _inflation(p: np.ndarray, pq: np.ndarray, n: int):
    return -float(p.sum()) / n, -pq / n


def _anchor(z: np.ndarray, z0: np.ndarray, n: int):
    d = z - z0
    return float((d * d).sum()) / n, 2.0 * d / n


# ---------------------------------------------------------------------------
# public single-term operations
# ---------------------------------------------------------------------------


def _prob(z: Volume):
    p = expit(z.data)
    return p, p * (1.0 - p)


def entropy_term(z: Volume) -> LossTermResult:
    """Mean binary entropy of P = sigmoid(z); zero gradient at P = 1/2."""
    p, pq = _prob(z)
    value, grad = _entropy(z.data, p, pq, z.nvox)
    return LossTermResult(value, z.with_data(grad))


def tv_term(z: Volume) -> LossTermResult:
    """Smoothed total variation of P (Charbonnier |.|, eps = 1e-6), mean over voxels."""
    p, pq = _prob(z)
    value, grad = _tv(p, pq, z.nvox)
    return LossTermResult(value, z.with_data(grad))


def gravity_term(z: Volume) -> LossTermResult:
    """Probability-weighted spatial variance of foreground coordinates (mm^2).

    Minimizing it pulls stray foreground mass toward the centroid; coordinates
    are physical, so anisotropic spacing is respected.
    """
    p, pq = _prob(z)
    value, grad = _gravity(p, pq, z.spacing)
    return LossTermResult(value, z.with_data(grad))


def inflation_term(z: Volume) -> LossTermResult:
    """Negative mean foreground probability; descending it grows the region."""
    p, pq = _prob(z)
    value, grad = _inflation(p, pq, z.nvox)
    return LossTermResult(value, z.with_data(grad))


def anchor_term(z: Volume, z0: Volume) -> LossTermResult:
    """Mean squared logit deviation from the baseline, bounding refinement drift."""
    require_same_grid(z, z0, "logits and anchor logits")
    value, grad = _anchor(z.data, z0.data, z.nvox)
    return LossTermResult(value, z.with_data(grad))


def geodesic_term(z: Volume, g: Volume) -> LossTermResult:
    """Edge-gated boundary penalty: each axis difference of P is weighted by
    the mean edge-map value of the two voxels sharing the face.

    With g identically 1 this reduces to :func:`tv_term` bit-for-bit.
    """
    require_same_grid(z, g, "logits and edge map")
    p, pq = _prob(z)
    value, grad = _geodesic(p, pq, g.data, z.nvox)
    return LossTermResult(value, z.with_data(grad))


def edge_map(channels: Sequence[Volume], sigma_mm: float = 1.0, alpha: float = 10.0) -> Volume:
    """Edge-stopping map in (0, 1]: ~1 in homogeneous tissue, ~0 at image edges.

    Per channel: Gaussian-smooth at a physical scale, take the spacing-scaled
    central-difference gradient magnitude, normalize by its 99th percentile,
    then g_c = 1 / (1 + alpha * m^2).  The map is the voxelwise minimum over
    channels, so an edge in any channel acts as a barrier.
    """
    channels = list(channels)
    if not channels:
        raise ValueError("edge_map needs at least one image channel")
    for ch in channels[1:]:
        require_same_grid(ch, channels[0], "image channels")
    spacing = channels[0].spacing
    sigma_vox = [sigma_mm / s for s in spacing]
    g = None
    for ch in channels:
        smooth = gaussian_filter(ch.data, sigma=sigma_vox, mode="nearest")
        mag = _gradient_magnitude(smooth, spacing)
        p99 = float(np.percentile(mag, 99.0))
        norm = mag / p99 if p99 > 0.0 else np.zeros_like(mag)
        g_c = 1.0 / (1.0 + alpha * norm * norm)
        g = g_c if g is None else np.minimum(g, g_c)
    return Volume(g, spacing)


def _gradient_magnitude(arr: np.ndarray, spacing: Spacing) -> np.ndarray:
    out = np.zeros_like(arr)
    for axis, s in enumerate(spacing):
        n = arr.shape[axis]
        if n == 1:
            continue
        d = np.empty_like(arr)
        mid = [slice(None)] * 3
        fwd = [slice(None)] * 3
        bwd = [slice(None)] * 3
        mid[axis], fwd[axis], bwd[axis] = slice(1, -1), slice(2, None), slice(None, -2)
        d[tuple(mid)] = arr[tuple(fwd)] - arr[tuple(bwd)]
        first, second = [slice(None)] * 3, [slice(None)] * 3
        first[axis], second[axis] = slice(0, 1), slice(1, 2)
        d[tuple(first)] = arr[tuple(second)] - arr[tuple(first)]
        last, prior = [slice(None)] * 3, [slice(None)] * 3
        last[axis], prior[axis] = slice(n - 1, n), slice(n - 2, n - 1)
        d[tuple(last)] = arr[tuple(last)] - arr[tuple(prior)]
        d /= 2.0 * s
        out += d * d
    return np.sqrt(out)


# ---------------------------------------------------------------------------
# composite hypothesis losses
# ---------------------------------------------------------------------------


def compact_loss(z: Volume, z0: Volume, weights: CompactWeights = CompactWeights()) -> LossTermResult:
    """Weighted sum: entropy + total variation + gravity + anchor."""
    require_same_grid(z, z0, "logits and anchor logits")
    value, grad = compact_objective(z0.data, z.spacing, weights)(z.data)
    return LossTermResult(value, z.with_data(grad))


def diffuse_loss(z: Volume, z0: Volume, g: Volume,
                 weights: DiffuseWeights = DiffuseWeights()) -> LossTermResult:
    """Weighted sum: entropy + edge-gated boundary penalty + inflation + anchor."""
    require_same_grid(z, z0, "logits and anchor logits")
    require_same_grid(z, g, "logits and edge map")
    value, grad = diffuse_objective(z0.data, g.data, weights)(z.data)
    return LossTermResult(value, z.with_data(grad))


def compact_objective(z0: np.ndarray, spacing: Spacing, weights: CompactWeights) -> Objective:
    """Array-level evaluator used by the optimizer loop: z -> (value, grad)."""
    n = z0.size

    def evaluate(z: np.ndarray):
        p = expit(z)
        pq = p * (1.0 - p)
        value = 0.0
        grad = np.zeros_like(z)
        for lam, term in (
            (weights.lambda_ent, lambda: _entropy(z, p, pq, n)),
            (weights.lambda_tv, lambda: _tv(p, pq, n)),
            (weights.lambda_grav, lambda: _gravity(p, pq, spacing)),
            (weights.lambda_anc, lambda: _anchor(z, z0, n)),
        ):
            if lam != 0.0:
                v, g = term()
                value += lam * v
                grad += lam * g
        return value, grad

    return evaluate


def diffuse_objective(z0: np.ndarray, g_map: np.ndarray, weights: DiffuseWeights) -> Objective:
    """Array-level evaluator used by the optimizer loop: z -> (value, grad)."""
    n = z0.size
    faces = _face_weights(g_map) if weights.lambda_geo != 0.0 else None

    def evaluate(z: np.ndarray):
        p = expit(z)
        pq = p * (1.0 - p)
        value = 0.0
        grad = np.zeros_like(z)
        if weights.lambda_ent != 0.0:
            v, gr = _entropy(z, p, pq, n)
            value += weights.lambda_ent * v
            grad += weights.lambda_ent * gr
        if weights.lambda_geo != 0.0:
            v, grad_p = _charbonnier_faces(p, faces, n)
            value += weights.lambda_geo * v
            grad += weights.lambda_geo * grad_p * pq
        if weights.lambda_inf != 0.0:
            v, gr = _inflation(p, pq, n)
            value += weights.lambda_inf * v
            grad += weights.lambda_inf * gr
        if weights.lambda_anc != 0.0:
            v, gr = _anchor(z, z0, n)
            value += weights.lambda_anc * v
            grad += weights.lambda_anc * gr
        return value, grad

    return evaluate
