"""Central finite-difference verification of every analytic gradient.

The checker treats a loss term as a black-box scalar function of the logits
and compares its analytic gradient against (f(z + h e_i) - f(z - h e_i)) / 2h
per voxel.  Voxels taking part in a near-kink difference of the TV/geodesic
terms (any axis |dP| below a cutoff) are excluded there, since the Charbonnier
curvature makes the quotient ill-conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import losses
from .phantom import standard_normals
from .volume import Volume

FD_STEP = 1e-5
KINK_CUTOFF = 1e-4
DEFAULT_TOLERANCE = 1e-3


@dataclass(frozen=True)
class GradCheckResult:
    term: str
    max_rel_err: float
    checked_voxels: int
    excluded_voxels: int

    def ok(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_rel_err < tolerance


def finite_diff_grad(f: Callable[[np.ndarray], float], z: np.ndarray,
                     step: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(z)
    flat = grad.ravel()
    work = z.copy()
    wflat = work.ravel()
    for i in range(work.size):
        orig = wflat[i]
        wflat[i] = orig + step
        f_plus = f(work)
        wflat[i] = orig - step
        f_minus = f(work)
        wflat[i] = orig
        flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def tv_kink_exclusion(p: np.ndarray, cutoff: float = KINK_CUTOFF) -> np.ndarray:
    """Voxels touching any forward difference with |dP| < cutoff."""
    excluded = np.zeros(p.shape, dtype=bool)
    for axis in range(3):
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        src[axis] = slice(1, None)
        dst[axis] = slice(None, -1)
        small = np.abs(p[tuple(src)] - p[tuple(dst)]) < cutoff
        excluded[tuple(dst)] |= small
        excluded[tuple(src)] |= small
    return excluded


def _random_volume(seed: int, stream: int, dims=(4, 4, 4), spacing=(1.0, 1.3, 0.8)) -> Volume:
    n = int(np.prod(dims))
    vals = standard_normals(seed, 2 * stream * n, n).reshape(dims, order="F")
    return Volume(vals, spacing)


def _unit_interval_volume(seed: int, stream: int, dims=(4, 4, 4), spacing=(1.0, 1.3, 0.8)) -> Volume:
    raw = _random_volume(seed, stream, dims, spacing)
    return raw.with_data(expit(raw.data) * 0.999 + 0.0005)  # values in (0, 1]ish


def check_term(term: str, seed: int, dims=(4, 4, 4)) -> GradCheckResult:
    """Compare one term's analytic gradient against central differences on a
    seeded random volume; returns the masked maximum relative error."""
    z = _random_volume(seed, 0, dims)
    z0 = _random_volume(seed, 1, dims)
    g = _unit_interval_volume(seed, 2, dims)
    p = expit(z.data)

    uses_kinks = term in ("tv", "geodesic", "compact", "diffuse")

    def value_and_grad(vol: Volume):
        if term == "entropy":
            r = losses.entropy_term(vol)
        elif term == "tv":
            r = losses.tv_term(vol)
        elif term == "gravity":
            r = losses.gravity_term(vol)
        elif term == "geodesic":
            r = losses.geodesic_term(vol, g)
        elif term == "inflation":
            r = losses.inflation_term(vol)
        elif term == "anchor":
            r = losses.anchor_term(vol, z0)
        elif term == "compact":
            r = losses.compact_loss(vol, z0)
        elif term == "diffuse":
            r = losses.diffuse_loss(vol, z0, g)
        else:
            raise ValueError(f"unknown term {term!r}")
        return r.value, r.grad_z.data

    analytic = value_and_grad(z)[1]
    numeric = finite_diff_grad(lambda arr: value_and_grad(z.with_data(arr))[0], z.data)
    err = relative_errors(analytic, numeric)
    keep = ~tv_kink_exclusion(p) if uses_kinks else np.ones(p.shape, dtype=bool)
    checked = int(keep.sum())
    max_err = float(err[keep].max()) if checked else 0.0
    return GradCheckResult(
        term=term,
        max_rel_err=max_err,
        checked_voxels=checked,
        excluded_voxels=int((~keep).sum()),
    )


ALL_TERMS = ("entropy", "tv", "gravity", "geodesic", "inflation", "anchor", "compact", "diffuse")


def check_all(seed: int = 0, volumes: int = 20, dims=(4, 4, 4),
              terms: Sequence[str] = ALL_TERMS) -> dict[str, GradCheckResult]:
    """Worst relative error per term over ``volumes`` independent random volumes."""
    out: dict[str, GradCheckResult] = {}
    for term in terms:
        max_err = 0.0
        checked = excluded = 0
        for k in range(volumes):
            res = check_term(term, seed + 1000 * k, dims)
            max_err = max(max_err, res.max_rel_err)
            checked += res.checked_voxels
            excluded += res.excluded_voxels
        out[term] = GradCheckResult(term, max_err, checked, excluded)
    return out
