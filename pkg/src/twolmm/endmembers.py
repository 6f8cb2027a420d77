"""Endmember extraction and identifiability tooling.

Scaling variability moves pixels off the abundance simplex and onto a
cone, which breaks simplex-based extraction. The perspective projection
``x -> x / (x^T v)`` collapses every ray of that cone to a single point,
after which pure-pixel extraction applies again. Extraction can only ever
recover endmembers up to permutation and positive per-endmember scaling,
so :func:`match_endmembers` aligns an estimated set with a reference
before any abundance comparison, and
:func:`check_sufficiently_scattered` tests the abundance-geometry
condition under which that ambiguity is the only one left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .core import AbundanceMatrix, EndmemberMatrix, HsiImage, sad

__all__ = [
    "ProjectionSpec",
    "perspective_project",
    "vca_extract",
    "MatchResult",
    "match_endmembers",
    "align_abundances",
    "ScatterCheck",
    "check_sufficiently_scattered",
]

# A pixel is usable for projection when |x^T v| clears this fraction of
# ||v|| * max_n ||x_n||; near-orthogonal ("black") spectra blow up the
# division and must be excluded upstream.
PROJECTION_MARGIN = 1e-9


@dataclass(frozen=True)
class ProjectionSpec:
    """Projection vector for the perspective map ``x -> x / (x^T v)``."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) == 0.0:
            raise ValueError("projection vector must be finite and nonzero")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @classmethod
    def for_image(cls, image: HsiImage, v: np.ndarray | None = None) -> "ProjectionSpec":
        """Build a spec valid for ``image``, defaulting to the normalized
        mean spectrum (which maximizes the worst-case margin on
        nonnegative data)."""
        if v is None:
            mean = image.data.mean(axis=1)
            norm = np.linalg.norm(mean)
            if norm == 0.0:
                raise ValueError("cannot derive a projection vector from an all-zero image")
            v = mean / norm
        spec = cls(v=v)
        bad = _offending_pixels(image, spec)
        if bad.size:
            raise ValueError(
                f"pixels {bad[:8].tolist()} are near-orthogonal to the "
                "projection vector"
            )
        return spec


def _offending_pixels(image: HsiImage, spec: ProjectionSpec) -> np.ndarray:
    v = spec.v
    if v.size != image.band_count:
        raise ValueError("projection vector length must match the band count")
    dots = image.data.T @ v
    max_norm = float(np.linalg.norm(image.data, axis=0).max())
    threshold = PROJECTION_MARGIN * float(np.linalg.norm(v)) * max_norm
    return np.flatnonzero(np.abs(dots) <= threshold)


def perspective_project(image: HsiImage, spec: ProjectionSpec) -> HsiImage:
    """Divide every pixel by its inner product with the projection vector.

    Output pixels satisfy ``proj(x)^T v = 1``, so positively scaled copies
    of a pixel map to the same point and projecting twice is a no-op.
    Raises listing the offending pixel indices when any ``|x^T v|`` falls
    under the safety margin.
    """
    bad = _offending_pixels(image, spec)
    if bad.size:
        raise ValueError(
            f"pixels {bad[:8].tolist()} are near-orthogonal to the projection vector"
        )
    dots = image.data.T @ spec.v
    return HsiImage(image.data / dots, width=image.width, height=image.height)


def vca_extract(
    image: HsiImage, count: int, seed: int = 0
) -> tuple[EndmemberMatrix, np.ndarray]:
    """Pure-pixel extraction by successive orthogonal projections.

    Reduces the data to ``count`` dimensions with an SVD, then repeatedly
    draws a random direction orthogonal to the endmembers found so far and
    keeps the pixel with the largest absolute projection onto it. Returns
    the selected pixel spectra and their column indices; results are
    deterministic for a fixed seed. Negative noise excursions in the
    selected columns are zeroed to meet the endmember nonnegativity
    contract; the indices recover the raw columns when needed.
    """
    y = image.data
    p, n = y.shape
    if count < 1:
        raise ValueError("endmember count must be positive")
    if n < count:
        raise ValueError(f"image has {n} pixels, fewer than {count}")
    basis, sv, _ = np.linalg.svd(y, full_matrices=False)
    if count > sv.size or sv[count - 1] <= max(p, n) * np.finfo(np.float64).eps * sv[0]:
        raise ValueError(f"image rank is below the requested count {count}")
    reduced = basis[:, :count].T @ y

    if count == 1:
        indices = np.array([int(np.argmax(np.abs(reduced[0])))])
    else:
        rng = np.random.default_rng(seed)
        found = np.zeros((count, count))
        found[-1, 0] = 1.0
        picks: list[int] = []
        for i in range(count):
            while True:
                w = rng.standard_normal(count)
                f = w - found @ (np.linalg.pinv(found) @ w)
                norm = np.linalg.norm(f)
                if norm > 1e-12:
                    break
            scores = (f / norm) @ reduced
            idx = int(np.argmax(np.abs(scores)))
            picks.append(idx)
            found[:, i] = reduced[:, idx]
        indices = np.array(picks)
    return EndmemberMatrix(np.maximum(y[:, indices], 0.0)), indices


@dataclass(frozen=True)
class MatchResult:
    """Alignment of an estimated endmember set with a reference set.

    ``permutation[j]`` is the reference column matched to estimated column
    j, ``scales[j]`` the least-squares factor with
    ``est_j ~ scales[j] * ref_perm[j]``, and ``mean_sad_deg`` the mean
    spectral angle over the matched pairs.
    """

    permutation: np.ndarray
    scales: np.ndarray
    mean_sad_deg: float


def match_endmembers(estimated: EndmemberMatrix, reference: EndmemberMatrix) -> MatchResult:
    """Greedy minimum-angle assignment between two endmember sets.

    Repeatedly pairs the globally closest (estimated, reference) columns
    by spectral angle; ties resolve to the lowest indices. Every benchmark
    aligns abundances through this before computing abundance errors,
    since extraction is only identifiable up to permutation and scaling.
    """
    if estimated.endmember_count != reference.endmember_count:
        raise ValueError("endmember sets must have the same size")
    if estimated.band_count != reference.band_count:
        raise ValueError("endmember sets must share the band count")
    k = estimated.endmember_count
    angles = np.empty((k, k))
    for j in range(k):
        for i in range(k):
            angles[j, i] = sad(estimated.data[:, j], reference.data[:, i])
    perm = np.full(k, -1)
    open_cost = angles.copy()
    for _ in range(k):
        j, i = np.unravel_index(np.argmin(open_cost), open_cost.shape)
        perm[j] = i
        open_cost[j, :] = np.inf
        open_cost[:, i] = np.inf
    scales = np.empty(k)
    matched = np.empty(k)
    for j in range(k):
        ref = reference.data[:, perm[j]]
        scales[j] = float(ref @ estimated.data[:, j]) / float(ref @ ref)
        matched[j] = angles[j, perm[j]]
    return MatchResult(
        permutation=perm, scales=scales, mean_sad_deg=float(matched.mean())
    )


def align_abundances(a_est: np.ndarray, match: MatchResult) -> np.ndarray:
    """Reorder estimated abundance rows into the reference endmember order."""
    a_est = np.atleast_2d(np.asarray(a_est, dtype=np.float64))
    out = np.empty_like(a_est)
    out[match.permutation, :] = a_est
    return out


@dataclass(frozen=True)
class ScatterCheck:
    passed: bool
    witness: np.ndarray | None = None
    residual: float = 0.0


def check_sufficiently_scattered(
    abundances: AbundanceMatrix, directions: int = 500, seed: int = 0
) -> ScatterCheck:
    """Sampled necessary test of the sufficiently-scattered condition.

    Draws unit vectors on the boundary of the second-order cone inscribed
    in the simplex (``||x|| = 1``, ``x^T 1 = sqrt(K-1)``) and verifies each
    lies in the conic hull of the abundance columns via nonnegative
    least-squares feasibility (residual <= 1e-8). Failing directions
    witness that the hull does not cover the inscribed cone; passing all
    samples is necessary but not sufficient for the full condition.
    """
    k = abundances.endmember_count
    if k < 2:
        raise ValueError("the scatter condition needs at least two endmembers")
    if not abundances.normalized:
        raise ValueError("abundances must be normalized")
    cols = np.asarray(abundances.data)
    rng = np.random.default_rng(seed)
    center = math.sqrt(k - 1) / k
    radial = 1.0 / math.sqrt(k)
    for _ in range(directions):
        while True:
            g = rng.standard_normal(k)
            g -= g.mean()
            norm = np.linalg.norm(g)
            if norm > 1e-12:
                break
        x = center + radial * (g / norm)
        _, resid = scipy.optimize.nnls(cols, x)
        if resid > 1e-8:
            return ScatterCheck(passed=False, witness=x, residual=float(resid))
    return ScatterCheck(passed=True)
