"""Synthetic scene generation for the benchmark harness.

Builds abundance maps from spatially correlated Gaussian fields, composes
scenes with two-step scaling variability or with topography-induced
variability rendered through a simplified single-scattering reflectance
model, and calibrates additive white Gaussian noise to a requested SNR
(defined on the mean squared entry of the clean image). All generators
are pure functions of their seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, HsiImage, ScalingState

__all__ = [
    "GrfSpec",
    "generate_grf_abundances",
    "TwoLmmScene",
    "generate_2lmm_scene",
    "apply_noise",
    "hapke_relative_reflectance",
    "hapke_invert",
    "Dsm",
    "HapkeGeometry",
    "dsm_to_geometry",
    "smoothed_random_dsm",
    "HapkeScene",
    "generate_hapke_scene",
    "synthetic_endmembers",
]

# Contrast applied to the standardized random fields before the softmax;
# high enough that smooth scenes contain near-pure regions for every
# material, which pixel-based extraction needs.
_FIELD_CONTRAST = 6.0


@dataclass(frozen=True)
class GrfSpec:
    """Parameters of a random abundance map: grid size, spatial correlation
    length in pixels, number of endmembers, and seed."""

    width: int
    height: int
    correlation_length: float = 15.0
    k: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.correlation_length <= 0:
            raise ValueError("correlation length must be positive")
        if self.k < 1:
            raise ValueError("endmember count must be positive")


def _smooth_field(rng: np.random.Generator, height: int, width: int, scale: float) -> np.ndarray:
    """White noise filtered with a Gaussian kernel, synthesized spectrally."""
    noise = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    transfer = np.exp(-2.0 * math.pi**2 * scale**2 * (fx**2 + fy**2))
    field = np.fft.ifft2(np.fft.fft2(noise) * transfer).real
    std = field.std()
    if std == 0.0:
        return np.zeros_like(field)
    return (field - field.mean()) / std


def generate_grf_abundances(spec: GrfSpec) -> AbundanceMatrix:
    """Spatially smooth abundance maps on the simplex.

    One Gaussian-filtered white-noise field per endmember, standardized,
    amplified, and mapped to the simplex with a per-pixel softmax. Columns
    are indexed row-major over the grid.
    """
    rng = np.random.default_rng(spec.seed)
    fields = np.stack(
        [
            _smooth_field(rng, spec.height, spec.width, spec.correlation_length).ravel()
            for _ in range(spec.k)
        ]
    )
    logits = _FIELD_CONTRAST * fields
    logits -= logits.max(axis=0, keepdims=True)
    weights = np.exp(logits)
    a = weights / weights.sum(axis=0, keepdims=True)
    return AbundanceMatrix(a, normalized=True)


@dataclass(frozen=True)
class TwoLmmScene:
    """A generated scene with two-step scaling variability.

    ``image`` is the observed (noisy) image, ``clean`` the noise-free
    composition, and ``scaling`` the drawn ground-truth factors; the noise
    realization is exactly ``image.data - clean.data``.
    """

    image: HsiImage
    clean: HsiImage
    scaling: ScalingState


def _add_noise(
    clean: np.ndarray, snr_db: float | None, rng: np.random.Generator
) -> np.ndarray:
    if snr_db is None or math.isinf(snr_db):
        return clean.copy()
    signal_power = float(np.mean(clean**2))
    noise_power = signal_power / 10.0 ** (snr_db / 10.0)
    return clean + rng.normal(0.0, math.sqrt(noise_power), size=clean.shape)


def generate_2lmm_scene(
    endmembers: EndmemberMatrix,
    abundances: AbundanceMatrix,
    s_range: tuple[float, float] = (1.0 / 3.0, 3.0),
    snr_db: float | None = 40.0,
    seed: int = 0,
    width: int = 0,
    height: int = 0,
) -> TwoLmmScene:
    """Compose a scene ``E diag(s_e) A diag(s_x)`` plus calibrated noise.

    Draws K + N scaling factors uniformly from ``s_range`` (endmember
    scales first, then pixel scales), mixes, and adds white Gaussian noise
    whose variance realizes the requested SNR. ``snr_db = None`` or ``inf``
    skips the noise entirely.
    """
    if not abundances.normalized:
        raise ValueError("ground-truth abundances must be normalized")
    if endmembers.endmember_count != abundances.endmember_count:
        raise ValueError("endmember/abundance sizes are inconsistent")
    lo, hi = s_range
    if not (0.0 < lo <= hi):
        raise ValueError("scaling range must satisfy 0 < lo <= hi")
    k = endmembers.endmember_count
    n = abundances.pixel_count
    rng = np.random.default_rng(seed)
    s_e = rng.uniform(lo, hi, size=k)
    s_x = rng.uniform(lo, hi, size=n)
    clean = (endmembers.data * s_e) @ (abundances.data * s_x)
    noisy = _add_noise(clean, snr_db, rng)
    if width == 0 and height == 0:
        width, height = n, 1
    return TwoLmmScene(
        image=HsiImage(noisy, width=width, height=height),
        clean=HsiImage(clean, width=width, height=height),
        scaling=ScalingState(s_e=s_e, s_x=s_x, lower=lo, upper=hi),
    )


def apply_noise(clean: HsiImage, snr_db: float | None, seed: int = 0) -> HsiImage:
    """Add SNR-calibrated white Gaussian noise to a clean image."""
    rng = np.random.default_rng(seed)
    noisy = _add_noise(clean.data, snr_db, rng)
    return HsiImage(noisy, width=clean.width, height=clean.height)


def hapke_relative_reflectance(w, mu, mu0):
    """Reflectance relative to a white reference panel.

    ``y = w / ((1 + 2 mu sqrt(1-w)) (1 + 2 mu0 sqrt(1-w)))`` where ``w`` is
    the single-scattering albedo in [0, 1] and ``mu``/``mu0`` are the
    cosines of the reflected/incident angles in (0, 1]. Applies
    elementwise over spectra; a perfectly white material maps to 1 for any
    geometry.
    """
    w = np.asarray(w, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("single-scattering albedo must lie in [0, 1]")
    if np.any(mu <= 0) or np.any(mu > 1) or np.any(mu0 <= 0) or np.any(mu0 > 1):
        raise ValueError("angle cosines must lie in (0, 1]")
    root = np.sqrt(1.0 - w)
    y = w / ((1.0 + 2.0 * mu * root) * (1.0 + 2.0 * mu0 * root))
    return y if y.ndim else float(y)


def hapke_invert(y, mu, mu0):
    """Recover the single-scattering albedo from relative reflectance.

    Substituting ``u = sqrt(1-w)`` turns the forward model into the
    quadratic ``(4 y mu mu0 + 1) u^2 + 2 y (mu + mu0) u + (y - 1) = 0``,
    which has exactly one root in [0, 1] for physical inputs; the albedo
    is ``1 - u^2``. Round-trips with the forward model to 1e-12.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("relative reflectance must lie in [0, 1]")
    if np.any(mu <= 0) or np.any(mu > 1) or np.any(mu0 <= 0) or np.any(mu0 > 1):
        raise ValueError("angle cosines must lie in (0, 1]")
    a = 4.0 * y * mu * mu0 + 1.0
    b = 2.0 * y * (mu + mu0)
    c = y - 1.0
    disc = b * b - 4.0 * a * c
    if np.any(disc < 0):
        raise ValueError("no physical albedo exists for these inputs")
    u = (-b + np.sqrt(disc)) / (2.0 * a)
    if np.any(u < -1e-12) or np.any(u > 1.0 + 1e-12):
        raise ValueError("no albedo root in [0, 1]; input is non-physical")
    u = np.clip(u, 0.0, 1.0)
    w = 1.0 - u * u
    return w if w.ndim else float(w)


@dataclass(frozen=True)
class Dsm:
    """Digital surface model: a height grid (meters) with square cells."""

    heights: np.ndarray
    cell_size: float = 1.0

    def __post_init__(self):
        heights = np.atleast_2d(np.asarray(self.heights, dtype=np.float64))
        if not np.all(np.isfinite(heights)):
            raise ValueError("heights must be finite")
        if self.cell_size <= 0:
            raise ValueError("cell size must be positive")
        heights = heights.copy()
        heights.flags.writeable = False
        object.__setattr__(self, "heights", heights)


@dataclass(frozen=True)
class HapkeGeometry:
    """Per-pixel view/illumination cosines derived from a surface model.

    ``mu``/``mu0`` are flattened row-major over the grid. ``shadowed``
    marks self-shadowed pixels (incidence cosine <= 0) and pixels facing
    away from the sensor; those carry no usable geometry.
    """

    mu: np.ndarray
    mu0: np.ndarray
    shadowed: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        mu0 = np.asarray(self.mu0, dtype=np.float64).ravel()
        shadowed = np.asarray(self.shadowed, dtype=bool).ravel()
        if not (mu.size == mu0.size == shadowed.size):
            raise ValueError("geometry arrays must have equal length")
        keep = ~shadowed
        if np.any(mu[keep] <= 0) or np.any(mu[keep] > 1):
            raise ValueError("retained view cosines must lie in (0, 1]")
        if np.any(mu0[keep] <= 0) or np.any(mu0[keep] > 1):
            raise ValueError("retained incidence cosines must lie in (0, 1]")
        for name, arr in (("mu", mu), ("mu0", mu0), ("shadowed", shadowed)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def pixel_count(self) -> int:
        return self.mu.size


def _unit(vec, name: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64).ravel()
    if v.size != 3 or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be a finite 3-vector")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError(f"{name} must be nonzero")
    return v / norm


def dsm_to_geometry(dsm: Dsm, sun_dir, view_dir=(0.0, 0.0, 1.0)) -> HapkeGeometry:
    """Per-cell illumination/view cosines from central-difference normals.

    The surface normal of each cell is ``(-dz/dx, -dz/dy, 1)`` normalized;
    ``mu0`` is its dot product with the sun direction (cells with
    ``mu0 <= 0`` are marked shadowed) and ``mu`` with the view direction
    (nadir by default). Grids smaller than 3x3 are rejected.
    """
    h = dsm.heights
    if h.shape[0] < 3 or h.shape[1] < 3:
        raise ValueError("surface grid must be at least 3x3")
    sun = _unit(sun_dir, "sun direction")
    view = _unit(view_dir, "view direction")
    dz_dy, dz_dx = np.gradient(h, dsm.cell_size)
    denom = np.sqrt(dz_dx**2 + dz_dy**2 + 1.0)
    nx, ny, nz = -dz_dx / denom, -dz_dy / denom, 1.0 / denom
    mu0 = nx * sun[0] + ny * sun[1] + nz * sun[2]
    mu = nx * view[0] + ny * view[1] + nz * view[2]
    shadowed = (mu0 <= 0.0) | (mu <= 0.0)
    mu = np.minimum(mu, 1.0)
    mu0 = np.minimum(mu0, 1.0)
    return HapkeGeometry(mu=mu.ravel(), mu0=mu0.ravel(), shadowed=shadowed.ravel())


def smoothed_random_dsm(
    width: int,
    height: int,
    relief: float = 30.0,
    smoothness: float = 6.0,
    cell_size: float = 10.0,
    seed: int = 0,
) -> Dsm:
    """Synthetic terrain: Gaussian-smoothed white-noise heights.

    ``relief`` sets the height standard deviation in meters and
    ``smoothness`` the correlation length in cells.
    """
    rng = np.random.default_rng(seed)
    field = _smooth_field(rng, height, width, smoothness)
    return Dsm(heights=relief * field, cell_size=cell_size)


@dataclass(frozen=True)
class HapkeScene:
    """A scene with topography-induced endmember variability.

    ``endmembers_per_pixel`` has shape (P, K, N) and holds the rendered
    endmember matrix of every pixel, for oracle evaluation.
    """

    image: HsiImage
    clean: HsiImage
    endmembers_per_pixel: np.ndarray
    geometry: HapkeGeometry


def generate_hapke_scene(
    endmembers: EndmemberMatrix,
    abundances: AbundanceMatrix,
    dsm: Dsm,
    sun_dir=(0.0, 0.0, 1.0),
    snr_db: float | None = 40.0,
    seed: int = 0,
) -> HapkeScene:
    """Render per-pixel endmembers from terrain geometry and mix them.

    The reference endmember reflectances (which must lie in [0, 1]) are
    inverted once to single-scattering albedos at the reference geometry
    ``mu = mu0 = 1``, re-rendered per pixel with the cell's cosines, and
    mixed with the ground-truth abundances; noise is SNR-calibrated. Any
    self-shadowed cell aborts generation with its indices, since clamping
    would fabricate radiometry.
    """
    if not abundances.normalized:
        raise ValueError("ground-truth abundances must be normalized")
    e0 = endmembers.data
    if np.any(e0 > 1.0):
        raise ValueError("reference reflectances must lie in [0, 1] for inversion")
    geom = dsm_to_geometry(dsm, sun_dir)
    n = abundances.pixel_count
    if geom.pixel_count != n:
        raise ValueError(
            f"surface grid has {geom.pixel_count} cells but the scene has {n} pixels"
        )
    if np.any(geom.shadowed):
        bad = np.flatnonzero(geom.shadowed)
        raise ValueError(
            f"{bad.size} pixels are self-shadowed or face away from the "
            f"sensor (first indices {bad[:8].tolist()}); choose a gentler "
            "surface or a higher sun"
        )
    albedo = hapke_invert(e0, 1.0, 1.0)
    root = np.sqrt(1.0 - albedo)[:, :, None]
    mu = geom.mu[None, None, :]
    mu0 = geom.mu0[None, None, :]
    per_pixel = albedo[:, :, None] / ((1.0 + 2.0 * mu * root) * (1.0 + 2.0 * mu0 * root))
    clean = np.einsum("pkn,kn->pn", per_pixel, abundances.data)
    rng = np.random.default_rng(seed)
    noisy = _add_noise(clean, snr_db, rng)
    height, width = dsm.heights.shape
    return HapkeScene(
        image=HsiImage(noisy, width=width, height=height),
        clean=HsiImage(clean, width=width, height=height),
        endmembers_per_pixel=per_pixel,
        geometry=geom,
    )


def synthetic_endmembers(
    bands: int,
    count: int,
    seed: int = 0,
    reflectance_range: tuple[float, float] = (0.05, 0.95),
) -> EndmemberMatrix:
    """Smooth synthetic reflectance spectra.

    Each spectrum is a gentle baseline ramp plus a few Gaussian bumps with
    random centers, widths, and signed amplitudes, then rescaled into
    ``reflectance_range`` (kept inside (0, 1) so the spectra stay in the
    invertible reflectance domain). Topography benchmarks should prefer a
    moderate ceiling: near-white materials carry almost no geometric
    signature in the relative-reflectance model.
    """
    if bands < 2 or count < 1:
        raise ValueError("need at least two bands and one endmember")
    lo, hi = reflectance_range
    if not (0.0 < lo < hi <= 1.0):
        raise ValueError("reflectance range must satisfy 0 < lo < hi <= 1")
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, bands)
    spectra = np.empty((bands, count))
    for k in range(count):
        base = rng.uniform(0.15, 0.55)
        slope = rng.uniform(-0.2, 0.2)
        curve = base + slope * grid
        for _ in range(rng.integers(3, 6)):
            center = rng.uniform(0.0, 1.0)
            sigma = rng.uniform(0.05, 0.2)
            amp = rng.uniform(-0.25, 0.35)
            curve = curve + amp * np.exp(-0.5 * ((grid - center) / sigma) ** 2)
        spectra[:, k] = np.clip(curve, lo, hi)
    span = spectra.max() - spectra.min()
    if span > 0:
        spectra = lo + (spectra - spectra.min()) / span * (hi - lo)
    return EndmemberMatrix(spectra, labels=tuple(f"material_{k}" for k in range(count)))
