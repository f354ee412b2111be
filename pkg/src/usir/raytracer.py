"""Acoustic ray marching over label slices.

Three renderers share the probe geometry:

* ``cactuss_ir``: interface echoes plus attenuated tissue brightness, the
  intermediate representation used for training.
* ``realistic_us``: interface echoes plus a speckle field (Bernoulli-Gaussian
  scatterers convolved with a separable PSF, envelope by magnitude).
* ``edge_ir``: bilateral filter and Canny edges of a pseudo-CT slice inside
  the convex sector (:func:`render_edge_ir`).

Everything is an intensity formulation. Along a ray the transmitted intensity
``T`` starts at 1, loses ``10**(-alpha*f*d/10)`` per step and ``(1 - R)`` at
every label change, where ``R = ((z2 - z1) / (z2 + z1))**2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .edges import bilateral_filter, canny
from .probe import (
    BModeImage,
    FanImage,
    ProbeConfig,
    Ray,
    elevational_fan,
    pixel_spacing,
    scan_convert,
    scanline_fan,
    sector_mask,
)
from .volume_io import LabelSlice, TissueTable

MODES = ("cactuss_ir", "realistic_us", "edge_ir")
SPEED_OF_SOUND_MM_US = 1.54  # reference c for the PSF wavelength
SPECKLE_GAIN = 16.0  # brings mean near-field speckle to the IR tissue level

# edge_ir filter settings
BILATERAL_SIGMA_SPATIAL = 2.0
BILATERAL_SIGMA_RANGE = 0.1
CANNY_SIGMA = 1.4
CANNY_LOW = 0.1
CANNY_HIGH = 0.2


@dataclass(frozen=True)
class SimConfig:
    elevational_rays: int = 10
    rf_noise: float = 0.0
    scale_exponent_1: float = 1.0
    scale_exponent_2: float = 0.2
    tgc_alpha: float = 0.65
    tgc_scale: float = 0.2
    mode: str = "cactuss_ir"
    rng_seed: int = 0
    elevational_spread: float = 2.0  # degrees, full width

    def __post_init__(self):
        if self.elevational_rays < 1:
            raise ValueError("elevational_rays must be >= 1")
        if not 0 <= self.rf_noise <= 1:
            raise ValueError("rf_noise must lie in [0, 1]")
        if self.scale_exponent_1 <= 0 or self.scale_exponent_2 <= 0:
            raise ValueError("scale exponents must be positive")
        if self.tgc_alpha < 0 or self.tgc_scale < 0:
            raise ValueError("TGC parameters must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        if self.elevational_spread < 0:
            raise ValueError("elevational_spread must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown simulation fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("elevational_rays", "rng_seed"):
            if key in d:
                d[key] = int(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class RayProfile:
    samples: np.ndarray
    depth_step: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or not np.isfinite(s).all() or (s < 0).any():
            raise ValueError("profile samples must be a finite, non-negative 1-D array")
        object.__setattr__(self, "samples", s)


# -- physics primitives -------------------------------------------------------

def reflection_coefficient(z1: float, z2: float) -> float:
    if z1 <= 0 or z2 <= 0:
        raise ValueError("acoustic impedances must be positive")
    return ((z2 - z1) / (z2 + z1)) ** 2


def attenuation_factor(alpha: float, f: float, d: float) -> float:
    """Intensity attenuation over ``d`` cm at ``f`` MHz for ``alpha`` in dB/cm/MHz."""
    if d < 0:
        raise ValueError("distance must be non-negative")
    if alpha < 0 or f <= 0:
        raise ValueError("alpha must be >= 0 and frequency > 0")
    return 10.0 ** (-alpha * f * d / 10.0)


def tgc_gain(n: int, sim: SimConfig) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    return 1.0 + sim.tgc_scale * np.expm1(sim.tgc_alpha * u)


def apply_tgc(profile: RayProfile, sim: SimConfig) -> RayProfile:
    return RayProfile(profile.samples * tgc_gain(profile.samples.size, sim), profile.depth_step)


# -- lookup tables ------------------------------------------------------------

@lru_cache(maxsize=16)
def _pair_tables(table: TissueTable, probe: ProbeConfig, exp1: float, exp2: float, tissue_term: bool):
    """Per (previous label, current label) lookup tables.

    Returns ``log_step``: log of the transmission factor from the previous
    sample to the current one (attenuation in the previous tissue times
    ``1 - R``), ``value``: the profile value divided by the transmitted
    intensity after the step, the raw ``R`` table, and the per-label tissue
    term used for the first sample (which has no interface).
    """
    z = table.lookup("z", fill=1.0)
    alpha = table.lookup("alpha", fill=0.0)
    level = table.lookup("echogenicity", fill=0.0) ** exp2 if tissue_term else np.zeros(256)
    step_cm = probe.depth_step / 10.0
    log_att = -alpha * probe.center_frequency * step_cm / 10.0 * math.log(10.0)

    z_prev, z_cur = z[:, None], z[None, :]
    refl = ((z_cur - z_prev) / (z_cur + z_prev)) ** 2
    log_step = log_att[:, None] + np.log1p(-refl)
    value = refl**exp1 / (1.0 - refl) + level[None, :]
    tables = tuple(a.ravel().copy() for a in (log_step, value, refl)) + (level.copy(),)
    for t in tables:
        t.setflags(write=False)
    return tables


# -- geometry of the sample grid ----------------------------------------------

def default_origin(slice_: LabelSlice) -> tuple[float, float]:
    """Probe placement: laterally centred on the slice, field of view starting at depth 0."""
    return (slice_.extent_mm[0] / 2.0, 0.0)


def _ray_arrays(rays: list[Ray]):
    o = np.array([r.origin for r in rays], dtype=np.float64)
    d = np.array([r.direction for r in rays], dtype=np.float64)
    planar = np.hypot(d[:, 0], d[:, 1])
    # out-of-plane travel becomes a lateral footprint offset (thin-slab model)
    nx, ny = -d[:, 1] / planar, d[:, 0] / planar
    step_x = d[:, 0] + d[:, 2] * nx
    step_y = d[:, 1] + d[:, 2] * ny
    return o, step_x, step_y


def _sample_indices(shape, spacing, rays: list[Ray], probe: ProbeConfig):
    """Flat voxel index and in-slice flag for every (ray, sample)."""
    n = probe.axial_resolution
    s = np.arange(n) * probe.depth_step
    o, step_x, step_y = _ray_arrays(rays)
    x = o[:, 0:1] + step_x[:, None] * s
    y = o[:, 1:2] + step_y[:, None] * s
    nx, ny = shape
    x /= spacing[0]
    y /= spacing[1]
    inside = (x >= 0) & (x < nx) & (y >= 0) & (y < ny)
    # once a ray leaves the slice it stays dead
    alive = np.logical_and.accumulate(inside, axis=1)
    ix = np.clip(x, 0, nx - 1).astype(np.int32)
    iy = np.clip(y, 0, ny - 1).astype(np.int32)
    flat = ix * ny + iy
    return flat, alive


@lru_cache(maxsize=8)
def _render_grid(shape, spacing, probe: ProbeConfig, count: int, spread: float, origin):
    rays = [er for r in scanline_fan(probe, origin) for er in elevational_fan(r, count, spread)]
    flat, alive = _sample_indices(shape, spacing, rays, probe)
    flat.setflags(write=False)
    alive.setflags(write=False)
    return flat, alive


def _march(labels: np.ndarray, alive: np.ndarray, tables):
    """Profiles and transmitted intensity for a batch of label sequences."""
    log_step, value, _, level = tables
    pair = labels[:, :-1].astype(np.uint16) << 8
    pair |= labels[:, 1:]
    transmitted = np.empty(labels.shape, dtype=np.float64)
    transmitted[:, 0] = 1.0
    np.cumsum(log_step[pair], axis=1, out=transmitted[:, 1:])
    np.exp(transmitted[:, 1:], out=transmitted[:, 1:])
    transmitted *= alive
    profile = np.empty_like(transmitted)
    profile[:, 0] = level[labels[:, 0]]
    profile[:, 1:] = value[pair]
    profile *= transmitted
    return profile, transmitted


def sample_labels(slice_: LabelSlice, rays: list[Ray], probe: ProbeConfig):
    """Nearest-voxel label under each sample of each ray, plus the in-slice flag."""
    flat, alive = _sample_indices(slice_.labels.shape, slice_.spacing, rays, probe)
    return slice_.labels.ravel()[flat], alive


def march_ray(slice_: LabelSlice, table: TissueTable, ray: Ray, probe: ProbeConfig, sim: SimConfig, trace: bool = False):
    """March one ray; returns a :class:`RayProfile` (and a per-step trace if asked).

    The trace holds, per sample, the incident intensity reaching the sample,
    the reflected intensity ``R * incident``, the transmitted intensity
    ``(1 - R) * incident``, ``R`` itself and the label.
    """
    table.check_labels(slice_.labels)
    labels, alive = sample_labels(slice_, [ray], probe)
    tables = _pair_tables(table, probe, sim.scale_exponent_1, sim.scale_exponent_2, sim.mode == "cactuss_ir")
    profile, transmitted = _march(labels, alive, tables)
    out = RayProfile(profile[0], probe.depth_step)
    if not trace:
        return out
    refl = np.zeros(probe.axial_resolution)
    pair = labels[0, :-1].astype(np.intp) * 256 + labels[0, 1:]
    refl[1:] = tables[2][pair]
    incident = np.divide(transmitted[0], 1.0 - refl)
    return out, {
        "labels": labels[0],
        "reflection": refl,
        "incident": incident,
        "echo": refl * incident,
        "transmitted": (1.0 - refl) * incident,
        "alive": alive[0],
    }


# -- full frames --------------------------------------------------------------

_SPECKLE_STREAM, _NOISE_STREAM = 0, 1


def _line_rng(sim: SimConfig, frame: int, line: int, stream: int) -> np.random.Generator:
    """Independent generator per (frame, scan line, purpose); order of evaluation is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence([sim.rng_seed, frame, line, stream]))


def _speckle(labels, transmitted, table: TissueTable, probe: ProbeConfig, sim: SimConfig, frame: int):
    """Envelope of PSF-convolved scatterers, shape (scan_lines, samples)."""
    n_lines, n = probe.scan_lines, probe.axial_resolution
    count = labels.shape[0] // n_lines
    mu0, mu1, sigma0 = (table.lookup(k, fill=0.0) for k in ("mu0", "mu1", "sigma0"))
    labels = labels.reshape(n_lines, count, n)
    field = np.empty((n_lines, count, n))
    for line in range(n_lines):
        rng = _line_rng(sim, frame, line, _SPECKLE_STREAM)
        lab = labels[line]
        hit = rng.random(lab.shape) < mu0[lab]
        field[line] = hit * rng.normal(mu1[lab], sigma0[lab])
    field = (field * transmitted.reshape(n_lines, count, n)).mean(axis=1)

    wavelength = SPEED_OF_SOUND_MM_US / probe.center_frequency
    step = probe.depth_step
    sigma_ax = 0.5 * wavelength / step
    half = int(math.ceil(4 * sigma_ax))
    t = np.arange(-half, half + 1)
    cycles = 2.0 * step / wavelength  # pulse-echo cycles per sample
    kernel = np.exp(-0.5 * (t / sigma_ax) ** 2) * np.exp(2j * math.pi * cycles * t)
    kernel /= np.sqrt(np.sum(np.abs(kernel) ** 2))
    re = ndimage.convolve1d(field, kernel.real, axis=1, mode="constant")
    im = ndimage.convolve1d(field, kernel.imag, axis=1, mode="constant")

    # beam width at focus ~ wavelength * f-number, in units of line spacing there
    f_number = probe.focus_depth / probe.probe_width
    line_gap = (probe.face_radius + probe.focus_depth) * probe.angle_rad / (probe.scan_lines - 1)
    sigma_lat = max(0.5, wavelength * f_number / line_gap)
    re = ndimage.gaussian_filter1d(re, sigma_lat, axis=0, mode="constant")
    im = ndimage.gaussian_filter1d(im, sigma_lat, axis=0, mode="constant")
    return SPECKLE_GAIN * np.hypot(re, im)


def render_fan(
    slice_: LabelSlice,
    table: TissueTable,
    probe: ProbeConfig,
    sim: SimConfig,
    frame: int = 0,
    origin: tuple[float, float] | None = None,
) -> FanImage:
    """Fan-space frame before the output clamp."""
    if sim.mode not in ("cactuss_ir", "realistic_us"):
        raise ValueError(f"render handles cactuss_ir and realistic_us, not {sim.mode!r}")
    table.check_labels(slice_.labels)
    if origin is None:
        origin = default_origin(slice_)
    flat, alive = _render_grid(
        slice_.labels.shape, slice_.spacing, probe, sim.elevational_rays, sim.elevational_spread, tuple(origin)
    )
    labels = slice_.labels.ravel()[flat]
    tables = _pair_tables(table, probe, sim.scale_exponent_1, sim.scale_exponent_2, sim.mode == "cactuss_ir")
    profile, transmitted = _march(labels, alive, tables)
    n_lines, n = probe.scan_lines, probe.axial_resolution
    fan = profile.reshape(n_lines, -1, n).mean(axis=1)
    if sim.mode == "realistic_us":
        fan += _speckle(labels, transmitted, table, probe, sim, frame)
    fan *= tgc_gain(n, sim)
    if sim.rf_noise > 0:
        for line in range(n_lines):
            rng = _line_rng(sim, frame, line, _NOISE_STREAM)
            fan[line] += sim.rf_noise * rng.random(n)
    return FanImage(fan, probe)


def render(
    slice_: LabelSlice,
    table: TissueTable,
    probe: ProbeConfig,
    sim: SimConfig,
    out_size: tuple[int, int] = (256, 256),
    frame: int = 0,
    origin: tuple[float, float] | None = None,
) -> BModeImage:
    fan = render_fan(slice_, table, probe, sim, frame=frame, origin=origin)
    np.minimum(fan.data, 1.0, out=fan.data)
    return scan_convert(fan, out_size)


def resample_to_sector(image: np.ndarray, spacing, probe: ProbeConfig, out_size, origin=None, order: int = 1) -> np.ndarray:
    """Sample a slice-frame array (indexed ``[x, y]``) on the Cartesian output grid."""
    w, h = out_size
    sp = pixel_spacing(probe, out_size)
    if origin is None:
        origin = (image.shape[0] * spacing[0] / 2.0, 0.0)
    x = origin[0] + (np.arange(w) + 0.5 - w / 2) * sp
    y = origin[1] + (np.arange(h) + 0.5) * sp
    yy, xx = np.meshgrid(y, x, indexing="ij")
    coords = [xx / spacing[0] - 0.5, yy / spacing[1] - 0.5]
    return ndimage.map_coordinates(np.asarray(image, dtype=np.float64), coords, order=order, mode="nearest")


def render_edge_ir(
    ct_slice: np.ndarray,
    probe: ProbeConfig,
    out_size: tuple[int, int] = (256, 256),
    spacing: tuple[float, float] = (1.0, 1.0),
    origin: tuple[float, float] | None = None,
) -> BModeImage:
    """Edge representation of a pseudo-CT slice.

    ``ct_slice`` is indexed ``[x, y]`` like a :class:`LabelSlice`, with values
    in [0, 1] and pixel ``spacing`` in mm. It is resampled onto the output grid,
    bilateral filtered, edge detected, then cut to the convex sector.
    """
    ct = np.asarray(ct_slice, dtype=np.float64)
    if ct.size and (ct.min() < 0 or ct.max() > 1):
        raise ValueError("CT slice intensities must lie in [0, 1]")
    img = resample_to_sector(ct, spacing, probe, out_size, origin)
    smoothed = bilateral_filter(img, BILATERAL_SIGMA_SPATIAL, BILATERAL_SIGMA_RANGE)
    edges = canny(smoothed, CANNY_SIGMA, CANNY_LOW, CANNY_HIGH)
    mask = sector_mask(probe, out_size)
    return BModeImage(edges.astype(np.float64) * mask, mask.copy(), pixel_spacing(probe, out_size))


def render_frame(slice_, table, probe, sim, out_size=(256, 256), frame=0, origin=None) -> BModeImage:
    """Dispatch on ``sim.mode``; the edge mode renders the slice's pseudo-CT."""
    if sim.mode == "edge_ir":
        from .volume_io import synth_ct_slice

        return render_edge_ir(synth_ct_slice(slice_, table), probe, out_size, slice_.spacing, origin)
    return render(slice_, table, probe, sim, out_size, frame=frame, origin=origin)


def label_fan(slice_: LabelSlice, probe: ProbeConfig, origin=None) -> np.ndarray:
    """Labels under the in-plane scan lines, shape (scan_lines, samples); 0 outside the slice."""
    if origin is None:
        origin = default_origin(slice_)
    flat, alive = _render_grid(slice_.labels.shape, slice_.spacing, probe, 1, 0.0, tuple(origin))
    return np.where(alive, slice_.labels.ravel()[flat], 0)
