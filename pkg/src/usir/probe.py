"""Convex probe geometry and fan-to-Cartesian scan conversion.

Frame conventions (mm): ``x`` is lateral, ``y`` is depth and grows away from
the probe, ``z`` is elevation (out of the imaging plane). The virtual apex of
the convex array sits above the image; the face is an arc of radius
``r0 = probe_width / angle`` (width taken as arc length). The top of the field
of view is the height of the two outermost element positions, so the centre of
the face protrudes ``r0 * (1 - cos(angle / 2))`` below it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ProbeConfig:
    probe_width: float = 59.0  # mm, arc length of the face
    probe_angle: float = 40.0  # degrees
    image_depth: float = 100.0  # mm
    focus_depth: float = 50.0  # mm
    scan_lines: int = 196
    axial_resolution: int = 1024
    center_frequency: float = 3.5  # MHz

    def __post_init__(self):
        for name in ("probe_width", "image_depth", "focus_depth", "center_frequency"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.probe_angle < 180:
            raise ValueError("probe_angle must lie in (0, 180) degrees")
        if self.scan_lines < 2:
            raise ValueError("need at least two scan lines")
        if self.axial_resolution < 1:
            raise ValueError("axial_resolution must be positive")

    @property
    def angle_rad(self) -> float:
        return math.radians(self.probe_angle)

    @property
    def face_radius(self) -> float:
        return self.probe_width / self.angle_rad

    @property
    def depth_step(self) -> float:
        return self.image_depth / self.axial_resolution

    @property
    def face_drop(self) -> float:
        """Height difference between the face centre and its outermost elements."""
        return self.face_radius * (1.0 - math.cos(self.angle_rad / 2))

    @property
    def line_angles(self) -> np.ndarray:
        half = self.angle_rad / 2
        k = np.arange(self.scan_lines)
        return -half + k * (self.angle_rad / (self.scan_lines - 1))

    def to_dict(self) -> dict:
        return {
            "probe_width": self.probe_width,
            "probe_angle": self.probe_angle,
            "image_depth": self.image_depth,
            "focus_depth": self.focus_depth,
            "scan_lines": self.scan_lines,
            "axial_resolution": self.axial_resolution,
            "center_frequency_mhz": self.center_frequency,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeConfig":
        d = dict(d)
        if "center_frequency_mhz" in d:
            d["center_frequency"] = d.pop("center_frequency_mhz")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown probe fields: {sorted(unknown)}")
        for key in ("scan_lines", "axial_resolution"):
            if key in d:
                d[key] = int(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ProbeConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float]
    direction: tuple[float, float, float]
    max_length: float

    def __post_init__(self):
        d = tuple(float(c) for c in self.direction)
        if len(d) == 2:
            d = d + (0.0,)
        if abs(math.sqrt(sum(c * c for c in d)) - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be a unit vector, got {d}")
        if not self.max_length > 0:
            raise ValueError("ray max_length must be positive")
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True, eq=False)
class FanImage:
    data: np.ndarray  # (scan_lines, axial_resolution)
    probe: ProbeConfig

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        expected = (self.probe.scan_lines, self.probe.axial_resolution)
        if data.shape != expected:
            raise ValueError(f"fan data shape {data.shape} does not match probe {expected}")
        if not np.isfinite(data).all() or (data < 0).any():
            raise ValueError("fan intensities must be finite and non-negative")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class BModeImage:
    """Scan-converted image; ``pixels`` and ``mask`` are ``(h, w)`` arrays."""

    pixels: np.ndarray
    mask: np.ndarray
    spacing: float

    def __post_init__(self):
        if self.pixels.shape != self.mask.shape:
            raise ValueError("pixels and mask shapes differ")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if np.any(self.pixels[~self.mask.astype(bool)] != 0):
            raise ValueError("pixels outside the sector mask must be zero")

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.pixels.shape
        return w, h


def scanline_fan(probe: ProbeConfig, origin: tuple[float, float] = (0.0, 0.0)) -> list[Ray]:
    """One ray per scan line.

    ``origin`` is the (x, y) position of the top-centre of the field of view
    in the caller's frame.
    """
    apex_x, apex_y = _apex(probe, origin)
    r0 = probe.face_radius
    rays = []
    for phi in probe.line_angles:
        s, c = math.sin(phi), math.cos(phi)
        rays.append(Ray((apex_x + r0 * s, apex_y + r0 * c), (s, c, 0.0), probe.image_depth))
    return rays


def _apex(probe: ProbeConfig, origin) -> tuple[float, float]:
    return origin[0], origin[1] - probe.face_radius * math.cos(probe.angle_rad / 2)


def elevational_fan(ray: Ray, count: int, spread_deg: float = 2.0) -> list[Ray]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if spread_deg < 0:
        raise ValueError("spread must be >= 0")
    if count == 1:
        return [ray]
    d = np.array(ray.direction)
    # unit vector in the elevation direction, orthogonal to the ray
    e = np.array([0.0, 0.0, 1.0]) - d[2] * d
    e /= np.linalg.norm(e)
    half = math.radians(spread_deg) / 2
    out = []
    for tilt in np.linspace(-half, half, count):
        nd = math.cos(tilt) * d + math.sin(tilt) * e
        out.append(Ray(ray.origin, tuple(nd / np.linalg.norm(nd)), ray.max_length))
    return out


def pixel_spacing(probe: ProbeConfig, out_size: tuple[int, int]) -> float:
    _, h = out_size
    return (probe.image_depth + probe.face_drop) / h


@lru_cache(maxsize=32)
def _sector_geometry(probe: ProbeConfig, w: int, h: int):
    """Fan coordinates (line, sample) of every output pixel and the sector mask."""
    sp = pixel_spacing(probe, (w, h))
    r0 = probe.face_radius
    half = probe.angle_rad / 2
    x = (np.arange(w) + 0.5 - w / 2) * sp
    y = (np.arange(h) + 0.5) * sp + r0 * math.cos(half)
    xx, yy = np.meshgrid(x, y)
    rho = np.hypot(xx, yy)
    phi = np.arctan2(xx, yy)
    depth = rho - r0
    mask = (np.abs(phi) <= half) & (depth >= 0) & (depth <= probe.image_depth)
    u = (phi + half) / (probe.angle_rad / (probe.scan_lines - 1))
    v = depth / probe.depth_step
    u = np.clip(u, 0, probe.scan_lines - 1)[mask]
    v = np.clip(v, 0, probe.axial_resolution - 1)[mask]
    for arr in (mask, u, v):
        arr.setflags(write=False)
    return sp, mask, u, v


def sector_mask(probe: ProbeConfig, out_size: tuple[int, int]) -> np.ndarray:
    w, h = out_size
    return _sector_geometry(probe, int(w), int(h))[1]


def fan_coordinates(probe: ProbeConfig, out_size: tuple[int, int]):
    """``(mask, line, sample)`` fractional fan coordinates of the in-sector pixels."""
    w, h = out_size
    _, mask, u, v = _sector_geometry(probe, int(w), int(h))
    return mask, u, v


def scan_convert(fan: FanImage, out_size: tuple[int, int], nearest: bool = False) -> BModeImage:
    w, h = out_size
    if w < 2 or h < 2:
        raise ValueError("output must be at least 2x2")
    probe = fan.probe
    sp, mask, u, v = _sector_geometry(probe, int(w), int(h))
    data = fan.data
    if nearest:
        vals = data[np.rint(u).astype(np.intp), np.rint(v).astype(np.intp)]
    else:
        u0 = np.minimum(u.astype(np.intp), probe.scan_lines - 2)
        v0 = np.minimum(v.astype(np.intp), max(probe.axial_resolution - 2, 0))
        fu = u - u0
        v1 = np.minimum(v0 + 1, probe.axial_resolution - 1)
        fv = v - v0 if probe.axial_resolution > 1 else np.zeros_like(v)
        top = data[u0, v0] * (1 - fv) + data[u0, v1] * fv
        bottom = data[u0 + 1, v0] * (1 - fv) + data[u0 + 1, v1] * fv
        vals = top * (1 - fu) + bottom * fu
    pixels = np.zeros((h, w), dtype=np.float64)
    pixels[mask] = vals
    return BModeImage(pixels, mask.copy(), sp)
