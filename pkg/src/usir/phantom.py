"""Procedural abdominal label volumes with a parametric aorta."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .metrics import SegMask
from .volume_io import LabelVolume, extract_slice

WALL_THICKNESS_MM = 1.5


class Tissue(IntEnum):
    GEL = 0
    SKIN = 1
    FAT = 2
    MUSCLE = 3
    BONE = 4
    LUNG = 5
    LIVER = 6
    BLOOD = 7
    VESSEL_WALL = 8


AORTA_LABEL = int(Tissue.BLOOD)


@dataclass(frozen=True)
class AortaSpec:
    center: tuple[float, float] = (64.0, 52.0)  # (x, y) mm; y is depth below the skin
    diameter: float = 20.0
    axis: str = "z"


@dataclass(frozen=True)
class VertebraSpec:
    center: tuple[float, float] = (64.0, 82.0)
    radius: float = 14.0
    present: bool = True


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (256, 256, 48)
    spacing: tuple[float, float, float] = (0.5, 0.5, 0.5)
    layer_thicknesses: tuple[float, float, float] = (2.0, 10.0, 8.0)  # skin, fat, muscle (mm)
    aorta: AortaSpec = field(default_factory=AortaSpec)
    vertebra: VertebraSpec = field(default_factory=VertebraSpec)
    rng_seed: int = 0
    perturbation: float = 0.0

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.dims, self.spacing))

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive counts, got {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if len(self.layer_thicknesses) != 3 or min(self.layer_thicknesses) < 0:
            raise ValueError("layer thicknesses must be three non-negative values")
        if self.perturbation < 0:
            raise ValueError("perturbation must be >= 0")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        width, depth, _ = self.extent_mm
        if sum(self.layer_thicknesses) + self.perturbation >= depth:
            raise ValueError("body wall layers do not fit inside the volume depth")
        a = self.aorta
        if a.axis != "z":
            raise ValueError(f"only a z-aligned aorta is supported, got axis {a.axis!r}")
        if a.diameter <= 0:
            raise ValueError("aorta diameter must be positive")
        outer = a.diameter / 2 + WALL_THICKNESS_MM
        cx, cy = a.center
        if cx - outer < 0 or cx + outer > width or cy - outer < 0 or cy + outer > depth:
            raise ValueError(f"aorta (center {a.center}, diameter {a.diameter}) does not lie inside the volume")
        v = self.vertebra
        if v.present and v.radius <= 0:
            raise ValueError("vertebra radius must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["spacing"] = list(self.spacing)
        d["layer_thicknesses"] = dict(zip(("skin", "fat", "muscle"), self.layer_thicknesses))
        d["aorta"]["center"] = list(self.aorta.center)
        d["vertebra"]["center"] = list(self.vertebra.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        kw = {}
        if "dims" in d:
            kw["dims"] = tuple(int(n) for n in d["dims"])
        if "spacing" in d:
            kw["spacing"] = tuple(float(s) for s in d["spacing"])
        if "layer_thicknesses" in d:
            lt = d["layer_thicknesses"]
            if isinstance(lt, dict):
                lt = (lt.get("skin", 0.0), lt.get("fat", 0.0), lt.get("muscle", 0.0))
            kw["layer_thicknesses"] = tuple(float(t) for t in lt)
        if "aorta" in d:
            a = dict(d["aorta"])
            if "center" in a:
                a["center"] = tuple(float(c) for c in a["center"][:2])
            kw["aorta"] = AortaSpec(**a)
        if "vertebra" in d:
            v = dict(d["vertebra"])
            if "center" in v:
                v["center"] = tuple(float(c) for c in v["center"][:2])
            kw["vertebra"] = VertebraSpec(**v)
        if "rng_seed" in d:
            kw["rng_seed"] = int(d["rng_seed"])
        if "perturbation" in d:
            kw["perturbation"] = float(d["perturbation"])
        unknown = set(d) - {"dims", "spacing", "layer_thicknesses", "aorta", "vertebra", "rng_seed", "perturbation"}
        if unknown:
            raise ValueError(f"unknown phantom spec fields: {sorted(unknown)}")
        return cls(**kw)


def load_phantom_spec(path) -> PhantomSpec:
    return PhantomSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _smooth_field(rng, x, z, width, length, amplitude, terms=3):
    """Low-frequency sum of sines over (x, z) bounded by ``amplitude``."""
    weights = rng.uniform(0.5, 1.0, terms)
    weights = weights / weights.sum()
    out = 0.0
    for w in weights:
        fx, fz = rng.integers(1, 3, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        out = out + w * np.sin(2 * math.pi * (fx * x / width + fz * z / length) + phase)
    return amplitude * out


def generate_phantom(spec: PhantomSpec) -> LabelVolume:
    spec.validate()
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    width, depth, length = spec.extent_mm
    rng = np.random.default_rng(spec.rng_seed)
    amp = spec.perturbation

    # voxel centers in mm
    x = ((np.arange(nx) + 0.5) * sx)[:, None, None]
    y = ((np.arange(ny) + 0.5) * sy)[None, :, None]
    z = ((np.arange(nz) + 0.5) * sz)[None, None, :]

    labels = np.full(spec.dims, Tissue.LIVER, dtype=np.uint8)

    v = spec.vertebra
    if v.present:
        vx, vy = v.center
        paraspinal = (y > vy) & (np.abs(x - vx) < 2.5 * v.radius)
        labels[np.broadcast_to(paraspinal, labels.shape)] = Tissue.MUSCLE

    # lungs only reach into the cranial quarter of the volume
    cranial = z > 0.75 * length
    for lx in (0.15 * width, 0.85 * width):
        lung = ((x - lx) / (0.13 * width)) ** 2 + ((y - 0.8 * depth) / (0.16 * depth)) ** 2 <= 1.0
        labels[lung & cranial] = Tissue.LUNG

    if v.present:
        vx, vy = v.center
        dx, dy = x - vx, y - vy
        theta = np.arctan2(dy, dx)
        radius = v.radius
        if amp > 0:
            wobble = 0.0
            weights = rng.uniform(0.5, 1.0, 3)
            weights /= weights.sum()
            for k, w in zip((2, 3, 4), weights):
                wobble = wobble + w * np.sin(k * theta + rng.uniform(0, 2 * math.pi))
            radius = radius + amp * wobble
        labels[np.broadcast_to(np.hypot(dx, dy) <= radius, labels.shape)] = Tissue.BONE

    ax, ay = spec.aorta.center
    r_lumen = spec.aorta.diameter / 2
    rho = np.hypot(x - ax, y - ay)
    rho = np.broadcast_to(rho, labels.shape)
    labels[rho <= r_lumen + WALL_THICKNESS_MM] = Tissue.VESSEL_WALL
    labels[rho <= r_lumen] = Tissue.BLOOD

    # body wall, painted last so it stays anterior
    boundary = 0.0
    for tissue, thickness in zip((Tissue.SKIN, Tissue.FAT, Tissue.MUSCLE), spec.layer_thicknesses):
        boundary = boundary + thickness
        if thickness <= 0:
            continue
        edge = boundary
        if amp > 0:
            edge = boundary + _smooth_field(rng, x, z, width, length, amp)
        layer = np.broadcast_to(y < edge, labels.shape)
        labels[layer & (labels > tissue)] = tissue
    return LabelVolume(labels, spec.spacing)


def aorta_mask_slice(volume: LabelVolume, axis: str, index: int, label: int = AORTA_LABEL) -> SegMask:
    """Binary aorta mask of one slice, as an image (rows follow the depth axis)."""
    sl = extract_slice(volume, axis, index)
    pixels = (sl.labels == label).T.astype(np.uint8)
    return SegMask(pixels, sl.spacing[1])
