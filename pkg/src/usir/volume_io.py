"""Labeled volumes, tissue property tables and pseudo-CT slices.

Volumes live on disk as two files: a small JSON header (``<name>.lmap.json``)
and a raw uint8 payload with x varying fastest. In memory the label array is
indexed ``labels[x, y, z]``; slices keep the same convention (``labels[i, j]``
for the two remaining axes, in order).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

HU_MIN = -1024.0
HU_MAX = 3071.0

_AXES = {"x": 0, "y": 1, "z": 2}


class VolumeFormatError(ValueError):
    """Raised for malformed volume headers, payloads or tissue tables."""


@dataclass(frozen=True, eq=False)
class LabelVolume:
    labels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValueError(f"labels must be a non-empty 3-D array, got shape {labels.shape}")
        if labels.dtype != np.uint8:
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise ValueError("label ids must fit in an unsigned 8-bit integer")
            labels = labels.astype(np.uint8)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.labels.shape)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class LabelSlice:
    labels: np.ndarray
    spacing: tuple[float, float]

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise ValueError(f"labels must be a non-empty 2-D array, got shape {labels.shape}")
        labels = labels.astype(np.uint8, copy=False)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 2 or not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be two positive values, got {self.spacing}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int]:
        return tuple(int(n) for n in self.labels.shape)

    @property
    def extent_mm(self) -> tuple[float, float]:
        return (self.labels.shape[0] * self.spacing[0], self.labels.shape[1] * self.spacing[1])


@dataclass(frozen=True)
class AcousticProps:
    """Per-tissue acoustic and appearance parameters.

    Units: ``c`` m/s, ``z`` MRayl, ``alpha`` dB/cm/MHz. ``mu0``/``mu1``/``sigma0``
    parametrize the scatterer field of the speckled baseline; ``echogenicity``
    is the tissue brightness of the intermediate representation and
    ``pseudo_hu`` feeds the CT-like intensity used by the edge baseline.
    """

    c: float
    z: float
    alpha: float
    mu0: float = 0.0
    mu1: float = 0.0
    sigma0: float = 0.0
    echogenicity: float = 0.0
    pseudo_hu: float = 0.0

    def __post_init__(self):
        checks = [
            ("c", self.c > 0),
            ("z", self.z > 0),
            ("alpha", self.alpha >= 0),
            ("mu0", 0 <= self.mu0 <= 1),
            ("mu1", 0 <= self.mu1 <= 1),
            ("sigma0", self.sigma0 >= 0),
            ("echogenicity", 0 <= self.echogenicity <= 1),
            ("pseudo_hu", HU_MIN <= self.pseudo_hu <= HU_MAX),
        ]
        for name, ok in checks:
            if not ok:
                raise VolumeFormatError(f"{name}={getattr(self, name)!r} is out of range")


@dataclass(frozen=True)
class TissueTable:
    entries: dict[int, AcousticProps]
    name: str = ""
    names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise VolumeFormatError("tissue table needs at least one entry")
        for label in self.entries:
            if not 0 <= int(label) <= 255:
                raise VolumeFormatError(f"label id {label} does not fit in uint8")

    def __getitem__(self, label: int) -> AcousticProps:
        return self.entries[label]

    def __contains__(self, label) -> bool:
        return int(label) in self.entries

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.entries.items()))))

    def lookup(self, attr: str, fill: float = np.nan) -> np.ndarray:
        """256-entry array of ``attr`` indexed by label id; missing ids hold ``fill``."""
        lut = np.full(256, fill, dtype=np.float64)
        for label, props in self.entries.items():
            lut[label] = getattr(props, attr)
        return lut

    def check_labels(self, labels: np.ndarray) -> None:
        present = np.flatnonzero(np.bincount(np.asarray(labels, dtype=np.uint8).ravel(), minlength=256))
        missing = [int(v) for v in present if int(v) not in self.entries]
        if missing:
            raise KeyError(f"label ids {missing} have no entry in tissue table {self.name!r}")


# -- volume files -------------------------------------------------------------

def _payload_name(header: Path) -> str:
    name = header.name
    stem = name[: -len(".lmap.json")] if name.endswith(".lmap.json") else header.stem
    return stem + ".raw"


def save_label_volume(volume: LabelVolume, path) -> None:
    path = Path(path)
    payload = _payload_name(path)
    header = {
        "dims": list(volume.dims),
        "spacing_mm": list(volume.spacing),
        "payload": payload,
        "dtype": "u8",
    }
    # x fastest: Fortran order of the [x, y, z] array
    (path.parent / payload).write_bytes(volume.labels.tobytes(order="F"))
    path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")


def load_label_volume(path) -> LabelVolume:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"volume header not found: {path}")
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
        dims = [int(n) for n in header["dims"]]
        spacing = [float(s) for s in header["spacing_mm"]]
        payload = header["payload"]
        dtype = header.get("dtype", "u8")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"malformed volume header {path}: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"malformed volume header {path}: need 3 positive dims and 3 spacings")
    if dtype != "u8":
        raise VolumeFormatError(f"unsupported dtype {dtype!r}")
    if not all(s > 0 for s in spacing):
        raise VolumeFormatError(f"non-positive spacing {spacing}")
    raw = (path.parent / payload).read_bytes()
    expected = dims[0] * dims[1] * dims[2]
    if len(raw) != expected:
        raise VolumeFormatError(f"payload length mismatch: {len(raw)} bytes, expected {expected}")
    labels = np.frombuffer(raw, dtype=np.uint8).reshape(dims, order="F")
    return LabelVolume(labels.copy(order="C"), tuple(spacing))


def extract_slice(volume: LabelVolume, axis: str, index: int) -> LabelSlice:
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    ax = _AXES[axis]
    n = volume.dims[ax]
    if not 0 <= index < n:
        raise IndexError(f"slice index {index} out of range for axis {axis} with {n} voxels")
    labels = np.take(volume.labels, index, axis=ax)
    spacing = tuple(s for i, s in enumerate(volume.spacing) if i != ax)
    return LabelSlice(np.ascontiguousarray(labels), spacing)


# -- tissue tables ------------------------------------------------------------

_REQUIRED = ("label", "name", "c", "z", "alpha", "mu0", "mu1", "sigma0", "echogenicity", "pseudo_hu")


def tissue_table_from_records(records, name: str = "") -> TissueTable:
    if not isinstance(records, list):
        raise VolumeFormatError("tissue table must be a JSON array")
    entries: dict[int, AcousticProps] = {}
    names: dict[int, str] = {}
    for rec in records:
        missing = [k for k in _REQUIRED if k not in rec]
        if missing:
            raise VolumeFormatError(f"tissue entry {rec.get('label', '?')} is missing {missing}")
        label = int(rec["label"])
        if label in entries:
            raise VolumeFormatError(f"duplicate label id {label}")
        entries[label] = AcousticProps(**{k: float(rec[k]) for k in _REQUIRED[2:]})
        names[label] = str(rec["name"])
    return TissueTable(entries, name=name, names=names)


def load_tissue_table(path) -> TissueTable:
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"tissue table {path} is not valid JSON: {exc}") from exc
    return tissue_table_from_records(records, name=path.stem)


def save_tissue_table(table: TissueTable, path) -> None:
    records = []
    for label in sorted(table.entries):
        rec = {"label": label, "name": table.names.get(label, f"tissue_{label}")}
        rec.update(asdict(table.entries[label]))
        records.append(rec)
    Path(path).write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")


def default_tissue_table() -> TissueTable:
    """Tissue table matching the phantom label scheme (ids 0-8)."""
    text = resources.files("usir.data").joinpath("tissues_default.json").read_text(encoding="utf-8")
    return tissue_table_from_records(json.loads(text), name="default")


def synth_ct_slice(slice_: LabelSlice, table: TissueTable) -> np.ndarray:
    """Pseudo-CT intensity in [0, 1], same ``[i, j]`` indexing as the slice."""
    table.check_labels(slice_.labels)
    hu = table.lookup("pseudo_hu")
    return (hu[slice_.labels] - HU_MIN) / (HU_MAX - HU_MIN)
