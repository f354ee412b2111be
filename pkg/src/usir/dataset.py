"""Batch generation of image/mask pairs, augmentation, splitting and evaluation."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .metrics import DiameterReport, SegMask, diameter_mae
from .phantom import AORTA_LABEL, PhantomSpec, generate_phantom
from .probe import BModeImage, FanImage, ProbeConfig, scan_convert
from .raytracer import SimConfig, label_fan, render_frame
from .volume_io import LabelVolume, TissueTable, default_tissue_table, extract_slice, load_label_volume, load_tissue_table

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 10.0
    translation_frac: float = 0.0625
    scale_range: tuple[float, float] = (0.9, 1.1)
    noise_sd: float = 0.02
    enabled: bool = True

    def __post_init__(self):
        lo, hi = self.scale_range
        if self.rotation_deg < 0 or self.translation_frac < 0 or self.noise_sd < 0:
            raise ValueError("augmentation bounds must be >= 0")
        if not 0 < lo <= hi:
            raise ValueError("scale_range must be ordered and positive")

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        d = dict(d)
        if "scale_range" in d:
            d["scale_range"] = tuple(float(s) for s in d["scale_range"])
        return cls(**d)


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    shift: tuple[float, float] = (0.0, 0.0)  # (rows, cols) in pixels
    scale: float = 1.0

    @property
    def is_identity(self) -> bool:
        return self.rotation_deg == 0 and self.shift == (0.0, 0.0) and self.scale == 1.0


def draw_augment_params(cfg: AugmentConfig, rng: np.random.Generator, size: tuple[int, int]) -> AugmentParams:
    w, h = size
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    shift = rng.uniform(-cfg.translation_frac, cfg.translation_frac, 2) * (h, w)
    scale = rng.uniform(*cfg.scale_range)
    return AugmentParams(float(angle), (float(shift[0]), float(shift[1])), float(scale))


def _warp(arr: np.ndarray, params: AugmentParams, order: int) -> np.ndarray:
    h, w = arr.shape
    theta = math.radians(params.rotation_deg)
    c, s = math.cos(theta), math.sin(theta)
    # output -> input mapping of a rotation/scale about the centre followed by a shift
    inv = np.array([[c, s], [-s, c]]) / params.scale
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - inv @ (center + np.asarray(params.shift))
    return ndimage.affine_transform(arr, inv, offset=offset, order=order, mode="constant", cval=0.0)


def apply_augment(image: BModeImage, mask: SegMask, params: AugmentParams, noise_sd: float = 0.0, rng=None):
    if image.pixels.shape != mask.shape:
        raise ValueError("image and mask sizes differ")
    if params.is_identity:
        pixels, sector, seg = image.pixels.copy(), image.mask.copy(), mask.pixels.copy()
    else:
        sector = _warp(image.mask.astype(np.uint8), params, order=0).astype(bool)
        pixels = _warp(image.pixels, params, order=1)
        seg = _warp(mask.pixels, params, order=0)
    if noise_sd > 0:
        if rng is None:
            raise ValueError("noise requires a random generator")
        pixels = pixels + rng.normal(0.0, noise_sd, pixels.shape)
    pixels = np.clip(pixels, 0.0, 1.0) * sector
    return BModeImage(pixels, sector, image.spacing), SegMask(seg, mask.spacing)


def augment_pair(image: BModeImage, mask: SegMask, cfg: AugmentConfig, seed: int):
    """One random rotation/translation/scale for both, noise on the image only."""
    if not cfg.enabled:
        return image, mask
    rng = np.random.default_rng(seed)
    params = draw_augment_params(cfg, rng, image.size)
    return apply_augment(image, mask, params, cfg.noise_sd, rng)


# -- dataset configuration ------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    sources: tuple = ()
    frames: int = 5000
    out_size: tuple[int, int] = (256, 256)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(enabled=False))
    split_ratio: float = 0.8
    master_seed: int = 0
    tissues: str | None = None  # tissue table path; default table when unset

    def __post_init__(self):
        if not self.sources:
            raise ValueError("dataset needs at least one source")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "DatasetConfig":
        d = dict(d)
        sources = []
        for src in d.pop("sources"):
            if isinstance(src, str) and base_dir is not None and not Path(src).is_absolute():
                src = str(Path(base_dir) / src)
            sources.append(src if isinstance(src, str) else PhantomSpec.from_dict(src))
        kw = {"sources": tuple(sources)}
        if "probe" in d:
            kw["probe"] = ProbeConfig.from_dict(d.pop("probe"))
        if "sim" in d:
            kw["sim"] = SimConfig.from_dict(d.pop("sim"))
        if "augment" in d:
            kw["augment"] = AugmentConfig.from_dict(d.pop("augment"))
        if "out_size" in d:
            kw["out_size"] = tuple(int(n) for n in d.pop("out_size"))
        if d.get("tissues") and base_dir is not None and not Path(d["tissues"]).is_absolute():
            d["tissues"] = str(Path(base_dir) / d["tissues"])
        kw.update(d)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "DatasetConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)


def entry_seed(master_seed: int, index: int) -> int:
    """Per-entry 64-bit seed; independent of generation order."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, dtype=np.uint64)[0])


# -- rendering one entry ----------------------------------------------------------

_SOURCE_CACHE: dict = {}


def _load_source(src) -> LabelVolume:
    key = src if isinstance(src, str) else json.dumps(src.to_dict(), sort_keys=True)
    if key not in _SOURCE_CACHE:
        if isinstance(src, str):
            _SOURCE_CACHE[key] = load_label_volume(src)
        else:
            _SOURCE_CACHE[key] = generate_phantom(src)
    return _SOURCE_CACHE[key]


def _source_name(src) -> str:
    return src if isinstance(src, str) else f"phantom:{src.rng_seed}"


def mask_image(slice_, probe: ProbeConfig, out_size, label: int = AORTA_LABEL) -> SegMask:
    """Aorta mask in the rendered image frame (nearest-neighbour scan conversion)."""
    fan = FanImage((label_fan(slice_, probe) == label).astype(np.float64), probe)
    converted = scan_convert(fan, out_size, nearest=True)
    return SegMask(converted.pixels.astype(np.uint8), converted.spacing)


def render_entry(config: DatasetConfig, table: TissueTable, index: int):
    seed = entry_seed(config.master_seed, index)
    rng = np.random.default_rng(seed)
    src_idx = int(rng.integers(len(config.sources)))
    src = config.sources[src_idx]
    volume = _load_source(src)
    z = int(rng.integers(volume.dims[2]))
    sl = extract_slice(volume, "z", z)
    sim = replace(config.sim, rng_seed=seed)
    try:
        image = render_frame(sl, table, config.probe, sim, config.out_size, frame=index)
    except Exception as exc:
        raise RuntimeError(f"entry {index} ({_source_name(src)}, z={z}): {exc}") from exc
    mask = mask_image(sl, config.probe, config.out_size)
    applied = None
    if config.augment.enabled:
        aug_seed = int(rng.integers(2**63))
        image, mask = augment_pair(image, mask, config.augment, aug_seed)
        applied = asdict(draw_augment_params(config.augment, np.random.default_rng(aug_seed), image.size))
    entry = {
        "id": index,
        "source": _source_name(src),
        "axis": "z",
        "index": z,
        "seed": seed,
        "augment": applied,
    }
    return entry, image, mask


def to_png_array(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(x: np.ndarray, path) -> None:
    Image.fromarray(to_png_array(x)).save(path, format="PNG")


_WORKER: dict = {}


def _init_worker(config: DatasetConfig, out_dir: str):
    _WORKER["config"] = config
    _WORKER["out_dir"] = Path(out_dir)
    _WORKER["table"] = load_tissue_table(config.tissues) if config.tissues else default_tissue_table()


def _job(index: int) -> dict:
    config, out_dir = _WORKER["config"], _WORKER["out_dir"]
    entry, image, mask = render_entry(config, _WORKER["table"], index)
    name = f"{index:05d}.png"
    save_png(image.pixels, out_dir / "images" / name)
    save_png(mask.pixels.astype(np.float64), out_dir / "masks" / name)
    entry["image"] = f"images/{name}"
    entry["mask"] = f"masks/{name}"
    return entry


def generate_dataset(config: DatasetConfig, out_dir, workers: int = 1) -> list[dict]:
    """Render ``config.frames`` pairs into ``out_dir`` and write ``manifest.jsonl``.

    Output bytes depend only on the config, not on ``workers``.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    for src in config.sources:
        if isinstance(src, str) and not Path(src).is_file():
            raise FileNotFoundError(f"source volume not found: {src}")
    indices = range(config.frames)
    if workers <= 1:
        _init_worker(config, str(out_dir))
        entries = [_job(i) for i in indices]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(config, str(out_dir))) as pool:
            entries = list(pool.map(_job, indices, chunksize=max(1, config.frames // (8 * workers))))
    split = split_manifest(entries, config.split_ratio, config.master_seed)
    val_ids = {e["id"] for e in split.val}
    for e in entries:
        e["split"] = "val" if e["id"] in val_ids else "train"
    with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    return entries


@dataclass
class Split:
    train: list
    val: list
    warning: str | None = None


def split_manifest(manifest, ratio: float, seed: int) -> Split:
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    items = list(manifest)
    if not items:
        raise ValueError("cannot split an empty manifest")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(math.floor(ratio * len(items) + 0.5))
    train = [items[i] for i in order[:n_train]]
    val = [items[i] for i in order[n_train:]]
    warning = None
    if not train or not val:
        warning = f"degenerate split: {len(train)} train / {len(val)} val from {len(items)} entries"
        log.warning(warning)
    return Split(train, val, warning)


def read_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- evaluation -------------------------------------------------------------------

def read_mask_png(path, spacing: float) -> SegMask:
    arr = np.asarray(Image.open(path).convert("L"))
    values = np.unique(arr)
    if not set(values.tolist()) <= {0, 1, 255}:
        raise ValueError(f"{path} is not a binary mask (values {values[:8].tolist()}...)")
    return SegMask((arr > 0).astype(np.uint8), spacing)


def evaluate_run(pred_dir, gt_dir, spacing: float, out=None, figure: bool = True) -> DiameterReport:
    """Pair masks by filename, measure DSC and AP diameter error, optionally write reports.

    With ``out`` set (a ``.json`` path) the JSON report, a ``.txt`` table and,
    if ``figure``, a ``.png`` plot are written next to each other.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.name for p in pred_dir.glob("*.png")}
    gts = {p.name for p in gt_dir.glob("*.png")}
    if preds != gts:
        missing = sorted(gts - preds)[:5]
        extra = sorted(preds - gts)[:5]
        raise ValueError(f"unmatched mask files (missing predictions {missing}, unexpected {extra})")
    if not gts:
        raise ValueError(f"no PNG masks in {gt_dir}")
    names = sorted(gts)
    report = diameter_mae(
        [read_mask_png(pred_dir / n, spacing) for n in names],
        [read_mask_png(gt_dir / n, spacing) for n in names],
        names=names,
    )
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.to_json(out)
        out.with_suffix(".txt").write_text(report.to_table(pred_dir.name) + "\n", encoding="utf-8")
        if figure:
            from .plotting import plot_diameter_report

            plot_diameter_report(report, out.with_suffix(".png"))
    return report
