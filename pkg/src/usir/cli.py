"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing inputs).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .dataset import DatasetConfig, evaluate_run, generate_dataset, mask_image, save_png
from .phantom import load_phantom_spec, generate_phantom
from .probe import ProbeConfig
from .raytracer import SimConfig, render_frame
from .volume_io import default_tissue_table, extract_slice, load_label_volume, load_tissue_table, save_label_volume

log = logging.getLogger("usir")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_phantom(args) -> None:
    spec = load_phantom_spec(args.spec)
    volume = generate_phantom(spec)
    save_label_volume(volume, args.out)
    log.info("wrote %s (%s voxels)", args.out, "x".join(map(str, volume.dims)))


def _render_slice(args, mode=None) -> None:
    volume = load_label_volume(args.volume)
    table = load_tissue_table(args.tissues) if args.tissues else default_tissue_table()
    probe = ProbeConfig.load(args.probe) if args.probe else ProbeConfig()
    sim = SimConfig.load(args.sim) if args.sim else SimConfig()
    if mode is not None:
        sim = replace(sim, mode=mode)
    sl = extract_slice(volume, args.axis, args.index)
    table.check_labels(sl.labels)
    out_size = (args.size, args.size)
    t0 = time.perf_counter()
    image = render_frame(sl, table, probe, sim, out_size)
    log.info("rendered %s in %.0f ms", sim.mode, 1e3 * (time.perf_counter() - t0))
    save_png(image.pixels, args.out)
    if args.mask_out:
        mask = mask_image(sl, probe, out_size)
        save_png(mask.pixels.astype(float), args.mask_out)


def cmd_simulate(args) -> None:
    _render_slice(args)


def cmd_baseline(args) -> None:
    _render_slice(args, mode=args.mode)


def cmd_dataset(args) -> None:
    config = DatasetConfig.load(args.config)
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    t0 = time.perf_counter()
    entries = generate_dataset(config, args.out_dir, workers=workers)
    log.info("wrote %d pairs to %s in %.1f s", len(entries), args.out_dir, time.perf_counter() - t0)


def cmd_eval(args) -> None:
    if not args.spacing_mm > 0:
        raise UsageError("--spacing-mm must be positive")
    report = evaluate_run(args.pred, args.gt, args.spacing_mm, out=args.out, figure=not args.no_figure)
    print(report.to_table(Path(args.pred).name))
    if args.out is None:
        print(json.dumps({k: v for k, v in report.to_dict().items() if not isinstance(v, list)}, indent=2))


def _slice_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--volume", required=True, help="label volume header (.lmap.json)")
    p.add_argument("--tissues", help="tissue table JSON (default: built-in table)")
    p.add_argument("--probe", help="probe config JSON (default: built-in probe)")
    p.add_argument("--sim", help="simulation config JSON")
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--size", type=int, default=256, help="output width and height in pixels")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--mask-out", help="also write the aorta mask PNG")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="usir", description="Ultrasound intermediate-representation simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a label-volume phantom")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="render one slice")
    _slice_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="render one slice as a baseline representation")
    _slice_flags(p)
    p.add_argument("--mode", choices=("edge_ir", "realistic_us"), required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("dataset", help="render an image/mask training set")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--spacing-mm", type=float, required=True)
    p.add_argument("--out", help="report JSON; a .txt table and .png figure are written alongside")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usir: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, IndexError, OSError, RuntimeError) as exc:
        print(f"usir: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
