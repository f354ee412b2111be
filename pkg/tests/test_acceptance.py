"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines are repeated in the
terminal summary) or directly as a script.
"""
import math
import os
import shutil
import time

import numpy as np
import pytest

from conftest import layered_slice, make_table, record, tissue
from usir import probe as probe_mod
from usir import raytracer
from usir.dataset import AugmentConfig, DatasetConfig, generate_dataset, mask_image
from usir.metrics import FeatureStats, SegMask, ap_diameter, classify_aaa, clinically_acceptable, dice, frechet_distance, matrix_sqrt_psd
from usir.phantom import AORTA_LABEL, AortaSpec, PhantomSpec, Tissue, aorta_mask_slice, generate_phantom
from usir.probe import FanImage, ProbeConfig, Ray, scan_convert, scanline_fan
from usir.raytracer import SimConfig, attenuation_factor, label_fan, march_ray, reflection_coefficient, render_frame
from usir.volume_io import default_tissue_table, extract_slice


# -- 1. metric oracles --------------------------------------------------------------

def scan_dice(a, b):
    """Row-by-row pixel scan; counts intersections and set pixels explicitly."""
    inter = total = 0
    for ra, rb in zip(a, b):
        for pa, pb in zip(ra.tolist(), rb.tolist()):
            inter += pa & pb
            total += pa + pb
    return 1.0 if total == 0 else 2.0 * inter / total


def scan_run(a):
    """Walk down the rows keeping the current run length of every column."""
    run = np.zeros(a.shape[1], dtype=np.int64)
    best = 0
    for row in a:
        run = (run + 1) * row
        best = max(best, int(run.max()))
    return best


def random_mask(rng, h, w):
    kind = rng.integers(5)
    if kind == 0:
        return np.zeros((h, w), np.uint8)
    if kind == 1:
        return (rng.random((h, w)) < rng.uniform(0.05, 0.95)).astype(np.uint8)
    yy, xx = np.mgrid[:h, :w]
    m = np.zeros((h, w), np.uint8)
    for _ in range(rng.integers(1, 4)):
        cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(1, max(h, w) / 2)
        m |= ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8)
    if kind == 4:
        m[rng.random((h, w)) < 0.02] ^= 1
    return m


def test_criterion_1_metric_oracles():
    rng = np.random.default_rng(20240101)
    pairs = []
    for _ in range(1000):
        h, w = rng.integers(16, 257, size=2)
        a = random_mask(rng, h, w)
        b = a.copy() if rng.random() < 0.1 else random_mask(rng, h, w)
        pairs.append((a, b))
    t0 = time.perf_counter()
    got_dice, got_diam = [], []
    for a, b in pairs:
        ma, mb = SegMask(a, 0.5), SegMask(b, 0.5)
        got_dice.append(dice(ma, mb))
        got_diam.append(ap_diameter(ma) if ma.area else 0.0)
    elapsed = time.perf_counter() - t0
    dice_ok = all(g == scan_dice(a, b) for g, (a, b) in zip(got_dice, pairs))
    diam_ok = all(g == scan_run(a) * 0.5 for g, (a, _) in zip(got_diam, pairs))
    ok = dice_ok and diam_ok and elapsed < 10.0
    record(1, ok, f"1000 masks 16-256 px: dice exact={dice_ok}, ap_diameter exact={diam_ok}, {elapsed:.2f} s (< 10 s)")
    assert ok


# -- 2. Fréchet distance -------------------------------------------------------------

def test_criterion_2_frechet():
    rng = np.random.default_rng(7)
    worst_1d = 0.0
    for _ in range(200):
        m1, m2 = rng.normal(0, 10, 2)
        s1, s2 = rng.uniform(0, 5, 2)
        a = FeatureStats([m1], [[s1 * s1]], 2)
        b = FeatureStats([m2], [[s2 * s2]], 2)
        worst_1d = max(worst_1d, abs(frechet_distance(a, b) - ((m1 - m2) ** 2 + (s1 - s2) ** 2)))
    worst_sqrt = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 33))
        x = rng.normal(size=(n, int(rng.integers(1, n + 1))))
        m = x @ x.T
        s = matrix_sqrt_psd(m)
        worst_sqrt = max(worst_sqrt, np.linalg.norm(s @ s - m) / np.linalg.norm(m))
    worst_self = worst_sym = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 33))
        mats = [rng.normal(size=(n, int(rng.integers(1, n + 1)))) for _ in range(2)]
        a, b = (FeatureStats(rng.normal(size=n), x @ x.T, 3) for x in mats)
        worst_self = max(worst_self, abs(frechet_distance(a, a)))
        worst_sym = max(worst_sym, abs(frechet_distance(a, b) - frechet_distance(b, a)))
    ok = worst_1d <= 1e-9 and worst_sqrt < 1e-8 and worst_self <= 1e-9 and worst_sym <= 1e-9
    record(2, ok, f"1-D closed form err {worst_1d:.1e}, sqrt recon {worst_sqrt:.1e}, d(a,a) {worst_self:.1e}, asymmetry {worst_sym:.1e}")
    assert ok


# -- 3. physics ------------------------------------------------------------------------

def test_criterion_3_physics():
    checks = {}
    checks["attenuation"] = abs(attenuation_factor(0.5, 3.5, 5) - 10 ** -0.875) <= 1e-12
    rng = np.random.default_rng(3)
    zs = rng.uniform(0.1, 10, (500, 2))
    checks["matched R=0"] = all(reflection_coefficient(z, z) == 0.0 for z in zs[:, 0])
    checks["R symmetric"] = all(reflection_coefficient(a, b) == reflection_coefficient(b, a) for a, b in zs)

    probe = ProbeConfig(axial_resolution=512)
    sim = SimConfig(scale_exponent_1=1.0, scale_exponent_2=1.0, tgc_scale=0.0)
    z1, z2, l1, l2, a1 = 1.38, 1.65, 0.3, 0.7, 0.5
    table = make_table(tissue(1, z=z1, echo=l1, alpha=a1), tissue(2, z=z2, echo=l2, alpha=0.0))
    d = 37.5  # on the 0.5 mm voxel grid, so the label boundary is exactly here
    sl = layered_slice([0.0, d], [1, 2])
    ray = Ray((2.0, 0.0), (0.0, 1.0, 0.0), probe.image_depth)
    prof = march_ray(sl, table, ray, probe, sim).samples
    step = probe.depth_step
    k = int(math.ceil(d / step))
    att = attenuation_factor(a1, probe.center_frequency, step / 10.0)
    R = ((z2 - z1) / (z2 + z1)) ** 2
    i = np.arange(probe.axial_resolution)
    expected = np.where(i < k, l1 * att**i, l2 * att**k * (1 - R))
    expected[k] += R * att**k
    err = np.max(np.abs(prof - expected))
    checks["single interface"] = err <= 1e-9

    full = default_tissue_table()
    layered = layered_slice([0, 2, 12, 20, 40, 62, 64, 80], [1, 2, 3, 6, 8, 7, 8, 4])
    _, tr = march_ray(layered, full, ray, probe, sim, trace=True)
    balance = np.abs(tr["reflection"] + (1 - tr["reflection"]) - 1).max()
    energy = np.abs(tr["echo"] + tr["transmitted"] - tr["incident"]) / np.maximum(tr["incident"], 1e-300)
    checks["energy balance"] = balance == 0.0 and energy.max() < 1e-14 and np.count_nonzero(tr["reflection"]) >= 7
    ok = all(checks.values())
    record(3, ok, ", ".join(f"{k}={v}" for k, v in checks.items()) + f" (interface err {err:.1e})")
    assert ok


# -- 4. clinical gate ----------------------------------------------------------------

def test_criterion_4_clinical_gate():
    table, probe, sim = default_tissue_table(), ProbeConfig(), SimConfig()
    results = {}
    for diameter in (25.0, 35.0):
        vol = generate_phantom(PhantomSpec(dims=(256, 256, 8), aorta=AortaSpec(diameter=diameter)))
        sl = extract_slice(vol, "z", 4)
        img = render_frame(sl, table, probe, sim)
        gt = aorta_mask_slice(vol, "z", 4)
        img_mask = mask_image(sl, probe, (256, 256))
        assert img_mask.pixels.shape == img.pixels.shape
        results[diameter] = (ap_diameter(gt), ap_diameter(img_mask), gt.spacing)
    d25, d25_img, voxel = results[25.0]
    d35 = results[35.0][0]
    ok = (
        abs(d25 - 25.0) <= voxel
        and abs(d25_img - 25.0) <= voxel
        and clinically_acceptable(abs(d25 - 25.0))
        and classify_aaa(d25) is False
        and classify_aaa(d35) is True
    )
    record(4, ok, f"25 mm phantom: GT {d25:.2f} mm, image-frame {d25_img:.2f} mm (tol {voxel} mm); AAA(25)={classify_aaa(d25)}, AAA({d35:.1f})={classify_aaa(d35)}")
    assert ok


# -- 5. determinism ----------------------------------------------------------------------

def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_5_determinism(tmp_path):
    cfg = DatasetConfig(
        sources=(PhantomSpec(rng_seed=1, perturbation=1.0), PhantomSpec(rng_seed=2, perturbation=2.0, aorta=AortaSpec(diameter=32.0))),
        frames=100,
        master_seed=123456789,
        sim=SimConfig(rf_noise=0.05),
        augment=AugmentConfig(),
    )
    generate_dataset(cfg, tmp_path / "run1", workers=1)
    generate_dataset(cfg, tmp_path / "run2", workers=1)
    generate_dataset(cfg, tmp_path / "run3", workers=3)
    a, b, c = (tree_bytes(tmp_path / r) for r in ("run1", "run2", "run3"))
    ok = len(a) == 201 and a == b == c
    record(5, ok, f"frames=100: {len(a)} files byte-identical across two runs and worker counts 1/3 = {a == b == c}")
    assert ok


# -- 6. geometry ---------------------------------------------------------------------

def test_criterion_6_geometry():
    probe = ProbeConfig()
    rays = scanline_fan(probe)
    first = math.degrees(math.atan2(rays[0].direction[0], rays[0].direction[1]))
    last = math.degrees(math.atan2(rays[-1].direction[0], rays[-1].direction[1]))
    span_ok = len(rays) == 196 and abs(first + 20.0) < 1e-12 and abs(last - 20.0) < 1e-12

    rng = np.random.default_rng(6)
    data = rng.random((196, 1024))
    a = scan_convert(FanImage(data, probe), (256, 256))
    b = scan_convert(FanImage(data[::-1].copy(), probe), (256, 256))
    mirror_err = np.abs(a.pixels[:, ::-1] - b.pixels).max()

    vol = generate_phantom(PhantomSpec(dims=(256, 256, 4), rng_seed=4, perturbation=1.0))
    sl = extract_slice(vol, "z", 1)
    table = default_tissue_table()
    outside_zero = not a.pixels[~a.mask].any() and not b.pixels[~b.mask].any()
    for mode in raytracer.MODES:
        img = render_frame(sl, table, probe, SimConfig(mode=mode, rf_noise=0.1))
        outside_zero &= not img.pixels[~img.mask].any()
    ok = span_ok and mirror_err < 1e-6 and outside_zero
    record(6, ok, f"fan {first:+.6f}..{last:+.6f} deg over {len(rays)} rays, mirror err {mirror_err:.1e}, out-of-mask zero={outside_zero}")
    assert ok


# -- 7. baseline differentiation ------------------------------------------------------

def test_criterion_7_baselines():
    table, probe = default_tissue_table(), ProbeConfig()
    edge_frac, var_gap, contrast = [], [], []
    for seed in range(10):
        vol = generate_phantom(PhantomSpec(dims=(256, 256, 5), rng_seed=seed, perturbation=1.5,
                                           aorta=AortaSpec(diameter=float(16 + 2 * seed))))
        for z in range(5):
            sl = extract_slice(vol, "z", z)
            ir = render_frame(sl, table, probe, SimConfig(rng_seed=seed))
            us = render_frame(sl, table, probe, SimConfig(mode="realistic_us", rng_seed=seed * 5 + z))
            edge = render_frame(sl, table, probe, SimConfig(mode="edge_ir"))
            m = ir.mask
            edge_frac.append(np.count_nonzero(edge.pixels[m]) / m.sum())
            var_gap.append(us.pixels[m].var() - ir.pixels[m].var())
            labels = label_fan(sl, probe)
            region = lambda l: scan_convert(FanImage((labels == l).astype(float), probe), (256, 256), nearest=True).pixels > 0
            lumen, wall = region(AORTA_LABEL), region(int(Tissue.VESSEL_WALL))
            contrast.append(ir.pixels[lumen].mean() / ir.pixels[wall].mean())
    ok = len(edge_frac) == 50 and max(edge_frac) < 0.05 and min(var_gap) > 0 and max(contrast) < 0.5
    record(7, ok, f"50 slices: edge nonzero max {100 * max(edge_frac):.2f}% (< 5%), min var(US)-var(IR) {min(var_gap):.4f} (> 0), lumen/wall max {max(contrast):.3f} (< 0.5)")
    assert ok


# -- 8. performance --------------------------------------------------------------------

def _clear_caches():
    for fn in (raytracer._render_grid, raytracer._pair_tables, probe_mod._sector_geometry):
        fn.cache_clear()


def test_criterion_8_performance(tmp_path):
    table, probe = default_tissue_table(), ProbeConfig()
    sim = SimConfig()
    assert sim.elevational_rays == 10 and probe.scan_lines == 196 and probe.axial_resolution == 1024
    sl = extract_slice(generate_phantom(PhantomSpec(dims=(256, 256, 4))), "z", 2)
    _clear_caches()
    t0 = time.perf_counter()
    render_frame(sl, table, probe, sim)
    cold = time.perf_counter() - t0
    warm = []
    for _ in range(5):
        t0 = time.perf_counter()
        render_frame(sl, table, probe, sim)
        warm.append(time.perf_counter() - t0)

    workers = os.cpu_count() or 1
    cfg = DatasetConfig(sources=tuple(PhantomSpec(rng_seed=s, perturbation=1.0) for s in range(4)), frames=5000, master_seed=5)
    t0 = time.perf_counter()
    entries = generate_dataset(cfg, tmp_path / "ds", workers=workers)
    total = time.perf_counter() - t0
    n_images = len(list((tmp_path / "ds" / "images").glob("*.png")))
    shutil.rmtree(tmp_path / "ds")
    ok = cold < 0.25 and len(entries) == n_images == 5000 and total < 600
    record(8, ok, f"one frame {1e3 * cold:.0f} ms cold / {1e3 * min(warm):.0f} ms warm (< 250 ms); 5000 frames in {total:.0f} s with {workers} worker(s) (< 600 s)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
