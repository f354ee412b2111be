import numpy as np
import pytest

from usir.phantom import PhantomSpec, generate_phantom
from usir.probe import ProbeConfig
from usir.volume_io import LabelSlice, default_tissue_table, tissue_table_from_records

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def tissue(label, z=1.5, alpha=0.0, echo=0.5, name=None, hu=0.0, mu0=0.5, mu1=0.5, sigma0=0.1):
    return {
        "label": label, "name": name or f"t{label}", "c": 1540.0, "z": z, "alpha": alpha,
        "mu0": mu0, "mu1": mu1, "sigma0": sigma0, "echogenicity": echo, "pseudo_hu": hu,
    }


def make_table(*records):
    return tissue_table_from_records(list(records), name="test")


def layered_slice(depths_mm, labels, width_vox=8, spacing=0.5, depth_mm=None):
    """Slice whose label changes with depth only: ``labels[k]`` from ``depths_mm[k]`` down."""
    depth_mm = depth_mm or 120.0
    ny = int(round(depth_mm / spacing))
    y = (np.arange(ny) + 0.5) * spacing
    col = np.zeros(ny, dtype=np.uint8)
    for start, lab in zip(depths_mm, labels):
        col[y >= start] = lab
    return LabelSlice(np.tile(col, (width_vox, 1)), (spacing, spacing))


@pytest.fixture(scope="session")
def table():
    return default_tissue_table()


@pytest.fixture(scope="session")
def probe():
    return ProbeConfig()


@pytest.fixture(scope="session")
def small_probe():
    return ProbeConfig(scan_lines=32, axial_resolution=128)


@pytest.fixture(scope="session")
def phantom():
    return generate_phantom(PhantomSpec(dims=(256, 256, 8), rng_seed=3, perturbation=1.0))
