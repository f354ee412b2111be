import json

import numpy as np
import pytest

from usir.metrics import ap_diameter
from usir.phantom import (
    AORTA_LABEL,
    AortaSpec,
    PhantomSpec,
    Tissue,
    VertebraSpec,
    aorta_mask_slice,
    generate_phantom,
    load_phantom_spec,
)
from usir.volume_io import default_tissue_table, extract_slice

SMALL = dict(dims=(256, 256, 6))


def column_extent(mask_pixels: np.ndarray) -> int:
    """Brute force: longest run found by walking every column pixel by pixel."""
    best = 0
    for c in range(mask_pixels.shape[1]):
        run = 0
        for r in range(mask_pixels.shape[0]):
            run = run + 1 if mask_pixels[r, c] else 0
            best = max(best, run)
    return best


def test_aorta_extent_20mm():
    vol = generate_phantom(PhantomSpec(aorta=AortaSpec(diameter=20.0), **SMALL))
    m = aorta_mask_slice(vol, "z", 3)
    assert abs(column_extent(m.pixels) - 40) <= 1
    assert ap_diameter(m) == pytest.approx(20.0, abs=0.5)


@pytest.mark.parametrize("diameter", [12.0, 25.0, 35.0])
def test_diameter_fidelity(diameter):
    vol = generate_phantom(PhantomSpec(aorta=AortaSpec(diameter=diameter), rng_seed=5, perturbation=2.0, **SMALL))
    m = aorta_mask_slice(vol, "z", 2)
    assert abs(ap_diameter(m) - diameter) <= 0.5


def test_deterministic():
    a = generate_phantom(PhantomSpec(rng_seed=9, perturbation=1.5, **SMALL))
    b = generate_phantom(PhantomSpec(rng_seed=9, perturbation=1.5, **SMALL))
    c = generate_phantom(PhantomSpec(rng_seed=10, perturbation=1.5, **SMALL))
    assert a == b
    assert not np.array_equal(a.labels, c.labels)


def test_label_closure(phantom):
    default_tissue_table().check_labels(phantom.labels)
    # lungs only appear in the cranial quarter
    vol = generate_phantom(PhantomSpec(dims=(128, 128, 8), spacing=(1, 1, 1)))
    present = set(np.unique(vol.labels).tolist())
    assert present <= set(range(9))
    assert Tissue.LUNG in present


def test_anterior_posterior_order():
    vol = generate_phantom(PhantomSpec(**SMALL))
    col = vol.labels[128, :, 0]  # midline column
    first = {int(t): int(np.argmax(col == t)) for t in (1, 2, 3, 8, 7, 4)}
    assert first[1] < first[2] < first[3] < first[8] < first[7] < first[4]


def test_no_vertebra():
    vol = generate_phantom(PhantomSpec(vertebra=VertebraSpec(present=False), **SMALL))
    assert not (vol.labels == Tissue.BONE).any()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(aorta=AortaSpec(center=(300.0, 52.0))),
        dict(aorta=AortaSpec(diameter=0.0)),
        dict(layer_thicknesses=(-1.0, 10.0, 8.0)),
        dict(layer_thicknesses=(50.0, 50.0, 50.0)),
        dict(perturbation=-0.1),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        generate_phantom(PhantomSpec(**{**SMALL, **kwargs}))


def test_mask_matches_label_count(phantom):
    m = aorta_mask_slice(phantom, "z", 4)
    sl = extract_slice(phantom, "z", 4)
    assert m.area == int((sl.labels == AORTA_LABEL).sum())
    again = aorta_mask_slice(phantom, "z", 4)
    assert np.array_equal(m.pixels, again.pixels)
    assert m.spacing == 0.5


def test_mask_empty_slice(phantom):
    # x = 0 is far from the aorta
    assert aorta_mask_slice(phantom, "x", 0).area == 0
    with pytest.raises(IndexError):
        aorta_mask_slice(phantom, "z", 99)


def test_spec_json_roundtrip(tmp_path):
    spec = PhantomSpec(dims=(64, 64, 4), rng_seed=4, perturbation=0.5, aorta=AortaSpec(center=(16.0, 20.0), diameter=8.0),
                       vertebra=VertebraSpec(center=(16.0, 26.0), radius=3.0))
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert load_phantom_spec(p) == spec
    with pytest.raises(ValueError):
        PhantomSpec.from_dict({"colour": "red"})
