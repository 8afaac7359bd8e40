import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpmd.image_core import load_mask_pgm, load_pgm
from wpmd.metrics import connected_components
from wpmd.synth import (
    GENERATOR_ID,
    SceneSpec,
    blob_field,
    edge_from_mask,
    export_suite,
    generate_scene,
    generate_suite,
    half_peak_mask,
    standard_suite,
)


def test_empty_scene_is_flat():
    s = generate_scene(SceneSpec(target_count=(0, 0), noise_sigma=0.0, clutter=0.0, background_level=0.25))
    assert np.all(s.image == 0.25) and not s.mask.any() and s.centroids == []


def test_determinism_and_distinct_seeds():
    a = generate_scene(SceneSpec(seed=7))
    b = generate_scene(SceneSpec(seed=7))
    c = generate_scene(SceneSpec(seed=8))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask) and a.centroids == b.centroids
    assert not np.array_equal(a.image - a.clean, c.image - c.clean)
    s1 = [x.image for x in standard_suite(n=3)]
    s2 = [x.image for x in standard_suite(n=3)]
    assert all(np.array_equal(x, y) for x, y in zip(s1, s2))
    assert not np.array_equal(s1[0], s1[1])


def test_centred_blob_level_set_closed_form():
    blob = {"cy": 16.0, "cx": 16.0, "sigma": 2.0, "amplitude": 0.6}
    mask = half_peak_mask((32, 32), [blob])
    field = blob_field((32, 32), [blob])
    for i in range(32):
        for j in range(32):
            value = 0.6 * math.exp(-((i - 16) ** 2 + (j - 16) ** 2) / 8.0)
            assert abs(field[i, j] - value) < 1e-15
            assert mask[i, j] == (value > 0.3)
    # radius of the half-peak circle: sigma * sqrt(2 ln 2) = 2.3548
    assert mask[16, 18] and not mask[16, 19]


def test_generated_blob_level_set_matches_formula():
    spec = SceneSpec(size=(32, 32), target_count=(1, 1), target_sigma=(2.0, 2.0), target_amplitude=(0.6, 0.6),
                     noise_sigma=0.0, clutter=0.0, background_level=0.0, seed=11)
    s = generate_scene(spec)
    (cy, cx), = s.centroids
    yy, xx = np.mgrid[0:32, 0:32]
    oracle = 0.6 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 8.0) > 0.3
    assert np.array_equal(s.mask, oracle)
    assert np.array_equal(s.image, s.clean)


def test_margin_and_separation():
    for s in standard_suite(n=20):
        for b in s.blobs:
            m = 3 * b["sigma"]
            assert m <= b["cy"] <= 63 - m and m <= b["cx"] <= 63 - m
        for i, a in enumerate(s.blobs):
            for b in s.blobs[i + 1:]:
                assert math.hypot(a["cy"] - b["cy"], a["cx"] - b["cx"]) > 3 * (a["sigma"] + b["sigma"])


def test_components_equal_blob_count():
    for s in standard_suite(n=30):
        assert len(connected_components(s.mask)[1]) == len(s.blobs)


def test_spec_validation_and_infeasible_placement():
    with pytest.raises(ValueError):
        SceneSpec(target_sigma=(0.0, 1.0))
    with pytest.raises(ValueError):
        SceneSpec(size=(10, 10), target_sigma=(2.0, 2.0))
    with pytest.raises(RuntimeError, match="place"):
        generate_scene(SceneSpec(size=(20, 20), target_count=(6, 6), target_sigma=(2.0, 2.0)))


def brute_morph(mask, op):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            vals = [mask[i + a, j + b] if 0 <= i + a < h and 0 <= j + b < w else False
                    for a in (-1, 0, 1) for b in (-1, 0, 1)]
            out[i, j] = op(vals)
    return out


def edge_oracle(mask):
    return brute_morph(mask, any) & ~brute_morph(mask, all)


def test_edge_fixtures():
    assert not edge_from_mask(np.zeros((5, 5), bool)).any()
    full = edge_from_mask(np.ones((5, 5), bool))
    ring = np.ones((5, 5), bool)
    ring[1:4, 1:4] = False
    assert np.array_equal(full, ring)
    sq = np.zeros((5, 5), bool)
    sq[1:4, 1:4] = True
    e = edge_from_mask(sq)
    assert np.array_equal(e, edge_oracle(sq))
    # dilation fills the frame, erosion keeps only the centre
    assert e.sum() == 24 and not e[2, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_edge_matches_oracle_and_invariants(seed):
    mask = np.random.default_rng(seed).random((7, 7)) < 0.5
    e = edge_from_mask(mask)
    assert np.array_equal(e, edge_oracle(mask))
    assert not np.any(e & ~brute_morph(mask, any))
    assert not np.any(e & brute_morph(mask, all))


def test_export_suite(tmp_path):
    spec = SceneSpec(seed=5)
    manifest = export_suite(spec, 2, tmp_path)
    scenes = generate_suite(spec, 2)
    assert [m["image"] for m in manifest] == ["scene_0000.pgm", "scene_0001.pgm"]
    for m, s in zip(manifest, scenes):
        img = load_pgm(tmp_path / m["image"])
        assert np.max(np.abs(img - s.image)) <= 1 / 510 + 1e-12
        assert np.array_equal(load_mask_pgm(tmp_path / m["mask"]), s.mask)
        side = json.loads((tmp_path / m["sidecar"]).read_text())
        assert side["generator"] == GENERATOR_ID and side["seed"] == 5
        assert side["centroids"] == [list(c) for c in s.centroids]
    raw = (tmp_path / "scene_0000_mask.pgm").read_bytes()
    assert set(raw[raw.index(b"255\n") + 4:]) <= {0, 255}
