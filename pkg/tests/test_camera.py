import math
import warnings

import numpy as np
import pytest

from scalelab import (AcquisitionSpec, DigitalImage, estimate_blob_sigma,
                      gaussian_blob_image, make_translation_series,
                      make_zoom_series, simulate_snapshot, wrong_blur_series,
                      write_series_manifest)
from scalelab.camera import stream, synthetic_reference


def test_acquisition_spec_validation():
    with pytest.raises(ValueError):
        AcquisitionSpec(c=0.0, s_factor=10.0)
    with pytest.raises(ValueError):
        AcquisitionSpec(c=1.0, s_factor=0.5)
    with pytest.raises(ValueError):
        AcquisitionSpec(c=1.0, s_factor=10.0, noise_sigma=-1.0)


def test_stream_independence_and_determinism():
    a = stream(7, "noise").standard_normal(4)
    b = stream(7, "noise").standard_normal(4)
    c = stream(7, "offsets").standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_snapshot_determinism(reference_512):
    spec = AcquisitionSpec(c=1.1, s_factor=8.0, translation=(0.3, 0.7),
                           noise_sigma=2.0, seed=42)
    a = simulate_snapshot(reference_512, spec)
    b = simulate_snapshot(reference_512, spec)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_snapshot_size_and_blur_annotation(reference_512):
    out = simulate_snapshot(reference_512, AcquisitionSpec(c=1.1, s_factor=8.0))
    assert out.samples.shape == (64, 64)
    assert out.delta == 1.0
    assert out.blur == pytest.approx(1.1, abs=1e-12)  # reference blur unset


def test_snapshot_too_small_rejected(reference_512):
    with pytest.raises(ValueError, match="smaller"):
        simulate_snapshot(reference_512, AcquisitionSpec(c=1.1, s_factor=16.0))


def test_snapshot_warns_below_recommended_s(reference_512):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        simulate_snapshot(reference_512, AcquisitionSpec(c=1.0, s_factor=4.0))
    assert any("subsampling factor" in str(w.message) for w in caught)


def test_integer_translation_is_pixel_shift(reference_512):
    base = simulate_snapshot(reference_512,
                             AcquisitionSpec(c=1.1, s_factor=8.0))
    shifted = simulate_snapshot(
        reference_512, AcquisitionSpec(c=1.1, s_factor=8.0,
                                       translation=(1.0, 0.0)))
    a = base.samples[:, 1:]
    b = shifted.samples[:, :-1]
    margin = 10
    diff = np.abs(a[margin:-margin, margin:-margin].astype(np.float64)
                  - b[margin:-margin, margin:-margin].astype(np.float64))
    assert diff.max() <= 1e-4 * 255.0


def test_noise_statistics_on_constant_reference():
    ref = DigitalImage(np.full((700, 700), 0.5))
    out = simulate_snapshot(ref, AcquisitionSpec(c=1.0, s_factor=10.0,
                                                 noise_sigma=0.05, seed=3))
    var = float(np.var(out.samples.astype(np.float64)))
    assert abs(var - 0.0025) / 0.0025 < 0.10


def test_noiseless_floor():
    # a blob reference is flat far from its center: with noise_sigma = 0 the
    # flat corners of the output must stay flat to transform round-off
    blob = gaussian_blob_image(1025, 1025, 30.0)
    out = simulate_snapshot(blob, AcquisitionSpec(c=1.1, s_factor=10.0))
    corner = out.samples[:12, :12].astype(np.float64)
    assert float(np.std(corner)) < 1e-4


def test_blur_law_on_blob_reference():
    blob = gaussian_blob_image(1025, 1025, 12.0)  # c_ref = 12 reference px
    for s in (10.0, 12.5):
        out = simulate_snapshot(blob, AcquisitionSpec(c=1.1, s_factor=s))
        expected = math.hypot(1.1, 12.0 / s)
        fitted = estimate_blob_sigma(out)
        assert abs(fitted - expected) / expected < 0.02
        assert out.blur == pytest.approx(expected, abs=1e-12)


def test_translation_series_reproducible(reference_512):
    imgs1, recs1 = make_translation_series(reference_512, 1.1, 8.0, 3, seed=9)
    imgs2, recs2 = make_translation_series(reference_512, 1.1, 8.0, 3, seed=9)
    for a, b in zip(imgs1, imgs2):
        np.testing.assert_array_equal(a.samples, b.samples)
    assert [(r.tx, r.ty) for r in recs1] == [(r.tx, r.ty) for r in recs2]
    assert all(0.0 <= r.tx < 1.0 and 0.0 <= r.ty < 1.0 for r in recs1)


def test_translation_series_needs_two(reference_512):
    with pytest.raises(ValueError):
        make_translation_series(reference_512, 1.1, 8.0, 0, seed=1)
    with pytest.raises(ValueError):
        make_translation_series(reference_512, 1.1, 8.0, 1, seed=1)


def test_zoom_series_basic(reference_512):
    imgs, recs = make_zoom_series(reference_512, 1.0, 4.0, [1.0, 2.0], seed=5)
    assert imgs[1].width == imgs[0].width // 2
    assert recs[1].zoom == 2.0
    with pytest.raises(ValueError):
        make_zoom_series(reference_512, 1.0, 4.0, [0.5], seed=5)
    with pytest.raises(ValueError):
        make_zoom_series(reference_512, 1.0, 4.0, [], seed=5)


def test_zoom_one_images_identical(reference_512):
    imgs, recs = make_zoom_series(reference_512, 1.0, 8.0, [1.0, 1.0], seed=5)
    # same zoom, but different random offsets: compare after regenerating
    # with the first offset
    spec = AcquisitionSpec(c=1.0, s_factor=8.0,
                           translation=(recs[0].tx, recs[0].ty))
    again = simulate_snapshot(reference_512, spec)
    np.testing.assert_array_equal(imgs[0].samples, again.samples)


def test_wrong_blur_series_bounds(reference_512):
    imgs, recs = wrong_blur_series(reference_512, c_assumed=0.7, delta_c=0.4,
                                   n_images=6, s_factor=8.0, seed=11)
    c_reals = [r.c_real for r in recs]
    assert all(0.3 <= c <= 1.1 for c in c_reals)
    assert len(set(round(c, 6) for c in c_reals)) > 1
    imgs2, recs2 = wrong_blur_series(reference_512, 0.7, 0.4, 6, 8.0, seed=11)
    assert [r.c_real for r in recs2] == c_reals


def test_wrong_blur_zero_uncertainty(reference_512):
    _, recs = wrong_blur_series(reference_512, 0.7, 0.0, 3, 8.0, seed=2)
    assert all(r.c_real == 0.7 for r in recs)
    with pytest.raises(ValueError):
        wrong_blur_series(reference_512, 0.3, 0.3, 3, 8.0, seed=2)


def test_series_manifest(tmp_path, reference_512):
    _, recs = make_translation_series(reference_512, 1.1, 8.0, 2, seed=1)
    recs[0].filename = "a.pfm"
    path = tmp_path / "manifest.csv"
    write_series_manifest(recs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "filename,tx,ty,s_factor,c_real,noise_sigma,seed,zoom"
    assert lines[1].startswith("a.pfm,")
    assert len(lines) == 3


def test_synthetic_reference_properties():
    a = synthetic_reference(128, 128, 5)
    b = synthetic_reference(128, 128, 5)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.samples.min() == 0.0
    assert a.samples.max() == pytest.approx(255.0)
    c = synthetic_reference(128, 128, 6)
    assert not np.array_equal(a.samples, c.samples)
