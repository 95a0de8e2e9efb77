import math

import numpy as np
import pytest

from scalelab import (DigitalImage, ScaleSpaceConfig, build_dog,
                      build_scale_space, canonical_sort, compute_features,
                      contrast_filter, detect_keypoints, edge_filter,
                      gaussian_blob_image, read_keypoints_csv, refine,
                      scan_discrete_extrema, write_keypoints_csv)
from scalelab.extrema import (DoGOctave, DoGVolume, Keypoint, STATUS_DISCRETE,
                              STATUS_REFINED, STATUS_REJECTED)

KAPPA3 = 2.0 ** (1.0 / 3.0)


def make_volume(values: np.ndarray, n_spo: int = 3,
                sigma_min: float = 1.0) -> DoGVolume:
    """Wrap a raw (S, H, W) array as a one-octave DoG volume for testing."""
    cfg = ScaleSpaceConfig(n_oct=1, n_spo=n_spo, sigma_min=sigma_min,
                           delta_min=1.0, c=0.0, kappa=KAPPA3)
    sigmas = np.array([cfg.sigma(0, s) for s in range(values.shape[0])])
    oct_ = DoGOctave(octave=0, delta=1.0, sigmas=sigmas, values=values)
    return DoGVolume(config=cfg, octaves=(oct_,))


# ---------------------------------------------------------------------------
# DoG construction
# ---------------------------------------------------------------------------

def test_constant_input_gives_zero_dog():
    img = DigitalImage(np.full((40, 40), 0.5), blur=0.8)
    cfg = ScaleSpaceConfig(n_oct=1, n_spo=3, sigma_min=0.8, delta_min=1.0,
                           c=0.8)
    dog = build_dog(img, cfg)
    assert np.max(np.abs(dog.octaves[0].values)) <= 1e-6


def test_dog_slice_count_and_order():
    img = DigitalImage(np.random.default_rng(0).random((48, 48)), blur=0.8)
    cfg = ScaleSpaceConfig(n_oct=2, n_spo=4, sigma_min=0.8, delta_min=1.0,
                           c=0.8)
    dog = build_dog(img, cfg)
    assert len(dog.octaves) == 2
    for oct_ in dog.octaves:
        assert oct_.values.shape[0] == cfg.n_spo + 2 >= 3
        assert np.all(np.diff(oct_.sigmas) > 0)


def test_kappa_coupled_matches_adjacent_difference():
    # with kappa = 2^(1/n_spo) the pair construction must reproduce the
    # classic adjacent-scale subtraction
    rng = np.random.default_rng(1)
    base = DigitalImage(rng.random((64, 64)) * 255, blur=0.8)
    cfg = ScaleSpaceConfig(n_oct=1, n_spo=3, sigma_min=0.8, delta_min=1.0,
                           c=0.8, kappa=2.0 ** (1.0 / 3.0))
    dog = build_dog(base, cfg)
    # oracle: adjacent differences of scale-space levels at s and s+1
    from scalelab.scalespace import LevelEngine
    engine = LevelEngine(base, cfg)
    for s in range(cfg.n_spo + 2):
        lo = engine.level(0, cfg.sigma(0, s))
        hi = engine.level(0, cfg.sigma(0, s + 1))
        classic = hi.samples.astype(np.float64) - lo.samples.astype(np.float64)
        assert np.max(np.abs(dog.octaves[0].values[s] - classic)) <= 1e-4


def test_blob_peak_slice_follows_kappa_law():
    sigma_blob = 1.6
    img = gaussian_blob_image(65, 65, sigma_blob)
    img = DigitalImage(img.samples * 255.0, blur=0.0)
    cfg = ScaleSpaceConfig(n_oct=1, n_spo=15, sigma_min=1.1, delta_min=1.0,
                           c=0.0, kappa=KAPPA3)
    dog = build_dog(img, cfg)
    oct_ = dog.octaves[0]
    center = np.abs(oct_.values[:, 32, 32])
    target = sigma_blob / math.sqrt(KAPPA3)
    nearest = int(np.argmin(np.abs(oct_.sigmas - target)))
    assert int(np.argmax(center)) == nearest


# ---------------------------------------------------------------------------
# Discrete scan
# ---------------------------------------------------------------------------

def test_scan_constant_volume_empty():
    dog = make_volume(np.zeros((4, 8, 8), dtype=np.float32))
    assert scan_discrete_extrema(dog) == []


def test_scan_single_spike():
    vals = np.zeros((4, 9, 9), dtype=np.float32)
    vals[2, 4, 5] = 1.0
    dog = make_volume(vals)
    kps = scan_discrete_extrema(dog)
    assert len(kps) == 1
    kp = kps[0]
    assert (kp.s, kp.m, kp.n) == (2, 4, 5)
    assert kp.dog_value == 1.0
    assert kp.status == STATUS_DISCRETE


def test_scan_tie_detects_nothing():
    vals = np.zeros((3, 7, 7), dtype=np.float32)
    vals[1, 3, 3] = 1.0
    vals[1, 3, 4] = 1.0  # tie neighbor
    dog = make_volume(vals)
    assert scan_discrete_extrema(dog) == []


def test_scan_excludes_borders():
    vals = np.zeros((3, 7, 7), dtype=np.float32)
    vals[0, 3, 3] = 5.0   # outermost scale slice
    vals[2, 0, 2] = 5.0   # spatial border
    dog = make_volume(vals)
    kps = scan_discrete_extrema(dog)
    # the spike at the slice border creates neighbors-of-spike structure
    # only; no extremum may sit on excluded voxels
    for kp in kps:
        assert 1 <= kp.s <= vals.shape[0] - 2
        assert 1 <= kp.m <= 5 and 1 <= kp.n <= 5


def test_scan_finds_minima_too():
    vals = np.zeros((3, 7, 7), dtype=np.float32)
    vals[1, 2, 2] = -1.0
    dog = make_volume(vals)
    kps = scan_discrete_extrema(dog)
    assert len(kps) == 1 and kps[0].dog_value == -1.0


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

def quadratic_volume(center_offset, shape=(5, 9, 9), node=(2, 4, 4),
                     scale=1.0):
    """omega(alpha) = scale * (1 - |alpha - center_offset|^2) sampled on the
    integer grid around `node`; finite differences recover it exactly."""
    a1, a2, a3 = center_offset
    vals = np.zeros(shape)
    for s in range(shape[0]):
        for m in range(shape[1]):
            for n in range(shape[2]):
                d = np.array([s - node[0] - a1, m - node[1] - a2,
                              n - node[2] - a3])
                vals[s, m, n] = scale * (1.0 - d @ d)
    return vals


def test_refine_exact_on_quadratic():
    offset = (0.2, 0.1, -0.3)
    dog = make_volume(quadratic_volume(offset), n_spo=3)
    kp = Keypoint(o=0, s=2, m=4, n=4, sigma=dog.octaves[0].sigmas[2],
                  x=4.0, y=4.0, dog_value=1.0)
    out = refine(kp, dog)
    assert out.status == STATUS_REFINED
    assert max(abs(out.alpha[i] - offset[i]) for i in range(3)) <= 1e-10
    # refined value equals the quadratic's maximum, 1.0
    assert abs(out.dog_value - 1.0) <= 1e-10
    assert abs(out.x - (4.0 - 0.3)) <= 1e-10
    assert abs(out.y - (4.0 + 0.1)) <= 1e-10
    cfg = dog.config
    assert abs(out.sigma - cfg.sigma_min * 2 ** ((2 + 0.2) / 3)) <= 1e-12


def test_refine_symmetric_peak_zero_offset():
    dog = make_volume(quadratic_volume((0.0, 0.0, 0.0)))
    kp = Keypoint(o=0, s=2, m=4, n=4, sigma=1.0, x=4.0, y=4.0, dog_value=1.0)
    out = refine(kp, dog)
    assert out.status == STATUS_REFINED
    assert np.allclose(out.alpha, 0.0, atol=1e-12)
    assert out.dog_value == pytest.approx(1.0, abs=1e-12)


def test_refine_relocates_then_accepts():
    # extremum one node to the right of the scan start: first solve gives
    # alpha_y = 0.9, relocation moves one node, second solve accepts
    dog = make_volume(quadratic_volume((0.0, 0.9, 0.0)))
    kp = Keypoint(o=0, s=2, m=4, n=4, sigma=1.0, x=4.0, y=4.0, dog_value=0.0)
    out = refine(kp, dog, m_offset=0.6, n_interp=2)
    assert out.status == STATUS_REFINED
    assert out.m == 5
    assert abs(out.alpha[1] - (-0.1)) <= 1e-10
    # with a single allowed attempt the same keypoint is rejected
    rej = refine(kp, dog, m_offset=0.6, n_interp=1)
    assert rej.status == STATUS_REJECTED


def test_refine_singular_hessian_rejected():
    vals = np.zeros((5, 9, 9), dtype=np.float64)  # flat: H = 0
    dog = make_volume(vals)
    kp = Keypoint(o=0, s=2, m=4, n=4, sigma=1.0, x=4.0, y=4.0, dog_value=0.0)
    out = refine(kp, dog)
    assert out.status == STATUS_REJECTED
    assert out.reason == "singular Hessian"


def test_refine_unlimited_terminates():
    rng = np.random.default_rng(5)
    vals = rng.standard_normal((6, 12, 12))
    dog = make_volume(vals, n_spo=4)
    for kp in scan_discrete_extrema(dog):
        out = refine(kp, dog, m_offset=0.6, n_interp=math.inf)
        assert out.status in (STATUS_REFINED, STATUS_REJECTED)


def test_refine_accepted_offset_below_m_offset():
    rng = np.random.default_rng(6)
    vals = rng.standard_normal((6, 14, 14))
    dog = make_volume(vals, n_spo=4)
    for kp in scan_discrete_extrema(dog):
        out = refine(kp, dog, m_offset=0.6, n_interp=2)
        if out.status == STATUS_REFINED:
            assert max(abs(a) for a in out.alpha) < 0.6


def test_refine_requires_discrete_status():
    dog = make_volume(quadratic_volume((0.0, 0.0, 0.0)))
    kp = Keypoint(o=0, s=2, m=4, n=4, sigma=1.0, x=4.0, y=4.0,
                  status=STATUS_REFINED)
    with pytest.raises(ValueError):
        refine(kp, dog)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def test_features_isotropic_condition_number():
    dog = make_volume(quadratic_volume((0.0, 0.0, 0.0)))
    kp = Keypoint(o=0, s=2, m=4, n=4, sigma=1.0, x=4.0, y=4.0, dog_value=1.0)
    out = compute_features(kp, dog)
    assert out.hessian_cond == pytest.approx(1.0, abs=1e-12)
    assert out.dog_abs == pytest.approx(1.0)


def test_features_anisotropic_bowl_condition():
    # omega(alpha) = a1^2 + 2 a2^2 + 4 a3^2: Hessian eigenvalues 2, 4, 8
    vals = np.zeros((5, 9, 9))
    for s in range(5):
        for m in range(9):
            for n in range(9):
                vals[s, m, n] = ((s - 2) ** 2 + 2.0 * (m - 4) ** 2
                                 + 4.0 * (n - 4) ** 2)
    dog = make_volume(vals)
    kp = Keypoint(o=0, s=2, m=4, n=4, sigma=1.0, x=4.0, y=4.0)
    out = compute_features(kp, dog)
    assert out.hessian_cond == pytest.approx(4.0, abs=1e-12)
    assert out.laplacian3d == pytest.approx(2.0 + 4.0 + 8.0, abs=1e-12)


def test_features_neighbor_tie_gives_zero_gap():
    vals = np.zeros((3, 7, 7), dtype=np.float32)
    vals[1, 3, 3] = 2.0
    vals[1, 3, 4] = 2.0
    dog = make_volume(vals)
    kp = Keypoint(o=0, s=1, m=3, n=3, sigma=1.0, x=3.0, y=3.0)
    out = compute_features(kp, dog)
    assert out.min_neighbor_gap == 0.0


def test_features_outside_scan_domain_rejected():
    dog = make_volume(np.zeros((3, 7, 7), dtype=np.float32))
    kp = Keypoint(o=0, s=0, m=3, n=3, sigma=1.0, x=3.0, y=3.0)
    with pytest.raises(ValueError):
        compute_features(kp, dog)


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------

def _kp(value):
    return Keypoint(o=0, s=1, m=1, n=1, sigma=1.0, x=1.0, y=1.0,
                    dog_value=value)


def test_contrast_filter_contract():
    kps = [_kp(0.01), _kp(-0.05)]
    assert contrast_filter(kps, 0.0) == kps
    assert contrast_filter(kps, math.inf) == []
    kept = contrast_filter(kps, 0.03)
    assert len(kept) == 1 and kept[0].dog_value == -0.05


def test_edge_filter_isotropic_kept_anisotropic_removed():
    def spatial_quadratic(cyy, cxx):
        vals = np.zeros((3, 9, 9))
        for m in range(9):
            for n in range(9):
                vals[1, m, n] = -(cyy * (m - 4) ** 2 + cxx * (n - 4) ** 2)
        return vals

    iso = make_volume(spatial_quadratic(1.0, 1.0))
    kp = Keypoint(o=0, s=1, m=4, n=4, sigma=1.0, x=4.0, y=4.0)
    assert edge_filter([kp], iso, r_edge=10.0) == [kp]
    # curvature ratio 100 : (tr)^2/det = 101^2/100 > (11)^2/10
    aniso = make_volume(spatial_quadratic(100.0, 1.0))
    assert edge_filter([kp], aniso, r_edge=10.0) == []


def test_edge_filter_saddle_removed():
    vals = np.zeros((3, 9, 9))
    for m in range(9):
        for n in range(9):
            vals[1, m, n] = (m - 4) ** 2 - (n - 4) ** 2
    dog = make_volume(vals)
    kp = Keypoint(o=0, s=1, m=4, n=4, sigma=1.0, x=4.0, y=4.0)
    assert edge_filter([kp], dog, r_edge=10.0) == []


def test_edge_filter_validates_r():
    with pytest.raises(ValueError):
        edge_filter([], make_volume(np.zeros((3, 5, 5))), r_edge=1.0)


# ---------------------------------------------------------------------------
# Pipeline, ordering, CSV
# ---------------------------------------------------------------------------

def test_detect_blob_scale_recovery():
    sigma_blob = 1.6
    blob = gaussian_blob_image(129, 129, sigma_blob)
    img = DigitalImage(blob.samples * 255.0, delta=1.0, blur=0.0)
    cfg = ScaleSpaceConfig(n_oct=2, n_spo=15, sigma_min=1.1, delta_min=0.5,
                           c=0.0, kappa=KAPPA3)
    kps = detect_keypoints(img, cfg)
    assert kps
    best = max(kps, key=lambda k: abs(k.dog_value))
    detected = best.sigma * math.sqrt(KAPPA3)
    assert abs(detected - sigma_blob) / sigma_blob < 0.02
    assert abs(best.x - 64.0) < 0.05 and abs(best.y - 64.0) < 0.05


def test_canonical_sort_order():
    kps = [Keypoint(o=o, s=s, m=m, n=n, sigma=1.0, x=float(n), y=float(m))
           for o in (1, 0) for s in (2, 1) for m in (3, 1) for n in (4, 0)]
    ordered = canonical_sort(kps)
    keys = [(k.o, k.s, k.m, k.n) for k in ordered]
    assert keys == sorted(keys)


def test_keypoint_csv_round_trip(tmp_path):
    kps = [Keypoint(o=0, s=1, m=2, n=3, sigma=1.23456789, x=4.5, y=6.7,
                    alpha=(0.1, -0.2, 0.3), dog_value=-0.01, dog_abs=0.01,
                    laplacian3d=0.5, hessian_cond=math.inf,
                    min_neighbor_gap=1e-5, status=STATUS_REFINED)]
    path = tmp_path / "kps.csv"
    write_keypoints_csv(kps, path)
    back = read_keypoints_csv(path)
    assert len(back) == 1
    kp = back[0]
    assert (kp.o, kp.s, kp.m, kp.n) == (0, 1, 2, 3)
    assert kp.sigma == pytest.approx(1.23456789, rel=1e-8)
    assert math.isinf(kp.hessian_cond)
    assert kp.status == STATUS_REFINED

    header = path.read_text().splitlines()[0]
    assert header == ("o,s,m,n,sigma,x,y,alpha1,alpha2,alpha3,dog_value,"
                      "dog_abs,laplacian3d,hessian_cond,min_neighbor_gap,status")
