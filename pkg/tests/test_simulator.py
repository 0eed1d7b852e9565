import numpy as np
import pytest

from uwrsense.core import nmse
from uwrsense.sense import EncodingOperator, estimate_noise_cov, estimate_sensitivities, fold, sense_wls, sos
from uwrsense.simulator import (
    AcquisitionSpec,
    Ellipsoid,
    PhantomSpec,
    acquire,
    ellipsoid_mask,
    full_rank_fraction,
    head_phantom,
    make_coils,
    make_phantom,
    make_series,
    noise_scan,
    reference_coil_images,
)
from uwrsense.core import NoiseCovariance

DIMS = (16, 16, 8)


def test_empty_phantom():
    assert not make_phantom(PhantomSpec(DIMS)).any()


def test_covering_ellipsoid_is_constant():
    vol = make_phantom(PhantomSpec(DIMS, [Ellipsoid((0, 0, 0), (2, 2, 2), 1.0)]))
    np.testing.assert_array_equal(vol, 1.0)


def test_overlap_sums():
    e1 = Ellipsoid((-0.2, 0, 0), (0.5, 0.5, 0.5), 1.0)
    e2 = Ellipsoid((0.2, 0, 0), (0.5, 0.5, 0.5), 2.0, phase=np.pi / 2)
    vol = make_phantom(PhantomSpec(DIMS, [e1, e2]))
    m1, m2 = ellipsoid_mask(DIMS, e1), ellipsoid_mask(DIMS, e2)
    assert (m1 & m2).any()
    np.testing.assert_allclose(vol, m1 * 1.0 + m2 * 2.0j, atol=1e-12)


def test_phantom_bounded_and_deterministic():
    spec = head_phantom(DIMS, seed=3)
    a, b = make_phantom(spec), make_phantom(spec)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a).max() <= sum(abs(e.intensity) for e in spec.ellipsoids)


def test_single_coil_unit_modulus():
    s = make_coils(DIMS, 1, seed=0)
    np.testing.assert_allclose(np.abs(s), 1.0)


def test_coils_full_rank_and_deterministic():
    base = make_phantom(head_phantom(DIMS))
    support = np.abs(base) > 0
    s = make_coils(DIMS, 4, seed=5, R=2, support=support)
    assert full_rank_fraction(s, 2, support) >= 0.99
    np.testing.assert_array_equal(s, make_coils(DIMS, 4, seed=5, R=2, support=support))
    np.testing.assert_allclose(sos(s), 1.0)


def test_acquire_noiseless_equals_fold():
    base = make_phantom(head_phantom(DIMS))
    coils = make_coils(DIMS, 4, seed=1)
    acq = AcquisitionSpec(coils=4, R=2, frames=1)
    d = acquire(base, coils, acq)
    np.testing.assert_array_equal(d.data, fold(base, EncodingOperator.from_sens(coils, 2)).data)


def test_acquire_noise_statistics():
    # empty object: the folded data is pure noise
    sigma = 2.0
    coils = make_coils((32, 32, 16), 3, seed=1)
    acq = AcquisitionSpec(coils=3, R=2, frames=2, psi_true=sigma**2 * np.eye(3), seed=4)
    d = acquire(np.zeros((2, 32, 32, 16)), coils, acq)
    cov = estimate_noise_cov(d.data.reshape(3, -1))
    np.testing.assert_allclose(cov.psi, sigma**2 * np.eye(3), atol=0.05 * sigma**2)


def test_acquire_deterministic():
    base = make_phantom(head_phantom(DIMS))
    coils = make_coils(DIMS, 4, seed=1)
    acq = AcquisitionSpec(coils=4, R=2, frames=3, psi_true=np.eye(4), seed=9)
    ser = np.stack([base] * 3)
    np.testing.assert_array_equal(acquire(ser, coils, acq).data, acquire(ser, coils, acq).data)
    # frames are drawn from independent per-frame streams
    one = acquire(ser[1:2], coils, acq).data[:, 0]
    assert not np.allclose(one, acquire(ser, coils, acq).data[:, 1])


def test_series_examples():
    base = make_phantom(head_phantom(DIMS))
    flat = make_series(base, AcquisitionSpec(frames=5))
    assert all(np.array_equal(f, base) for f in flat)
    np.testing.assert_array_equal(make_series(base, AcquisitionSpec(frames=1))[0], base)
    n = 11
    ser = make_series(base, AcquisitionSpec(frames=n, drift=0.01))
    for t in range(n - 1):
        step = np.linalg.norm(ser[t + 1] - ser[t]) / np.linalg.norm(ser[t])
        # exact value 0.01 / (n-1) / (1 + 0.01 t/(n-1))
        assert step == pytest.approx(0.01 / (n - 1) / (1 + 0.01 * t / (n - 1)), rel=1e-10)


def test_activation_blocks():
    base = make_phantom(head_phantom(DIMS))
    region = Ellipsoid((0.25, -0.1, 0.0), (0.3, 0.3, 0.4))
    ser = make_series(base, AcquisitionSpec(frames=16, activation=0.05, activation_region=region))
    mask = ellipsoid_mask(DIMS, region) & (np.abs(base) > 0)
    outside = ~ellipsoid_mask(DIMS, region)
    assert np.allclose(ser[:, outside], base[outside])
    rel = np.abs(ser[:, mask] / base[mask] - 1).max(axis=1)
    assert rel.max() == pytest.approx(0.05, rel=0.2)
    assert rel.min() < 0.01


def test_end_to_end_identifiability():
    base = make_phantom(head_phantom(DIMS))
    coils = make_coils(DIMS, 4, seed=2, R=2, support=np.abs(base) > 0)
    sens = estimate_sensitivities(reference_coil_images(base, coils))
    np.testing.assert_allclose(sens, coils, atol=1e-12)
    acq = AcquisitionSpec(coils=4, R=2, frames=2, drift=0.05)
    ser = make_series(base, acq)
    d = acquire(ser, coils, acq)
    rec = sense_wls(d, EncodingOperator.from_sens(sens, 2), NoiseCovariance(np.eye(4)))
    assert nmse(rec, ser) <= 1e-10


def test_noise_scan():
    acq = AcquisitionSpec(coils=2, psi_true=np.array([[4.0, 1.0], [1.0, 2.0]]), seed=1)
    n = noise_scan(acq, 50_000)
    assert n.shape == (2, 50_000)
    np.testing.assert_allclose(estimate_noise_cov(n).psi, acq.psi_true, atol=0.1)
    with pytest.raises(ValueError):
        noise_scan(AcquisitionSpec(), 10)
