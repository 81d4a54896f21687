"""Far-field assembly, noise, angular resampling, and serialization."""

import math

import numpy as np
import pytest

from lsmnet.forward import (FarFieldMatrix, add_noise, disk_farfield,
                            farfield_to_csv, fourier_resample,
                            incidence_angles, observation_angles,
                            operator_eigenvalues_disk, read_farfield,
                            spectral_norm, write_farfield)

K = 2.0 * np.pi


def test_angle_grids():
    theta = observation_angles(8)
    np.testing.assert_allclose(theta, 2.0 * np.pi * np.arange(8) / 8)
    with pytest.raises(ValueError):
        observation_angles(3)
    with pytest.raises(ValueError):
        incidence_angles(0)


def test_matrix_validation():
    entries = np.ones((6, 5), dtype=complex)
    ff = FarFieldMatrix.from_entries(entries, K)
    assert ff.shape == (6, 5)
    with pytest.raises(ValueError):
        FarFieldMatrix(entries, observation_angles(6) + 0.1,
                       incidence_angles(5), K)
    with pytest.raises(ValueError):
        FarFieldMatrix.from_entries(entries, -1.0)
    bad = entries.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        FarFieldMatrix.from_entries(bad, K)


def test_centered_disk_depends_on_angle_difference():
    """For a centered disk the entry is a function of theta - phi only."""
    ff = disk_farfield((0.0, 0.0), 1.0, K, 24, 24)
    for shift in (1, 5, 11):
        rolled = np.roll(np.roll(ff.entries, shift, axis=0), shift, axis=1)
        np.testing.assert_allclose(rolled, ff.entries, rtol=0, atol=1e-13)


def test_translation_leaves_singular_values():
    """Moving the obstacle only rotates the singular vectors.

    The tail singular values sit at the round-off floor of the matrix,
    so the comparison is relative to the largest one, which is the only
    scale the decomposition resolves against.
    """
    centered = disk_farfield((0.0, 0.0), 0.7, K, 40, 40)
    moved = disk_farfield((1.0, 0.5), 0.7, K, 40, 40)
    s0 = np.linalg.svd(centered.entries, compute_uv=False)
    s1 = np.linalg.svd(moved.entries, compute_uv=False)
    np.testing.assert_allclose(s1, s0, rtol=0, atol=1e-10 * s0[0])


def test_circulant_eigenvalues_match_closed_form():
    """Matrix eigenvalues x (2 pi / n) recover the operator eigenvalues.

    The centered-disk matrix with m = n is circulant, so its spectrum is
    the DFT of the first column; each mode p carries the closed-form
    lambda_p scaled by n/(2 pi).  The radius keeps lambda_15 well above
    the DFT round-off floor of the large modes, which is what limits
    how small an eigenvalue a 1e-8 relative comparison can reach.
    """
    n = 50
    radius = 1.5
    ff = disk_farfield((0.0, 0.0), radius, K, n, n)
    eig = np.fft.fft(ff.entries[:, 0]) * (2.0 * np.pi / n)
    lam = operator_eigenvalues_disk(radius, K, 15)
    for p in range(16):
        np.testing.assert_allclose(eig[(n - p) % n], lam[p], rtol=1e-8)
        np.testing.assert_allclose(eig[p], lam[p], rtol=1e-8)


def test_truncation_guard():
    with pytest.raises(ValueError):
        disk_farfield((0.0, 0.0), 1.0, K, 8, 8, truncation=10)
    disk_farfield((0.0, 0.0), 1.0, K, 8, 8, truncation=16)


def test_eigenvalue_decay_and_tail():
    """Super-exponential decay beyond p ~ kR, and lambda_0 -> 0 with kR.

    The small-obstacle limit is logarithmic (J_0/H_0 dies like 1/ln kR
    while the prefactor is fixed by k), so the vanishing is asserted as
    a strictly decreasing sequence over shrinking radii, not a tight
    absolute bound.
    """
    lam = operator_eigenvalues_disk(0.5, K, 15)
    mags = np.abs(lam)
    start = math.ceil(K * 0.5) + 1
    assert np.all(np.diff(mags[start:]) < 0.0)
    assert mags[15] < 1e-6 * mags[0]
    shrinking = [abs(operator_eigenvalues_disk(r, K, 0)[0])
                 for r in (1.0, 1e-2, 1e-4, 1e-6, 1e-8)]
    assert np.all(np.diff(shrinking) < 0.0)
    assert shrinking[-1] < 0.25


def test_eigenvalue_large_order_asymptotics():
    """lambda_p approaches its factorial/power closed form.

    At k = 1 (kR = 0.5) order 12 is deep in the asymptotic regime and
    the ratio is within 10%.  At k = 2 pi the prefactor error at p = 12
    is still tens of percent, so there the test asserts convergence:
    the ratio error shrinks monotonically over p = 12..15.
    """
    radius = 0.5

    def ratio_error(k, p):
        lam = operator_eigenvalues_disk(radius, k, p)[p]
        closed = -math.sqrt(8.0 * math.pi ** 3 / k) * np.exp(1j * np.pi / 4) \
            / (math.factorial(p) * math.factorial(p - 1)) \
            * (k * radius / 2.0) ** (2 * p)
        return abs(lam / closed - 1.0)

    assert ratio_error(1.0, 12) < 0.10
    errors = [ratio_error(K, p) for p in range(12, 31)]
    assert np.all(np.diff(errors) < 0.0)


def test_noise_zero_eta():
    ff = disk_farfield((0.0, 0.0), 1.0, K, 12, 12)
    noisy, realization = add_noise(ff, 0.0, seed=3)
    np.testing.assert_array_equal(noisy.entries, ff.entries)
    assert realization.delta == 0.0


def test_noise_seed_determinism():
    ff = disk_farfield((0.2, 0.0), 0.8, K, 10, 14)
    first, r1 = add_noise(ff, 0.1, seed=42)
    second, r2 = add_noise(ff, 0.1, seed=42)
    np.testing.assert_array_equal(first.entries, second.entries)
    assert r1.delta == r2.delta
    third, _ = add_noise(ff, 0.1, seed=43)
    assert not np.array_equal(third.entries, first.entries)


def test_noise_mean_square_level():
    """E ||perturbation||_F^2 = 2 eta^2 ||F||_F^2 within 10% over seeds."""
    ff = disk_farfield((0.0, 0.0), 1.0, K, 20, 20)
    eta = 0.1
    reference = 2.0 * eta ** 2 * np.linalg.norm(ff.entries, "fro") ** 2
    total = 0.0
    for seed in range(200):
        noisy, _ = add_noise(ff, eta, seed=seed)
        total += np.linalg.norm(noisy.entries - ff.entries, "fro") ** 2
    assert abs(total / 200.0 / reference - 1.0) < 0.10


def test_noise_delta_positive_and_stable():
    ff = disk_farfield((0.0, 0.0), 1.0, K, 16, 16)
    deltas = []
    for seed in range(24):
        noisy, realization = add_noise(ff, 0.05, seed=seed)
        assert realization.delta > 0.0
        assert realization.delta == pytest.approx(
            spectral_norm(noisy.entries - ff.entries), rel=1e-12)
        deltas.append(realization.delta)
    assert max(deltas) / min(deltas) < 2.0


def test_resample_constant():
    entries = np.full((8, 8), 2.0 - 1.0j)
    ff = FarFieldMatrix.from_entries(entries, K)
    up = fourier_resample(ff, 12, 20)
    np.testing.assert_allclose(up.entries, 2.0 - 1.0j, rtol=0, atol=1e-13)
    assert up.shape == (12, 20)


def test_resample_band_limited_exact():
    """A single Fourier mode resamples to its exact values on any grid."""
    theta = observation_angles(8)
    phi = incidence_angles(8)
    entries = np.exp(1j * theta)[:, None] * np.exp(-2j * phi)[None, :]
    ff = FarFieldMatrix.from_entries(entries, K)
    up = fourier_resample(ff, 16, 16)
    theta2 = observation_angles(16)
    phi2 = incidence_angles(16)
    expected = np.exp(1j * theta2)[:, None] * np.exp(-2j * phi2)[None, :]
    np.testing.assert_allclose(up.entries, expected, rtol=0, atol=1e-12)


def test_resample_round_trip():
    rng = np.random.default_rng(0)
    entries = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
    ff = FarFieldMatrix.from_entries(entries, K)
    back = fourier_resample(fourier_resample(ff, 60, 60), 30, 30)
    np.testing.assert_allclose(back.entries, entries, rtol=0, atol=1e-12)


def test_resample_preserves_dc():
    rng = np.random.default_rng(5)
    entries = rng.standard_normal((12, 10)) + 1j * rng.standard_normal((12, 10))
    ff = FarFieldMatrix.from_entries(entries, K)
    down = fourier_resample(ff, 6, 4)
    assert np.mean(down.entries) == pytest.approx(np.mean(entries),
                                                  rel=1e-12)


def test_resample_same_shape_copies():
    ff = disk_farfield((0.0, 0.0), 1.0, K, 10, 10)
    same = fourier_resample(ff, 10, 10)
    np.testing.assert_array_equal(same.entries, ff.entries)
    assert same.entries is not ff.entries


def test_farfield_file_round_trip(tmp_path):
    ff = disk_farfield((0.4, -0.1), 0.9, K, 14, 10)
    path = tmp_path / "field.bin"
    write_farfield(path, ff)
    back = read_farfield(path)
    np.testing.assert_array_equal(back.entries, ff.entries)
    assert back.k == ff.k
    assert back.shape == ff.shape


def test_farfield_io_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError):
        read_farfield(path)


def test_farfield_csv_export(tmp_path):
    ff = disk_farfield((0.0, 0.0), 1.0, K, 4, 4)
    path = tmp_path / "field.csv"
    farfield_to_csv(path, ff)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "i,j,re,im"
    assert len(lines) == 1 + 16
    i, j, re, im = lines[1].split(",")
    assert (int(i), int(j)) == (0, 0)
    assert complex(float(re), float(im)) == pytest.approx(ff.entries[0, 0])
