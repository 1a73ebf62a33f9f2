from __future__ import annotations

import numpy as np
import pytest

from marom.core.errors import DataError
from marom.schemas.configs import LhsConfig
from marom.services.bench import BEAM_BOUNDS, beam_fields_hi, uniform_grid
from marom.services.fields import SnapshotMatrix
from marom.services.pod import (
    fit_pod,
    load_basis,
    project,
    reconstruct,
    ric_curve,
    select_rank,
    save_basis,
)
from marom.services.sampling import lhs_maximin


def _random_snapshots(seed: int, d: int = 201, n: int = 50) -> SnapshotMatrix:
    rng = np.random.default_rng(seed)
    return SnapshotMatrix(rng.normal(size=(d, n)) + rng.normal(size=(d, 1)))


def _spectrum_snapshots(eigenvalues: list[float], d: int = 30, n: int = 12, seed: int = 0) -> SnapshotMatrix:
    """Snapshots whose sample covariance has exactly the given nonzero spectrum."""
    rng = np.random.default_rng(seed)
    r = len(eigenvalues)
    u, _ = np.linalg.qr(rng.normal(size=(d, r)))
    raw = rng.normal(size=(n, r))
    raw -= raw.mean(axis=0)
    v, _ = np.linalg.qr(raw)
    sigma = np.sqrt(n * np.asarray(eigenvalues))
    return SnapshotMatrix(u @ np.diag(sigma) @ v.T + 3.0)


def _beam_snapshots(n: int = 50) -> SnapshotMatrix:
    designs = lhs_maximin(LhsConfig(n=n, bounds=list(BEAM_BOUNDS), seed=2))
    return SnapshotMatrix(beam_fields_hi(designs.values, "displacement", uniform_grid(201)))


def test_rank_one_data_gives_single_positive_mode():
    v = np.array([0.5, -2.0, 1.0, 0.0])
    coeffs = np.array([-1.0, 0.5, 2.0, -1.5])
    snaps = SnapshotMatrix(np.outer(v, coeffs) + np.array([[1.0], [2.0], [3.0], [4.0]]))
    basis = fit_pod(snaps, ric_threshold=0.999999)
    assert basis.k == 1
    assert basis.achieved_ric == pytest.approx(1.0, abs=1e-12)
    expected = -v / np.linalg.norm(v)  # largest-magnitude entry made positive
    np.testing.assert_allclose(basis.modes[:, 0], expected, atol=1e-12)


def test_select_rank_partial_sums():
    assert select_rank(np.array([9.0, 0.9, 0.09, 0.01]), 0.999) == 3
    assert select_rank(np.array([9.0, 0.9, 0.09, 0.01]), 0.99) == 2
    assert select_rank(np.array([9.0, 0.9, 0.09, 0.01]), 1.0) == 4


def test_fit_pod_ric_on_constructed_spectrum():
    snaps = _spectrum_snapshots([9.0, 0.9, 0.09, 0.01])
    basis = fit_pod(snaps, ric_threshold=0.999)
    assert basis.k == 3
    assert basis.rank == 4
    np.testing.assert_allclose(basis.eigenvalues, [9.0, 0.9, 0.09, 0.01], rtol=1e-10)
    assert basis.achieved_ric == pytest.approx(0.999, abs=1e-12)


def test_beam_reconstruction_error_within_ric_bound():
    snaps = _beam_snapshots()
    basis = fit_pod(snaps, ric_threshold=0.999999)
    recon = reconstruct(basis, project(basis, snaps))
    rel = np.linalg.norm(recon.values - snaps.values) / np.linalg.norm(snaps.values)
    assert rel <= 1e-3


def test_project_mean_and_mode_offsets():
    snaps = _random_snapshots(3, d=40, n=15)
    basis = fit_pod(snaps, fixed_k=5)
    np.testing.assert_allclose(project(basis, basis.mean), np.zeros((5, 1)), atol=1e-12)
    z = project(basis, basis.mean + 2.0 * basis.modes[:, 0])
    np.testing.assert_allclose(z[:, 0], [2.0, 0.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_project_matches_explicit_product():
    snaps = _random_snapshots(4)
    basis = fit_pod(snaps, fixed_k=8)
    centered = snaps.values - snaps.values.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(project(basis, snaps), basis.modes.T @ centered, atol=1e-12)


def test_reconstruct_zero_latent_is_mean():
    basis = fit_pod(_random_snapshots(5, d=20, n=8), fixed_k=3)
    out = reconstruct(basis, np.zeros((3, 4)))
    np.testing.assert_array_equal(out.values, np.repeat(basis.mean[:, None], 4, axis=1))


def test_full_rank_round_trip_reproduces_training_set():
    snaps = _random_snapshots(6, d=60, n=20)
    basis = fit_pod(snaps, ric_threshold=1.0)
    assert basis.k == basis.rank == 19
    recon = reconstruct(basis, project(basis, snaps))
    assert np.linalg.norm(recon.values - snaps.values) <= 1e-10 * np.linalg.norm(snaps.values)


def test_truncation_residual_matches_discarded_eigenvalues():
    snaps = _random_snapshots(7)
    basis = fit_pod(snaps, fixed_k=10)
    recon = reconstruct(basis, project(basis, snaps))
    residual = float(np.sum((snaps.values - recon.values) ** 2))
    expected = snaps.n * float(basis.eigenvalues[10:].sum())
    assert residual == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("seed", range(50))
def test_basis_properties_on_random_matrices(seed):
    snaps = _random_snapshots(seed)
    basis = fit_pod(snaps, ric_threshold=0.9)
    assert np.max(np.abs(basis.modes.T @ basis.modes - np.eye(basis.k))) <= 1e-10
    centered = snaps.values - snaps.values.mean(axis=1, keepdims=True)
    total = float(np.sum(centered**2)) / snaps.n
    assert float(basis.eigenvalues.sum()) == pytest.approx(total, rel=1e-10)
    assert np.all(np.diff(basis.eigenvalues) <= 0.0)
    assert np.all(np.diff(ric_curve(basis.eigenvalues)) >= 0.0)
    assert basis.achieved_ric == pytest.approx(ric_curve(basis.eigenvalues)[basis.k - 1], abs=1e-12)


def test_project_reconstruct_idempotent(rng):
    basis = fit_pod(_random_snapshots(8), fixed_k=6)
    z = rng.normal(size=(6, 9))
    np.testing.assert_allclose(project(basis, reconstruct(basis, z)), z, atol=1e-11)


def test_repeated_fits_are_identical():
    snaps = _random_snapshots(9)
    a = fit_pod(snaps, ric_threshold=0.99)
    b = fit_pod(snaps, ric_threshold=0.99)
    np.testing.assert_array_equal(a.modes, b.modes)
    pivots = np.argmax(np.abs(a.modes), axis=0)
    assert np.all(a.modes[pivots, np.arange(a.k)] > 0)


def test_fit_pod_errors():
    with pytest.raises(DataError) as exc:
        fit_pod(SnapshotMatrix(np.ones((4, 1))), ric_threshold=0.9)
    assert exc.value.code == "INSUFFICIENT_SAMPLES"
    with pytest.raises(DataError) as exc:
        fit_pod(SnapshotMatrix(np.full((4, 5), 2.5)), ric_threshold=0.9)
    assert exc.value.code == "ZERO_VARIANCE"
    snaps = _spectrum_snapshots([4.0, 1.0])
    with pytest.raises(DataError) as exc:
        fit_pod(snaps, fixed_k=3)
    assert exc.value.code == "RANK_EXCEEDED"
    assert "3" in exc.value.message and "2" in exc.value.message


def test_padding_completes_low_rank_basis():
    snaps = _spectrum_snapshots([4.0])
    basis = fit_pod(snaps, fixed_k=3, allow_padding=True)
    assert basis.k == 3
    assert basis.rank == 1
    assert basis.achieved_ric == pytest.approx(1.0)
    np.testing.assert_allclose(basis.modes.T @ basis.modes, np.eye(3), atol=1e-10)
    z = project(basis, snaps)
    assert np.max(np.abs(z[1:])) <= 1e-10 * np.max(np.abs(z[0]))


def test_project_dimension_mismatch():
    basis = fit_pod(_random_snapshots(10, d=20, n=6), fixed_k=2)
    with pytest.raises(DataError) as exc:
        project(basis, np.zeros((19, 3)))
    assert exc.value.code == "DIMENSION_MISMATCH"
    with pytest.raises(DataError):
        reconstruct(basis, np.zeros((3, 2)))


def test_basis_save_load(tmp_path):
    basis = fit_pod(_random_snapshots(11, d=25, n=7), ric_threshold=0.95)
    files = save_basis(basis, tmp_path, "hi_basis")
    assert files == ["hi_basis.json", "hi_basis_modes.csv", "hi_basis_mean.csv"]
    loaded = load_basis(tmp_path, "hi_basis")
    np.testing.assert_array_equal(loaded.modes, basis.modes)
    np.testing.assert_array_equal(loaded.mean, basis.mean)
    np.testing.assert_array_equal(loaded.eigenvalues, basis.eigenvalues)
    assert loaded.achieved_ric == basis.achieved_ric
