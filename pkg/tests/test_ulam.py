import json

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from pseudogen import langevin as sim
from pseudogen import ulam
from pseudogen.potential import DynamicsParams, builtin_double_well, builtin_four_well, zero_potential

P1 = DynamicsParams(1.0, 1.0)


@pytest.fixture(scope="module")
def dw_run():
    spec = builtin_double_well()
    part = ulam.build_partition(1, 64, spec, P1)
    mats = ulam.estimate_spatial_ulam(part, spec, P1, [0.05, 0.1], 400, sim.SamplerConfig(seed=3))
    return part, mats


def test_partition_geometry():
    part = ulam.build_partition(1, 4, zero_potential(1), P1)
    assert np.allclose(part.lower[:, 0], [0, 0.25, 0.5, 0.75])
    assert np.array_equal(part.box_index(np.array([0.0, 0.2499, 0.25, 0.99999, 1.0, -0.1])), [0, 0, 1, 3, 0, 3])
    assert np.allclose(part.masses, 0.25, atol=1e-12)
    part2 = ulam.build_partition(2, 5, zero_potential(2), P1)
    assert np.allclose(part2.masses, 1 / 25, atol=1e-12)
    assert part2.box_index(np.array([[0.25, 0.45]]))[0] == 1 + 5 * 2
    with pytest.raises(ValueError):
        ulam.build_partition(1, 1, zero_potential(1), P1)


def test_masses_normalized_and_peak_in_well():
    part = ulam.build_partition(1, 16, builtin_double_well(), P1)
    assert abs(part.masses.sum() - 1) <= 1e-10
    qmin = np.arccos(1 - np.sqrt(2)) / (2 * np.pi)
    i = int(np.argmax(part.masses))
    lo = part.lower[i, 0]
    assert lo <= qmin < lo + part.width or lo <= 1 - qmin < lo + part.width
    fw = ulam.build_partition(2, 8, builtin_four_well(), P1)
    assert abs(fw.masses.sum() - 1) <= 1e-10


def test_one_step_is_nearly_identity():
    spec = builtin_double_well()
    part = ulam.build_partition(1, 16, spec, P1)
    um = ulam.estimate_spatial_ulam(part, spec, P1, 1e-3, 200, sim.SamplerConfig(seed=1))
    assert np.min(np.diag(um.matrix)) >= 0.9


def test_rows_exactly_stochastic(dw_run):
    part, mats = dw_run
    for um in mats:
        assert np.all(um.counts.sum(axis=1) == um.samples_per_box)
        assert np.max(np.abs(um.matrix.sum(axis=1) - 1)) <= 1e-15
        assert np.all(um.matrix >= 0)
        assert np.array_equal(um.batch_counts.sum(axis=0), um.counts)
        lam = np.linalg.eigvals(um.matrix)
        assert np.max(np.abs(lam)) <= 1 + 1e-12
        res = ulam.ulam_spectrum(um, 4)
        assert abs(res.eigenvalues[0] - 1) <= 1e-12
        assert res.stderr is not None and np.all(res.stderr[1:] > 0)


def test_multi_lag_run_equals_single_lag_run(dw_run):
    part, mats = dw_run
    spec = builtin_double_well()
    single = ulam.estimate_spatial_ulam(part, spec, P1, 0.1, 400, sim.SamplerConfig(seed=3))
    assert np.array_equal(single.counts, mats[1].counts)


def test_reversibility_witness(dw_run):
    for um in dw_run[1]:
        asym, noise = ulam.flux_asymmetry(um)
        assert asym <= 5 * noise


def test_galerkin_similarity_two_boxes():
    part = ulam.BoxPartition(1, 2, np.array([0.3, 0.7]))
    P = np.array([[0.9, 0.1], [3 / 70, 1 - 3 / 70]])
    um = ulam.UlamMatrix("UlamS", 0.1, P, np.zeros((2, 2)), np.zeros((1, 2, 2)), 1, 0, part, P1, 1e-3)
    G = ulam.galerkin_matrix(um)
    assert np.allclose(np.sort(np.linalg.eigvals(G)), np.sort(np.linalg.eigvals(P)))
    # detailed balance makes the flux matrix symmetric
    F = ulam.flux_matrix(um)
    assert np.allclose(F, F.T)
    assert np.allclose(G.sum(axis=0) * 0 + part.masses @ P, part.masses)


def test_smoluchowski_row_matches_heat_kernel():
    n_box, M, t, beta = 16, 4000, 0.005, 1.0
    params = DynamicsParams(beta, 1.0)
    part = ulam.build_partition(1, n_box, zero_potential(1), params)
    um = ulam.estimate_smoluchowski_ulam(part, zero_potential(1), params, t, M, sim.SamplerConfig(seed=4))
    sigma = np.sqrt(2 * t / beta)
    x, w = np.polynomial.legendre.leggauss(32)
    h = 1.0 / n_box
    i = 5
    starts = (i + (x + 1) / 2) * h
    expected = np.zeros(n_box)
    for j in range(n_box):
        a, b = j * h, (j + 1) * h
        acc = np.zeros_like(starts)
        for k in range(-3, 4):
            acc += ndtr((b + k - starts) / sigma) - ndtr((a + k - starts) / sigma)
        expected[j] = np.sum(w / 2 * acc)
    counts = um.counts[i]
    keep = expected * M >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum()) * M
    assert stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 0.01


def test_refinement_consistency():
    spec = builtin_double_well()
    lam = []
    for n_box in (64, 128):
        part = ulam.build_partition(1, n_box, spec, P1)
        um = ulam.estimate_spatial_ulam(part, spec, P1, 0.1, 500, sim.SamplerConfig(seed=5))
        lam.append(ulam.ulam_spectrum(um, 2).eigenvalues[1].real)
    assert abs(lam[0] - lam[1]) <= 0.03


def test_zero_mass_box_and_bad_inputs():
    part = ulam.BoxPartition(1, 2, np.array([1.0, 0.0]))
    with pytest.raises(sim.SamplingError):
        ulam.estimate_spatial_ulam(part, zero_potential(1), P1, 0.1, 10, sim.SamplerConfig())
    good = ulam.build_partition(1, 2, zero_potential(1), P1)
    with pytest.raises(ValueError):
        ulam.estimate_spatial_ulam(good, zero_potential(1), P1, 0.1, 0, sim.SamplerConfig())
    with pytest.raises(ValueError):
        ulam.estimate_spatial_ulam(good, zero_potential(1), P1, -0.1, 5, sim.SamplerConfig())


def test_save_two_box_matrix(tmp_path):
    spec = builtin_double_well()
    part = ulam.build_partition(1, 2, spec, P1)
    um = ulam.estimate_spatial_ulam(part, spec, P1, 0.1, 50, sim.SamplerConfig(seed=6))
    csv, side = ulam.save_ulam(um, tmp_path / "u.csv")
    lines = csv.read_text().splitlines()
    assert lines[0] == "j0,j1" and len(lines) == 3
    assert np.allclose(np.loadtxt(csv, delimiter=",", skiprows=1), um.matrix, rtol=1e-11)
    meta = json.loads(side.read_text())
    assert meta["kind"] == "UlamS" and meta["M"] == 50 and meta["N"] == 2
