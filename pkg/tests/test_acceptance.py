"""Acceptance criteria at their stated tolerances.

Each test records a PASS/FAIL line that is repeated in the pytest terminal
summary. Criteria that fail are left failing; see the decision log.
"""

import time
import warnings

import numpy as np
import pytest

from pseudogen import cli
from pseudogen import collocation as col
from pseudogen import convergence as conv
from pseudogen import metastability as meta
from pseudogen import ulam
from pseudogen.config import build_config
from pseudogen.potential import DynamicsParams, zero_potential

pytestmark = pytest.mark.acceptance

FOUR_WELL_TOP6 = np.array([0.9974, 0.9053, 0.8950, 0.8122, 0.4063, 0.3647])
BOUND_LAGS = (0.1, 0.2, 0.3, 0.5)


def lag_index(lags, t):
    return int(np.argmin(np.abs(np.asarray(lags) - t)))


@pytest.fixture(scope="module")
def dw(tmp_path_factory):
    """Double-well collocation plus the N=256, M=4000 Ulam reference."""
    cfg = build_config(preset="double-well", out=str(tmp_path_factory.mktemp("dw")))
    s = cli._setup(cfg)
    g2, g2s = cli._collocation(s)
    boxes, mats, spectra = cli.run_reference(s, cfg.lags)
    return s, g2, g2s, boxes, mats, spectra


@pytest.fixture(scope="module")
def fw(tmp_path_factory):
    cfg = build_config(preset="four-well", lags=[0.1], out=str(tmp_path_factory.mktemp("fw")))
    s = cli._setup(cfg)
    g2, _ = cli._collocation(s)
    _, _, spectra = cli.run_reference(s, [0.1])
    return s, g2, spectra[0]


def test_criterion_1_free_diffusion(record):
    start = time.perf_counter()
    g2 = col.assemble_g2(col.build_grid(1, 33), zero_potential(1), DynamicsParams(1.0, 1.0))
    lam = np.sort(np.linalg.eigvals(g2.matrix).real)
    elapsed = time.perf_counter() - start
    exact = np.sort(-(2 * np.pi * np.arange(-16, 17)) ** 2.0)
    err = np.max(np.abs(lam - exact))
    ok = err <= 1e-8 and elapsed < 1.0
    assert record(1, ok, f"max |lambda - exact| = {err:.2e} (<= 1e-8), {elapsed:.3f} s")


def test_criterion_2_kernel_and_stochasticity(dw, record):
    s, g2, _, _, mats, _ = dw
    m = g2.matrix
    kernel = np.max(np.abs(m @ np.ones(len(m)))) / np.max(np.abs(m).sum(axis=1))
    rows = max(np.max(np.abs(col.assemble_et(g2, t).matrix.sum(axis=1) - 1)) for t in (0.1, 0.5, 1.0))
    exact = all(np.all(u.counts.sum(axis=1) == u.samples_per_box) for u in mats)
    dev = max(np.max(np.abs(u.matrix.sum(axis=1) - 1)) for u in mats)
    ok = kernel <= 1e-12 and rows <= 1e-10 and exact and dev <= 1e-14
    assert record(2, ok, f"|G2 1|/|G2| = {kernel:.1e}, E^t rows {rows:.1e}, Ulam count rows exact={exact}, float dev {dev:.0e} (<= 1e-14)")


def test_criterion_3_double_well_reference(dw, record):
    lags, spectra = dw[0].cfg.lags, dw[5]
    l01 = spectra[lag_index(lags, 0.1)].eigenvalues[1].real
    l1 = spectra[lag_index(lags, 1.0)].eigenvalues[1].real
    ok = abs(l01 - 0.9428) <= 0.03 and abs(l1 - 0.6620) <= 0.04
    assert record(3, ok, f"lambda2(S^0.1) = {l01:.4f} (0.9428 +- 0.03), lambda2(S^1) = {l1:.4f} (0.6620 +- 0.04)")


@pytest.fixture(scope="module")
def errors(dw):
    s, g2, g2s, _, _, spectra = dw
    return cli.compare_tables(s, g2, g2s, s.cfg.lags, spectra)


def test_criterion_4_exponential_reconstruction(dw, errors, record):
    s, g2, *_ = dw
    _, rows, _, eps_e, se = errors
    row = rows[lag_index(s.cfg.lags, 0.1)]
    d = abs(row[6] - row[4])
    fit = conv.loglog_slope(s.cfg.lags, eps_e, se, s.cfg.window)
    ok = d <= 0.03 and fit.ok and fit.slope >= 2.5
    assert record(4, ok, f"|dlambda2(0.1)| = {d:.4f} (<= 0.03), eps_E slope {fit.slope:.2f} (>= 2.5) "
                         f"on {fit.n_points} points in [{fit.window[0]:g}, {fit.window[1]:g}]")


def test_criterion_5_taylor_reconstruction(dw, errors, record):
    s, g2, g2s, *_ = dw
    _, _, eps_r, _, se = errors
    fit = conv.loglog_slope(s.cfg.lags, eps_r, se, s.cfg.window)
    ident = 0.0
    for t in s.cfg.lags:
        rt = col.solve_spectrum(col.assemble_rt(g2, t, s.params), s.cfg.k).eigenvalues
        pred = 1 + col.taylor_factor(t, s.params.gamma) * g2s.eigenvalues
        ident = max(ident, np.max(np.abs(rt - pred)))
    ok = fit.ok and fit.slope >= 3.5 and ident <= 1e-10
    assert record(5, ok, f"eps_R slope {fit.slope:.2f} (>= 3.5) on {fit.n_points} points, "
                         f"affine identity {ident:.1e} (<= 1e-10)")


def test_criterion_6_smoluchowski_rescaling(dw, record):
    s, g2, *_ = dw
    ts = (0.3, 0.6)
    _, _, sspec = cli.run_reference(s, [t * t / 2 for t in ts], "UlamSmol")
    parts, ok = [], True
    for t, sp in zip(ts, sspec):
        le = col.solve_spectrum(col.assemble_et(g2, t), s.cfg.k).eigenvalues[1].real
        ls = sp.eigenvalues[1].real
        ok &= abs(le - ls) <= 0.03
        parts.append(f"t={t:g}: Smol {ls:.4f} vs E {le:.4f}")
    assert record(6, ok, "; ".join(parts) + " (+- 0.03)")


def test_criterion_7_four_well(fw, record):
    s, g2, usp = fw
    et = col.solve_spectrum(col.assemble_et(g2, 0.1), s.cfg.k)
    gap_e = meta.spectral_gap(et.eigenvalues)
    gap_u = meta.spectral_gap(usp.eigenvalues)
    dev = np.max(np.abs(usp.eigenvalues[:6].real - FOUR_WELL_TOP6))
    ok = gap_e == 4 and gap_u == 4 and dev <= 0.04
    top = ", ".join(f"{x:.4f}" for x in usp.eigenvalues[:6].real)
    assert record(7, ok, f"gap E^0.1 = {gap_e}, gap Ulam = {gap_u}, top six [{top}] max dev {dev:.4f} (<= 0.04)")


def test_criterion_8_partition(dw, record):
    s, g2, g2s, *_ = dw
    part = meta.sign_partition(g2s)
    x = g2s.points[:, 0]
    h = 1.0 / s.cfg.n
    pos = part.labels == 0
    halves = np.all(pos[(x > h) & (x < 0.5 - h)]) and not np.any(pos[(x > 0.5 + h) & (x < 1 - h)])
    same = True
    for t in s.cfg.lags:
        for op in (col.assemble_rt(g2, t, s.params), col.assemble_et(g2, t)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                other = meta.sign_partition(col.solve_spectrum(op, s.cfg.k), part.n_sets)
            same &= np.array_equal(other.labels, part.labels)
    ok = part.n_sets == 2 and halves and same
    assert record(8, ok, f"{part.n_sets} sets, halves up to one cell={halves}, identical across G2/R^t/E^t={same}")


def test_criterion_9_bound_containment(dw, record):
    s, g2, g2s, _, _, spectra = dw
    part = meta.sign_partition(g2s)
    mc = meta.estimate_metastability(part, s.spec, s.params, list(BOUND_LAGS), s.cfg.mc_samples, seed=s.cfg.seed)
    parts, ok = [], True
    for i, t in enumerate(BOUND_LAGS):
        se3 = 3 * mc.sum_stderr[i]
        cands = [("Ulam", spectra[lag_index(s.cfg.lags, t)])]
        if t <= 0.3:
            cands.append(("E^t", col.solve_spectrum(col.assemble_et(g2, t), s.cfg.k)))
        for name, sp in cands:
            b = meta.huisinga_bounds(sp, part)
            inside = b.lower - se3 <= mc.sums[i] <= b.upper + se3
            ok &= inside
            parts.append(f"t={t:g} {name} [{b.lower:.4f}, {b.upper:.4f}] {'ok' if inside else 'OUT'}")
        parts[-1] += f" mc {mc.sums[i]:.4f}+-{mc.sum_stderr[i]:.4f}"
    assert record(9, ok, "; ".join(parts))


def test_criterion_10_reversibility(dw, record):
    s, _, g2s, _, mats, _ = dw
    worst = max(ulam.flux_asymmetry(u)[0] / ulam.flux_asymmetry(u)[1] for u in mats)
    imag = np.max(np.abs(g2s.eigenvalues[:8].imag))
    ok = worst <= 5 and imag <= 1e-8
    assert record(10, ok, f"max flux asymmetry / noise scale = {worst:.2f} (<= 5), max |Im lambda| = {imag:.1e}")
