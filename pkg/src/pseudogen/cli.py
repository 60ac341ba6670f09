"""Command-line driver: ``pseudogen {spectrum,reference,compare,bounds}``.

Every command is a pure function of the validated config (seed included) and
writes headed CSV files, the resolved config and a hash manifest into the
output directory. ``--figures`` additionally renders PNGs from the same data;
``--check`` evaluates the acceptance checks that apply to the command and
exits with status 4 if any fails.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import collocation as col
from . import convergence as conv
from . import io
from . import langevin as sim
from . import metastability as meta
from . import ulam
from .config import ConfigError, ExperimentConfig, load_config
from .potential import DynamicsParams, PotentialError, resolve_potential

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

# published benchmark eigenvalues used by --check
DOUBLE_WELL_LAMBDA2 = {0.1: (0.9428, 0.03), 1.0: (0.6620, 0.04)}
FOUR_WELL_TOP6 = (0.9974, 0.9053, 0.8950, 0.8122, 0.4063, 0.3647)
FOUR_WELL_TOL = 0.04

BOUNDS_HEADER = ["t", "upper", "lower", "mc_sum", "mc_stderr", "source", "lower_unsquared"]


@dataclass
class Outcome:
    files: list = field(default_factory=list)
    checks: list = field(default_factory=list)  # (name, passed, detail)

    def check(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))


@dataclass
class Setup:
    cfg: ExperimentConfig
    spec: object
    params: DynamicsParams
    out: Path
    figures: bool = False

    @property
    def sim_config(self) -> sim.SamplerConfig:
        return sim.SamplerConfig(dt=self.cfg.dt, seed=self.cfg.seed, n_walkers=1)


def _setup(cfg: ExperimentConfig, figures=False) -> Setup:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return Setup(cfg, resolve_potential(cfg.potential), DynamicsParams(cfg.beta, cfg.gamma), out, figures)


def _tag(t: float) -> str:
    return f"{t:g}"


def _collocation(s: Setup):
    grid = col.build_grid(s.spec.dim, s.cfg.n)
    g2 = col.assemble_g2(grid, s.spec, s.params)
    return g2, col.solve_spectrum(g2, s.cfg.k)


def _n_dominant(g2_spec) -> int:
    return meta.spectral_gap(g2_spec.eigenvalues, generator=True)


def _coord_names(dim):
    return [f"q{a}" for a in range(dim)]


def _write_spectrum(path, res: col.SpectrumResult, t=None):
    header = (["t"] if t is not None else []) + ["index", "re_lambda", "im_lambda", "residual"]
    rows = [([t] if t is not None else []) + list(r) for r in res.to_rows()]
    return io.write_csv(path, header, rows)


def _write_eigenvectors(path, res: col.SpectrumResult):
    dim = res.points.shape[1]
    header = _coord_names(dim)
    for j in range(1, len(res) + 1):
        header += [f"v{j}_raw", f"v{j}_weighted"]
    cols = [res.points[:, a] for a in range(dim)]
    for j in range(len(res)):
        cols += [np.real(res.eigenvectors[:, j]), np.real(res.eigenvectors_weighted[:, j])]
    return io.write_csv(path, header, zip(*cols))


def _write_lambda_table(path, ts, spectra):
    k = min(len(sp) for sp in spectra)
    header = ["t"] + [f"lambda_{j}" for j in range(1, k + 1)] + ["max_abs_imag"]
    rows = [
        [t] + list(np.real(sp.eigenvalues[:k])) + [float(np.max(np.abs(sp.eigenvalues[:k].imag)))]
        for t, sp in zip(ts, spectra)
    ]
    return io.write_csv(path, header, rows)


def _finish(s: Setup, command: str, outcome: Outcome) -> Outcome:
    outcome.files.append(io.write_json(s.out / "config.resolved.json", s.cfg.to_dict()))
    outcome.files.append(io.write_manifest(s.out, command, {"seed": s.cfg.seed}))
    return outcome


def _is_benchmark(s: Setup, name: str) -> bool:
    return s.spec.name == name and s.params.beta == 1.0 and s.params.gamma == 1.0


# ---------------------------------------------------------------- spectrum


def cmd_spectrum(cfg: ExperimentConfig, figures: bool = False) -> Outcome:
    """Top-k eigenvalues of G2, R^t and E^t over the lag grid."""
    s = _setup(cfg, figures)
    out = Outcome()
    g2, g2s = _collocation(s)
    out.files.append(_write_spectrum(s.out / "g2_spectrum.csv", g2s))
    out.files.append(_write_eigenvectors(s.out / "g2_eigenvectors.csv", g2s))
    lags = cfg.lags
    rt = [col.solve_spectrum(col.assemble_rt(g2, t, s.params), cfg.k) for t in lags]
    et_ops = [col.assemble_et(g2, t) for t in lags]
    et = [col.solve_spectrum(op, cfg.k) for op in et_ops]
    out.files.append(_write_lambda_table(s.out / "eigenvalues_Rt.csv", lags, rt))
    out.files.append(_write_lambda_table(s.out / "eigenvalues_Et.csv", lags, et))
    curves = {"R^t": np.real([r.eigenvalues for r in rt]), "E^t": np.real([e.eigenvalues for e in et])}
    if cfg.smoluchowski:
        smol = [col.solve_spectrum(col.assemble_et(g2, col.smoluchowski_lag(t)), cfg.k) for t in lags]
        out.files.append(_write_lambda_table(s.out / "eigenvalues_Smol.csv", lags, smol))
        curves["Smoluchowski P^t"] = np.real([e.eigenvalues for e in smol])
    if figures:
        from . import plotting

        out.files.append(plotting.plot_eigenvalue_curves(s.out / "eigenvalues.png", lags, curves))

    A = g2.matrix
    kern = np.max(np.abs(A.sum(axis=1)))
    norm = np.max(np.abs(A).sum(axis=1))
    out.check("G2 kernel", kern <= 1e-12 * norm, f"|G2 1|={kern:.2e}, bound {1e-12 * norm:.2e}")
    for t, op in zip(lags, et_ops):
        dev = np.max(np.abs(op.matrix.sum(axis=1) - 1.0))
        out.check(f"E^{_tag(t)} row sums", dev <= 1e-10, f"max dev {dev:.2e}")
    lam_g2 = g2s.eigenvalues
    for t, r in zip(lags, rt):
        pred = 1.0 + col.taylor_factor(t, s.params.gamma) * lam_g2
        dev = np.max(np.abs(r.eigenvalues - pred))
        out.check(f"R^{_tag(t)} affine identity", dev <= 1e-10, f"max dev {dev:.2e}")
    im = np.max(np.abs(lam_g2[:8].imag))
    out.check("G2 top-8 imaginary parts", im <= 1e-8, f"max {im:.2e}")
    n = _n_dominant(g2s)
    base = meta.sign_partition(g2s, n).labels
    same = all(
        np.array_equal(meta.sign_partition(sp, n).labels, base) for sp in rt + et
    )
    out.check("partition identical across G2, R^t, E^t", same, f"{n} sets")
    if all(term.coef == 0 for term in s.spec.terms):
        kk = np.arange(-(cfg.n // 2), cfg.n // 2 + 1)
        exact = np.sort(-((2 * np.pi * kk) ** 2) / s.params.beta)[::-1]
        full = col.solve_spectrum(g2, cfg.n**s.spec.dim) if s.spec.dim == 1 else None
        if full is not None:
            err = np.max(np.abs(np.sort(full.eigenvalues.real)[::-1] - exact))
            out.check("free diffusion spectrum", err <= 1e-8, f"max err {err:.2e}")
    return _finish(s, "spectrum", out)


# --------------------------------------------------------------- reference


def run_reference(s: Setup, lags, kind="UlamS"):
    part = ulam.build_partition(s.spec.dim, s.cfg.boxes, s.spec, s.params)
    est = ulam.estimate_spatial_ulam if kind == "UlamS" else ulam.estimate_smoluchowski_ulam
    mats = est(part, s.spec, s.params, list(lags), s.cfg.samples, s.sim_config, s.cfg.n_batches)
    k = min(s.cfg.k, part.size)
    return part, mats, [ulam.ulam_spectrum(m, k) for m in mats]


def _write_ulam_results(s: Setup, out: Outcome, prefix, lags, mats, spectra):
    for t, m in zip(lags, mats):
        out.files.extend(ulam.save_ulam(m, s.out / f"{prefix}_matrix_t{_tag(t)}.csv"))
    rows = []
    for t, sp in zip(lags, spectra):
        se = sp.stderr if sp.stderr is not None else np.full(len(sp), np.nan)
        for (i, re, im, res), e in zip(sp.to_rows(), se):
            rows.append([t, i, re, im, e, res])
    out.files.append(io.write_csv(
        s.out / f"{prefix}_spectrum.csv",
        ["t", "index", "re_lambda", "im_lambda", "stderr", "residual"], rows,
    ))


def cmd_reference(cfg: ExperimentConfig, figures: bool = False) -> Outcome:
    """Monte-Carlo Ulam reference for S^t (and optionally Smoluchowski)."""
    s = _setup(cfg, figures)
    out = Outcome()
    lags = cfg.lags
    part, mats, spectra = run_reference(s, lags)
    _write_ulam_results(s, out, "ulam", lags, mats, spectra)
    flux = []
    for t, m in zip(lags, mats):
        asym, noise = ulam.flux_asymmetry(m)
        flux.append([t, asym, noise])
        rows_ok = bool(np.all(m.counts.sum(axis=1) == m.samples_per_box))
        dev = np.max(np.abs(m.matrix.sum(axis=1) - 1.0))
        out.check(f"Ulam t={_tag(t)} rows stochastic", rows_ok and dev <= 1e-14,
                  f"count rows exact={rows_ok}, max dev {dev:.1e}")
        if np.isfinite(noise):
            out.check(f"flux asymmetry t={_tag(t)}", asym <= 5 * noise,
                      f"{asym:.3e} vs 5x noise {5 * noise:.3e}")
    out.files.append(io.write_csv(s.out / "ulam_flux.csv", ["t", "asymmetry", "noise_scale"], flux))
    if cfg.smoluchowski:
        taus = [t * t / 2 for t in lags]
        _, smats, sspec = run_reference(s, taus, "UlamSmol")
        _write_ulam_results(s, out, "ulam_smol", taus, smats, sspec)
    if figures:
        from . import plotting

        k = min(len(sp) for sp in spectra)
        curves = {"Ulam S^t": np.real([sp.eigenvalues[:k] for sp in spectra])}
        out.files.append(plotting.plot_eigenvalue_curves(s.out / "ulam_eigenvalues.png", lags, curves))

    if _is_benchmark(s, "double_well") and cfg.boxes == 256 and s.spec.dim == 1:
        for t, sp in zip(lags, spectra):
            for tb, (val, tol) in DOUBLE_WELL_LAMBDA2.items():
                if abs(t - tb) < 1e-12:
                    lam2 = sp.eigenvalues[1].real
                    out.check(f"lambda2(S^{_tag(t)})", abs(lam2 - val) <= tol,
                              f"{lam2:.4f} vs {val} +- {tol}")
    if _is_benchmark(s, "four_well") and s.spec.dim == 2:
        for t, sp in zip(lags, spectra):
            if abs(t - 0.1) < 1e-12:
                _four_well_checks(s, out, sp)
    return _finish(s, "reference", out)


def _four_well_checks(s: Setup, out: Outcome, ulam_spec):
    gap = meta.spectral_gap(ulam_spec.eigenvalues)
    out.check("four-well Ulam gap index", gap == 4, f"gap after {gap}")
    lam = ulam_spec.eigenvalues[:6].real
    dev = np.max(np.abs(lam - np.array(FOUR_WELL_TOP6)))
    out.check("four-well Ulam top six", dev <= FOUR_WELL_TOL, f"max dev {dev:.4f}")
    g2, _ = _collocation(s)
    et = col.solve_spectrum(col.assemble_et(g2, 0.1), s.cfg.k)
    gap_e = meta.spectral_gap(et.eigenvalues)
    out.check("four-well E^0.1 gap index", gap_e == 4, f"gap after {gap_e}")


# ----------------------------------------------------------------- compare


def compare_tables(s: Setup, g2, g2s, lags, spectra):
    nd = _n_dominant(g2s)
    rows, eps_r, eps_e, se = [], [], [], []
    for t, sp in zip(lags, spectra):
        rt = 1.0 + col.taylor_factor(t, s.params.gamma) * g2s.eigenvalues
        et = col.solve_spectrum(col.assemble_et(g2, t), s.cfg.k).eigenvalues
        er = conv.eigenvalue_error(sp.eigenvalues, rt, nd)
        ee = conv.eigenvalue_error(sp.eigenvalues, et, nd)
        e = conv.error_stderr(sp.stderr, nd)
        eps_r.append(er)
        eps_e.append(ee)
        se.append(e)
        rows.append([t, er, ee, e, sp.eigenvalues[1].real, rt[1].real, et[1].real])
    return nd, rows, np.array(eps_r), np.array(eps_e), np.array(se)


def cmd_compare(cfg: ExperimentConfig, figures: bool = False) -> Outcome:
    """Eigenvalue errors of R^t and E^t against the Ulam reference."""
    s = _setup(cfg, figures)
    out = Outcome()
    lags = cfg.lags
    g2, g2s = _collocation(s)
    _, _, spectra = run_reference(s, lags)
    nd, rows, eps_r, eps_e, se = compare_tables(s, g2, g2s, lags, spectra)
    out.files.append(io.write_csv(
        s.out / "eigenvalue_errors.csv",
        ["t", "eps_R", "eps_E", "stderr", "lambda2_S", "lambda2_R", "lambda2_E"], rows,
    ))
    fits = {
        "eps_R": conv.loglog_slope(lags, eps_r, se, cfg.window),
        "eps_E": conv.loglog_slope(lags, eps_e, se, cfg.window),
    }
    out.files.append(io.write_csv(
        s.out / "slopes.csv",
        ["error", "slope", "intercept", "t_min", "t_max", "n_points", "usable"],
        [[k, f.slope, f.intercept, f.window[0], f.window[1], f.n_points, f.ok] for k, f in fits.items()],
    ))
    if figures:
        from . import plotting

        out.files.append(plotting.plot_errors(s.out / "errors.png", lags, {"eps_R": eps_r, "eps_E": eps_e}, fits))
    for t, row in zip(lags, rows):
        if abs(t - 0.1) < 1e-12:
            d = abs(row[4] - row[6])
            out.check("|lambda2(E^0.1) - lambda2(S^0.1)|", d <= 0.03, f"{d:.4f}")
    fe, fr = fits["eps_E"], fits["eps_R"]
    out.check("slope eps_E >= 2.5", fe.ok and fe.slope >= 2.5, f"{fe.slope:.3f} on {fe.n_points} points {fe.reason}")
    out.check("slope eps_R >= 3.5", fr.ok and fr.slope >= 3.5, f"{fr.slope:.3f} on {fr.n_points} points {fr.reason}")
    out.check("dominant eigenvalues compared", nd >= 2, f"{nd}")
    return _finish(s, "compare", out)


# ------------------------------------------------------------------ bounds


def _write_labels(s: Setup, out: Outcome, name, points, labels):
    header = _coord_names(points.shape[1]) + ["label"]
    cols = [points[:, a] for a in range(points.shape[1])] + [labels]
    out.files.append(io.write_csv(s.out / f"{name}.csv", header, zip(*cols)))
    if s.figures:
        from . import plotting

        out.files.append(plotting.plot_labels(s.out / f"{name}.png", points, labels, name))


def _bounds(sp, part, a_floor, src):
    """Bounds for one source; when the default floor leaves (-1, 0] (only
    possible for the non-Markovian R^t) the lower bound is undefined."""
    a = meta.default_floor(sp) if a_floor is None else a_floor
    if a <= -1.0:
        lam = np.real(sp.eigenvalues[1:part.n_sets])
        rho = meta.projection_norms(sp, part.labels_for(sp), part.n_sets)
        return meta.BoundsResult(sp.t, 1.0 + float(lam.sum()), np.nan, rho, np.nan, a, part.n_sets, src,
                                 caveat="spectrum extends below -1; lower bound undefined")
    return meta.huisinga_bounds(sp, part, a, source=src)


def cmd_bounds(cfg: ExperimentConfig, figures: bool = False) -> Outcome:
    """Metastability bounds from Ulam, E^t and R^t spectra with MC estimates."""
    s = _setup(cfg, figures)
    out = Outcome()
    lags = cfg.lags
    g2, g2s = _collocation(s)
    n = _n_dominant(g2s)
    part = meta.sign_partition(g2s, n)
    boxes, mats, spectra = run_reference(s, lags)
    for i, tier in enumerate(part.tiers, start=1):
        _write_labels(s, out, f"partition_tier{i}_nodes", g2s.points, tier.labels)
        _write_labels(s, out, f"partition_tier{i}_boxes", boxes.centers, part.classify(boxes.centers, i - 1))
    _write_labels(s, out, "partition_nodes", g2s.points, part.labels)
    _write_labels(s, out, "partition_boxes", boxes.centers, part.classify(boxes.centers))

    mc = meta.estimate_metastability(
        part, s.spec, s.params, [0.0] + list(lags), cfg.mc_samples, cfg.mc_dynamics, cfg.seed, dt=cfg.dt
    )
    out.files.append(io.write_csv(
        s.out / "metastability_sets.csv", ["t", "set", "mass", "fraction", "stderr"],
        [[t, c, part.masses[c], mc.fractions[i, c], mc.stderr[i, c]]
         for i, t in enumerate(mc.t) for c in range(part.n_sets)],
    ))
    rows, results = [], {}
    for i, t in enumerate(mc.t):
        cand = []
        if t > 0:
            cand.append(("ulam", spectra[i - 1]))
        cand.append(("collocation_Et", col.solve_spectrum(col.assemble_et(g2, t), cfg.k)))
        cand.append(("collocation_Rt", col.solve_spectrum(col.assemble_rt(g2, t, s.params), cfg.k)))
        for src, sp in cand:
            b = _bounds(sp, part, cfg.a_floor, src)
            b.mc_estimate, b.mc_stderr = float(mc.sums[i]), float(mc.sum_stderr[i])
            results[(src, t)] = b
            r = b.row()
            rows.append([r[h] for h in BOUNDS_HEADER])
            out.check(f"rho in [0,1] {src} t={_tag(t)}", np.all((b.rho >= 0) & (b.rho <= 1 + 1e-12)), "")
    out.files.append(io.write_csv(
        s.out / "bounds.csv", BOUNDS_HEADER, rows
    ))
    first = next(iter(results.values()))
    out.files.append(io.write_json(s.out / "bounds_meta.json", {
        "n_sets": part.n_sets, "a_floor": first.a, "caveat": first.caveat,
        "set_masses": part.masses, "patterns": part.patterns,
    }))
    if figures:
        from . import plotting

        srcs = {}
        for src in ("ulam", "collocation_Et", "collocation_Rt"):
            pts = sorted((t, b) for (sname, t), b in results.items() if sname == src)
            srcs[src] = ([p[0] for p in pts], [p[1].upper for p in pts], [p[1].lower for p in pts])
        out.files.append(plotting.plot_bounds(s.out / "bounds.png", srcs, (mc.t, mc.sums, mc.sum_stderr)))

    out.check("t=0 MC sum equals number of sets", mc.sums[0] == part.n_sets, f"{mc.sums[0]}")
    for tier in part.tiers:
        out.check(f"tier {tier.eigen_index} masses sum to 1", abs(tier.masses.sum() - 1) <= 1e-8, "")
    for (src, t), b in sorted(results.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        limit = 0.5 if src == "ulam" else 0.3
        if src == "collocation_Rt" or t == 0 or t > limit + 1e-12:
            continue
        se3 = 3 * b.mc_stderr
        ok = b.lower - se3 <= b.mc_estimate <= b.upper + se3
        out.check(f"containment {src} t={_tag(t)}", ok,
                  f"{b.lower:.4f} <= {b.mc_estimate:.4f} <= {b.upper:.4f} (3se {se3:.4f})")
    return _finish(s, "bounds", out)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "reference": cmd_reference,
    "compare": cmd_compare,
    "bounds": cmd_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pseudogen", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML or JSON file with ExperimentConfig fields")
    p.add_argument("--preset", help="double-well or four-well")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--check", action="store_true", help="assert the acceptance checks for this command")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset, seed=args.seed, out=args.out)
    except (ConfigError, PotentialError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = COMMANDS[args.command](cfg, figures=args.figures)
    except (
        col.SpectrumError, col.GridError, sim.SimulationError, sim.SamplingError,
        meta.PartitionError, np.linalg.LinAlgError, ValueError,
    ) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in outcome.files:
        print(f)
    if args.check:
        failed = 0
        for name, ok, detail in outcome.checks:
            print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
            failed += not ok
        if failed:
            print(f"{failed} check(s) failed", file=sys.stderr)
            return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
