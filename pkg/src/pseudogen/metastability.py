"""Metastable decompositions from eigenvector signs and their bounds.

Each dominant eigenvector v_j (j >= 2) splits the support into {v_j > 0} and
{v_j < 0}; these pairs are the hierarchy *tiers*. The combined decomposition
into as many cells as there are dominant eigenvalues is formed from the joint
sign patterns of all tiers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import langevin as sim
from . import rng
from .collocation import SpectrumResult
from .potential import DynamicsParams, PotentialSpec

SIGN_THRESHOLD = 1e-8
CONSTANT_TOLERANCE = 0.05
GAP_WINDOW = 8


class PartitionError(ValueError):
    pass


def spectral_gap(eigenvalues, generator: bool = False) -> int:
    """Number of dominant eigenvalues: the 1-based j >= 2 maximizing
    lambda_j - lambda_{j+1} among the leading eight (first maximum wins).

    For generator spectra (non-positive, unbounded below) absolute gaps grow
    without limit, so ``generator=True`` compares log|lambda| instead.
    """
    lam = np.real(np.asarray(eigenvalues))[:GAP_WINDOW]
    if lam.size < 3:
        raise ValueError("need at least three eigenvalues to locate a gap")
    if generator:
        mag = np.abs(lam[1:])
        if np.any(mag == 0):
            raise ValueError("generator spectrum has a repeated zero eigenvalue")
        lam = np.concatenate([[np.inf], -np.log(mag)])
    gaps = lam[1:-1] - lam[2:]  # gaps[i] is lambda_{i+2} - lambda_{i+3}
    best = gaps.max()
    return int(np.flatnonzero(gaps >= best - 1e-12 * max(1.0, abs(best)))[0]) + 2


@dataclass
class Tier:
    """Pair of sets from the sign of one eigenvector (label 0: positive)."""

    eigen_index: int
    labels: np.ndarray
    masses: np.ndarray


@dataclass(eq=False)
class PartitionResult:
    """Sign-structure decomposition over the support points of a spectrum.

    ``labels`` are the combined cell labels, ``patterns[c]`` the tier-label
    tuple defining cell ``c``, and ``masses`` the mu_Q mass of each cell.
    """

    tiers: list[Tier]
    labels: np.ndarray
    patterns: list[tuple[int, ...]]
    masses: np.ndarray
    spectrum: SpectrumResult = field(repr=False)

    @property
    def n_sets(self) -> int:
        return len(self.patterns)

    def tier_labels_at(self, q) -> np.ndarray:
        """(n_points, n_tiers) tier labels at arbitrary torus points."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        spec = self.spectrum
        if spec.grid is None:
            idx = spec.box_partition.box_index(q)
            return np.stack([t.labels[idx] for t in self.tiers], axis=1)
        cols = []
        for tier in self.tiers:
            vals = spec.evaluate(tier.eigen_index - 1, q)
            cols.append(np.where(np.real(vals) > 0, 0, 1))
        return np.stack(cols, axis=1)

    def classify(self, q, tier: int | None = None) -> np.ndarray:
        """Set label of each point; ``tier`` selects one tier (0-based)
        instead of the combined decomposition."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if q.shape[1] != self.spectrum.points.shape[1]:
            q = q.reshape(-1, self.spectrum.points.shape[1])
        spec = self.spectrum
        if spec.grid is None:
            idx = spec.box_partition.box_index(q)
            return self.tiers[tier].labels[idx] if tier is not None else self.labels[idx]
        tl = self.tier_labels_at(q)
        if tier is not None:
            return tl[:, tier]
        return _assign_patterns(tl, self.patterns)

    def labels_for(self, spectrum: SpectrumResult, tier: int | None = None) -> np.ndarray:
        """Labels on the support points of ``spectrum``."""
        if spectrum is self.spectrum:
            return self.tiers[tier].labels if tier is not None else self.labels
        return self.classify(spectrum.points, tier)


def _assign_patterns(tier_labels, patterns):
    pats = np.array(patterns)
    # Hamming distance to each retained pattern; first minimum wins
    dist = (tier_labels[:, None, :] != pats[None, :, :]).sum(axis=2)
    return np.argmin(dist, axis=1)


def _fill_near_zero(labels, undecided, dims, n):
    """Give undecided support points the label of the nearest decided one.

    Distance is the periodic L1 distance in grid indices (plain index
    distance in 1D); ties go to the lower flat index.
    """
    if not undecided.any():
        return labels
    decided = np.flatnonzero(~undecided)
    if dims is None:
        coords = np.arange(labels.size)[:, None]
        sizes = np.array([labels.size])
    else:
        flat = np.arange(labels.size)
        coords = np.stack([(flat // n**a) % n for a in range(dims)], axis=1)
        sizes = np.full(dims, n)
    for i in np.flatnonzero(undecided):
        diff = np.abs(coords[decided] - coords[i])
        dist = np.minimum(diff, sizes - diff).sum(axis=1)
        labels[i] = labels[decided[np.argmin(dist)]]
    return labels


def sign_partition(spectrum: SpectrumResult, n_sets_hint: int | None = None) -> PartitionResult:
    """Tiers from v_2..v_n and the combined n-cell decomposition.

    ``n`` is ``n_sets_hint`` or, when omitted, the spectral gap index.
    """
    if len(spectrum) < 2:
        raise PartitionError("need at least two eigenpairs")
    v1 = np.real(spectrum.eigenvectors[:, 0])
    mean = np.sum(spectrum.weights * v1)
    if mean == 0 or np.max(np.abs(v1 - mean)) > CONSTANT_TOLERANCE * abs(mean):
        warnings.warn("leading eigenvector is not approximately constant", stacklevel=2)
    if n_sets_hint is None:
        n = (
            spectral_gap(spectrum.eigenvalues, generator=spectrum.kind == "G2")
            if len(spectrum) >= 3
            else 2
        )
    else:
        n = int(n_sets_hint)
    if not 2 <= n <= len(spectrum):
        raise PartitionError(f"cannot form {n} sets from {len(spectrum)} eigenpairs")
    w = spectrum.weights
    if spectrum.grid is not None:
        dims, nper = spectrum.grid.dim, spectrum.grid.n
    elif spectrum.box_partition is not None and spectrum.box_partition.dim > 1:
        dims, nper = spectrum.box_partition.dim, spectrum.box_partition.n
    else:
        dims, nper = None, None
    tiers = []
    for j in range(1, n):
        v = np.real(spectrum.eigenvectors[:, j])
        tau = SIGN_THRESHOLD * np.max(np.abs(v))
        pos, neg = v > tau, v < -tau
        if not pos.any() or not neg.any():
            raise PartitionError(f"eigenvector {j + 1} has a single sign; no partition")
        labels = np.where(pos, 0, 1)
        labels = _fill_near_zero(labels, ~(pos | neg), dims, nper)
        masses = np.array([w[labels == 0].sum(), w[labels == 1].sum()])
        tiers.append(Tier(j + 1, labels, masses))
    tl = np.stack([t.labels for t in tiers], axis=1)
    uniq, inverse = np.unique(tl, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    pmass = np.array([w[inverse == u].sum() for u in range(len(uniq))])
    keep = np.sort(np.argsort(-pmass, kind="stable")[:n])
    patterns = [tuple(int(x) for x in uniq[u]) for u in keep]
    labels = _assign_patterns(tl, patterns)
    masses = np.array([w[labels == c].sum() for c in range(len(patterns))])
    return PartitionResult(tiers, labels, patterns, masses, spectrum)


@dataclass
class BoundsResult:
    """Upper and lower bounds on the summed self-transition probabilities.

    ``rho`` holds the projection norms ||Pi v_j||. The valid lower bound
    weights each lambda_j by rho_j**2 (the share of v_j inside the span of
    the indicators); ``lower_unsquared`` is the same expression with rho_j
    itself, kept for comparison because it can exceed the true value.
    """

    t: float
    upper: float
    lower: float
    rho: np.ndarray
    c: float
    a: float
    n_sets: int
    source: str = ""
    lower_unsquared: float = float("nan")
    mc_estimate: float | None = None
    mc_stderr: float | None = None
    caveat: str = (
        "lower bound uses an assumed spectral floor a; the true floor of the "
        "continuous operator is not computable from finitely many eigenvalues"
    )

    def row(self) -> dict:
        return {
            "t": self.t,
            "upper": self.upper,
            "lower": self.lower,
            "mc_sum": np.nan if self.mc_estimate is None else self.mc_estimate,
            "mc_stderr": np.nan if self.mc_stderr is None else self.mc_stderr,
            "source": self.source,
            "lower_unsquared": self.lower_unsquared,
        }


def default_floor(spectrum: SpectrumResult) -> float:
    return min(0.0, spectrum.spectral_floor) - 0.05


def projection_norms(spectrum: SpectrumResult, labels: np.ndarray, n: int) -> np.ndarray:
    """rho_j = ||Pi v_j|| for j = 2..n, Pi the mu_Q-orthogonal projection
    onto the span of the set indicators given by ``labels``."""
    w = spectrum.weights
    rho = []
    for j in range(1, n):
        v = np.real(spectrum.eigenvectors[:, j])
        norm = np.sqrt(np.sum(w * v * v))
        sq = 0.0
        for c in np.unique(labels):
            m = w[labels == c].sum()
            if m > 0:
                sq += np.sum(w[labels == c] * v[labels == c]) ** 2 / m
        rho.append(np.sqrt(sq) / norm)
    return np.array(rho)


def huisinga_bounds(
    spectrum: SpectrumResult,
    partition: PartitionResult,
    a_floor: float | None = None,
    tier: int | None = None,
    source: str = "",
) -> BoundsResult:
    """Bounds for the combined decomposition (or one tier) of ``partition``
    using the dominant eigenpairs of ``spectrum``."""
    labels = partition.labels_for(spectrum, tier)
    n = 2 if tier is not None else partition.n_sets
    if len(spectrum) < n:
        raise ValueError(f"decomposition has {n} sets but only {len(spectrum)} eigenpairs")
    if len(np.unique(labels)) != n:
        raise ValueError(
            f"decomposition has {len(np.unique(labels))} nonempty sets on this support, expected {n}"
        )
    lam = np.real(spectrum.eigenvalues[1:n])
    a = default_floor(spectrum) if a_floor is None else float(a_floor)
    if not -1.0 < a <= float(np.min(np.real(spectrum.eigenvalues[:n]))):
        raise ValueError(f"spectral floor a={a} must lie in (-1, min dominant eigenvalue]")
    rho = projection_norms(spectrum, labels, n)
    # sum_A p(A,A) = sum_j lambda_j ||Pi v_j||^2 over the whole spectrum
    share = rho**2
    c = a * float(np.sum(1.0 - share))
    upper = 1.0 + float(lam.sum())
    lower = 1.0 + float(np.sum(share * lam)) + c
    unsq = 1.0 + float(np.sum(rho * lam)) + a * float(np.sum(1.0 - rho))
    if lower > upper + 1e-12:
        raise AssertionError("lower bound exceeds upper bound")
    return BoundsResult(spectrum.t, upper, lower, rho, c, a, n, source, unsq)


@dataclass
class MetastabilityEstimate:
    """Fraction of walkers that stay in their starting set, per lag."""

    t: np.ndarray
    fractions: np.ndarray  # (n_t, n_sets)
    stderr: np.ndarray
    n_samples: int

    @property
    def sums(self) -> np.ndarray:
        return self.fractions.sum(axis=1)

    @property
    def sum_stderr(self) -> np.ndarray:
        return np.sqrt(np.sum(self.stderr**2, axis=1))


def estimate_metastability(
    partition: PartitionResult,
    spec: PotentialSpec,
    params: DynamicsParams,
    t,
    n_samples: int,
    dynamics: str = "langevin",
    seed: int = 0,
    *,
    tier: int | None = None,
    dt: float = 1e-3,
    weight_by_eigenvector: bool = False,
    threads: int | None = None,
) -> MetastabilityEstimate:
    """Monte-Carlo estimate of p(t, A, A) for every set A of the decomposition.

    Starting points follow chi_A f_Q (optionally tilted by |v_j| of the
    defining eigenvector), Langevin walkers get canonical momenta.
    """
    if dynamics not in ("langevin", "smoluchowski"):
        raise ValueError(f"unknown dynamics {dynamics!r}")
    lags = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(lags < 0):
        raise ValueError("lag times must be non-negative")
    n_cells = 2 if tier is not None else partition.n_sets
    masses = partition.tiers[tier].masses if tier is not None else partition.masses
    if np.any(masses <= 0):
        raise sim.SamplingError("decomposition contains a set of zero mass")
    scheme = "LangevinBAOAB" if dynamics == "langevin" else "SmoluchowskiEM"
    config = sim.SamplerConfig(dt=dt, seed=seed, n_walkers=n_samples, scheme=scheme, threads=threads)
    order = np.argsort(lags, kind="stable")
    frac = np.empty((lags.size, n_cells))
    ids = np.arange(n_samples, dtype=np.uint64)
    weight = weight_max = None
    if weight_by_eigenvector:
        j = partition.tiers[tier if tier is not None else 0].eigen_index - 1
        sp = partition.spectrum

        def weight(q, j=j):
            return np.abs(np.real(sp.evaluate(j, q)))

        weight_max = 1.05 * float(np.max(np.abs(np.real(sp.eigenvectors[:, j]))))
    for cell in range(n_cells):
        cseed = rng.derive_seed(seed, cell)

        def inside(q, cell=cell):
            return partition.classify(q, tier) == cell

        q0 = sim.sample_canonical_position(
            spec, params, n_samples, inside, cseed, walker_ids=ids,
            weight=weight, weight_max=weight_max or 1.0,
        )
        p0 = (
            sim.sample_canonical_momentum(spec.dim, params, n_samples, cseed, walker_ids=ids)
            if dynamics == "langevin"
            else None
        )
        state = sim.EnsembleState(q0, p0, ids, seed=cseed)
        done = 0
        for idx in order:
            target = sim.lag_steps(lags[idx], dt)
            if target > done:
                state = sim.integrate(state, spec, params, (target - done) * dt, config)
                done = target
            if target == 0:
                frac[idx, cell] = 1.0
            else:
                frac[idx, cell] = np.mean(inside(state.positions))
    se = np.sqrt(frac * (1.0 - frac) / n_samples)
    return MetastabilityEstimate(lags, frac, se, n_samples)
