"""Trajectory simulation of Langevin and Smoluchowski dynamics on the torus.

Walkers are independent; each owns a counter-based random stream keyed by
``(seed, walker id)``, so results do not depend on chunking or thread count.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng
from .potential import DynamicsParams, PotentialSpec, tensor_nodes

log = logging.getLogger(__name__)

SCHEMES = ("LangevinBAOAB", "SmoluchowskiEM")
THREADS_ENV = "PSEUDOGEN_THREADS"
ENVELOPE_INFLATION = 1.0 + 1e-6
MIN_ACCEPTANCE = 1e-4


class SimulationError(RuntimeError):
    """Raised when a trajectory leaves the finite range (step size too large)."""


class SamplingError(RuntimeError):
    pass


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SamplerConfig:
    dt: float = 1e-3
    seed: int = 0
    n_walkers: int = 1000
    scheme: str = "LangevinBAOAB"
    threads: int | None = None
    chunk_size: int = 1 << 18
    dump_trajectory: str | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.n_walkers < 1:
            raise ValueError("n_walkers must be >= 1")


@dataclass
class EnsembleState:
    """Walker positions (wrapped to [0,1)^d), optional momenta and stream ids.

    ``step`` is the number of integrator steps already consumed from every
    walker's noise stream, so consecutive integrations continue the streams.
    """

    positions: np.ndarray
    momenta: np.ndarray | None
    rng_stream_ids: np.ndarray
    seed: int = 0
    step: int = 0
    _keys: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.positions = np.mod(np.asarray(self.positions, dtype=float), 1.0)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        self.rng_stream_ids = np.asarray(self.rng_stream_ids, dtype=np.uint64)
        if self.momenta is not None:
            self.momenta = np.asarray(self.momenta, dtype=float).reshape(self.positions.shape)
        if self.rng_stream_ids.shape[0] != self.positions.shape[0]:
            raise ValueError("one stream id per walker required")

    @property
    def n_walkers(self) -> int:
        return self.positions.shape[0]

    def noise_keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = rng.stream_keys(self.seed, rng.NOISE, self.rng_stream_ids)
        return self._keys


def lag_steps(t: float, dt: float) -> int:
    """Integer step count for lag ``t``; rejects rounding beyond 0.5 %."""
    if t < 0:
        raise ValueError(f"lag time must be non-negative, got {t}")
    if t == 0:
        return 0
    steps = max(1, int(round(t / dt)))
    if abs(steps * dt - t) > 0.005 * t:
        raise ValueError(
            f"lag time {t} is not representable with dt={dt} "
            f"({steps} steps give {steps * dt})"
        )
    return steps


# -- sampling ---------------------------------------------------------------


def _scan_min(spec, beta, lo, hi, points_per_axis):
    """Lower bound on V over each box [lo, hi) from a dense scan.

    The grid minimum is lowered by max|grad V| times the half-diagonal of a
    scan cell, which bounds the amount the true minimum can undercut it.
    """
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    d = spec.dim
    ticks = np.linspace(0.0, 1.0, points_per_axis)
    frac = np.stack([g.ravel() for g in np.meshgrid(*([ticks] * d), indexing="ij")], axis=1)
    width = hi - lo
    pts = lo[:, None, :] + width[:, None, :] * frac[None, :, :]
    flat = np.mod(pts.reshape(-1, d), 1.0)
    vals = spec._value(flat).reshape(lo.shape[0], -1)
    grads = np.linalg.norm(spec._gradient(flat), axis=1).reshape(lo.shape[0], -1)
    cell = np.linalg.norm(width / (points_per_axis - 1), axis=1)
    return vals.min(axis=1) - 0.5 * cell * grads.max(axis=1)


def _rejection(spec, beta, lo, hi, vmin, keys, accept_extra=None, extra_max=1.0):
    """Draw one point per key from exp(-beta V) restricted to its box.

    ``lo``/``hi``/``vmin`` broadcast against the walkers. ``accept_extra``
    optionally multiplies the target by a bounded factor (indicator or weight).
    """
    n = keys.shape[0]
    d = spec.dim
    lo = np.broadcast_to(np.atleast_2d(lo), (n, d))
    hi = np.broadcast_to(np.atleast_2d(hi), (n, d))
    vmin = np.broadcast_to(np.atleast_1d(vmin), (n,))
    out = np.empty((n, d))
    pending = np.arange(n)
    attempt = 0
    proposed = accepted = 0
    while pending.size:
        k = keys[pending]
        base = attempt * (d + 1)
        u = np.stack([rng.uniforms(k, base + a) for a in range(d)], axis=1)
        cand = lo[pending] + (hi[pending] - lo[pending]) * u
        cand = np.mod(cand, 1.0)
        ratio = np.exp(-beta * (spec._value(cand) - vmin[pending]))
        if accept_extra is not None:
            ratio = ratio * accept_extra(cand) / extra_max
        ok = rng.uniforms(k, base + d) * ENVELOPE_INFLATION < ratio
        out[pending[ok]] = cand[ok]
        proposed += pending.size
        accepted += int(ok.sum())
        pending = pending[~ok]
        attempt += 1
        if proposed >= 100_000 and accepted < MIN_ACCEPTANCE * proposed:
            raise SamplingError(
                f"acceptance rate {accepted / proposed:.2e} below {MIN_ACCEPTANCE:g}; "
                "the uniform proposal is too poor for this beta/region"
            )
    return out


def region_mass(spec, beta, region, n_quad=None) -> float:
    """mu_Q-mass of a box ``(lo, hi)`` or an indicator function."""
    d = spec.dim
    if n_quad is None:
        n_quad = 2048 if d == 1 else 256
    nodes = tensor_nodes(d, n_quad) + 0.5 / n_quad
    energy = beta * spec._value(nodes)
    # common shift keeps cold systems from underflowing
    shift = energy.min()
    boltz = np.exp(-(energy - shift))
    z = boltz.sum()
    if region is None:
        return 1.0
    if callable(region):
        return float(boltz[np.asarray(region(nodes), dtype=bool)].sum() / z)
    lo, hi = (np.asarray(x, dtype=float).reshape(d) for x in region)
    x, w = np.polynomial.legendre.leggauss(32)
    pts = [lo[a] + (hi[a] - lo[a]) * (x + 1) / 2 for a in range(d)]
    wts = [w * (hi[a] - lo[a]) / 2 for a in range(d)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*pts, indexing="ij")], axis=1)
    wt = np.prod(np.stack([g.ravel() for g in np.meshgrid(*wts, indexing="ij")], axis=1), axis=1)
    zq = boltz.mean()
    return float(np.sum(wt * np.exp(-(beta * spec._value(np.mod(grid, 1.0)) - shift))) / zq)


def sample_canonical_position(
    spec: PotentialSpec,
    params: DynamicsParams,
    n: int,
    region=None,
    seed: int = 0,
    *,
    walker_ids=None,
    weight: Callable[[np.ndarray], np.ndarray] | None = None,
    weight_max: float = 1.0,
):
    """I.i.d. draws from f_Q restricted to ``region`` by rejection sampling.

    ``region`` is None (whole torus), a box ``(lo, hi)`` or a boolean
    indicator on points. ``weight`` optionally tilts the target by a
    non-negative function bounded by ``weight_max``.
    """
    beta = params.beta
    d = spec.dim
    if region_mass(spec, beta, region) <= 1e-12:
        raise SamplingError("region has zero mu_Q mass")
    ids = np.arange(n, dtype=np.uint64) if walker_ids is None else walker_ids
    keys = rng.stream_keys(seed, rng.POSITION, ids)
    extra = None
    if region is None or callable(region):
        lo, hi = np.zeros(d), np.ones(d)
        if callable(region):
            extra = lambda q: np.asarray(region(q), dtype=float)  # noqa: E731
    else:
        lo, hi = (np.asarray(x, dtype=float).reshape(d) for x in region)
    vmin = _scan_min(spec, beta, lo, hi, 4097 if d == 1 else 257)[0]
    if weight is not None:
        inner = extra
        extra = (lambda q: weight(q) * inner(q)) if inner else weight
        return _rejection(spec, beta, lo, hi, vmin, keys, extra, weight_max)
    return _rejection(spec, beta, lo, hi, vmin, keys, extra)


def sample_in_boxes(spec, params, lo, hi, seed, walker_ids, points_per_axis=17):
    """One f_Q-distributed point per walker inside its own box ``[lo_i, hi_i)``."""
    # scan each distinct box once; walkers share boxes
    boxes, inverse = np.unique(np.concatenate([lo, hi], axis=1), axis=0, return_inverse=True)
    d = lo.shape[1]
    vmin = _scan_min(spec, params.beta, boxes[:, :d], boxes[:, d:], points_per_axis)[inverse.ravel()]
    keys = rng.stream_keys(seed, rng.POSITION, walker_ids)
    return _rejection(spec, params.beta, lo, hi, vmin, keys)


def sample_canonical_momentum(dim: int, params: DynamicsParams, n: int, seed: int = 0, *, walker_ids=None):
    """Gaussian momenta with covariance I / beta."""
    ids = np.arange(n, dtype=np.uint64) if walker_ids is None else walker_ids
    keys = rng.stream_keys(seed, rng.MOMENTUM, ids)
    return rng.normals(keys, 0, dim) / math.sqrt(params.beta)


def canonical_ensemble(spec, params, n, seed=0, region=None, *, walker_ids=None, momenta=True):
    """Positions from f_Q (restricted to ``region``) plus momenta from f_P."""
    ids = np.arange(n, dtype=np.uint64) if walker_ids is None else np.asarray(walker_ids, dtype=np.uint64)
    q = sample_canonical_position(spec, params, n, region, seed, walker_ids=ids)
    p = sample_canonical_momentum(spec.dim, params, n, seed, walker_ids=ids) if momenta else None
    return EnsembleState(q, p, ids, seed=seed)


# -- integration ------------------------------------------------------------


def _check_finite(arr, offset, step):
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise SimulationError(
            f"non-finite state for walker {offset + bad} at step {step}; reduce dt"
        )


def _baoab_chunk(q, p, keys, spec, params, dt, step0, n_steps, offset, dump):
    d = q.shape[1]
    c1 = math.exp(-params.gamma * dt)
    c3 = math.sqrt((1.0 - c1 * c1) / params.beta)
    half = 0.5 * dt
    force = spec._gradient(q)
    for s in range(step0, step0 + n_steps):
        p -= half * force
        q += half * p
        p *= c1
        p += c3 * rng.normals(keys, s * d, d)
        q += half * p
        _check_finite(p, offset, s + 1)
        np.mod(q, 1.0, out=q)
        force = spec._gradient(q)
        p -= half * force
        _check_finite(p, offset, s + 1)
        if dump is not None:
            dump(offset, s + 1, q, p)
    return q, p


def _em_chunk(q, keys, spec, params, dt, step0, n_steps, offset, dump):
    d = q.shape[1]
    amp = math.sqrt(2.0 * dt / params.beta)
    for s in range(step0, step0 + n_steps):
        q -= dt * spec._gradient(q)
        q += amp * rng.normals(keys, s * d, d)
        _check_finite(q, offset, s + 1)
        np.mod(q, 1.0, out=q)
        if dump is not None:
            dump(offset, s + 1, q, None)
    return q


def _chunks(n, size):
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def _run_chunked(n, config, job):
    threads = config.threads or default_threads()
    spans = _chunks(n, config.chunk_size)
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(job, spans))
    else:
        for span in spans:
            job(span)


class _Dump:
    LARGE = 1_000_000

    def __init__(self, path, dim, momenta, n_rows):
        if n_rows > self.LARGE:
            log.warning("trajectory dump will write %d rows to %s", n_rows, path)
        self.fh = open(path, "a", newline="")
        self.writer = csv.writer(self.fh)
        if self.fh.tell() == 0:
            header = ["walker", "step"] + [f"q{i}" for i in range(dim)]
            if momenta:
                header += [f"p{i}" for i in range(dim)]
            self.writer.writerow(header)

    def __call__(self, offset, step, q, p):
        for i in range(q.shape[0]):
            row = [offset + i, step] + [f"{x:.12e}" for x in q[i]]
            if p is not None:
                row += [f"{x:.12e}" for x in p[i]]
            self.writer.writerow(row)

    def close(self):
        self.fh.close()


def integrate_langevin(
    state: EnsembleState,
    spec: PotentialSpec,
    params: DynamicsParams,
    t: float,
    config: SamplerConfig,
) -> EnsembleState:
    """Advance every walker by time ``t`` with the BAOAB splitting."""
    if state.momenta is None:
        raise ValueError("Langevin integration needs momenta")
    n_steps = lag_steps(t, config.dt)
    q = state.positions.copy()
    p = state.momenta.copy()
    if n_steps == 0:
        return replace(state, positions=q, momenta=p)
    keys = state.noise_keys()
    dump = None
    if config.dump_trajectory:
        dump = _Dump(config.dump_trajectory, spec.dim, True, state.n_walkers * n_steps)

    def job(span):
        a, b = span
        q[a:b], p[a:b] = _baoab_chunk(
            q[a:b], p[a:b], keys[a:b], spec, params, config.dt, state.step, n_steps, a, dump
        )

    try:
        if dump is not None:
            job((0, state.n_walkers))
        else:
            _run_chunked(state.n_walkers, config, job)
    finally:
        if dump is not None:
            dump.close()
    return EnsembleState(q, p, state.rng_stream_ids, state.seed, state.step + n_steps, keys)


def integrate_smoluchowski(
    state,
    spec: PotentialSpec,
    params: DynamicsParams,
    t: float,
    config: SamplerConfig,
):
    """Euler-Maruyama for dq = -grad V dt + sqrt(2/beta) dW.

    Accepts an :class:`EnsembleState` (returned advanced) or a bare position
    array, which is integrated with stream ids ``0..n-1`` under
    ``config.seed`` and returned as an array.
    """
    bare = not isinstance(state, EnsembleState)
    if bare:
        pos = np.asarray(state, dtype=float)
        state = EnsembleState(pos, None, np.arange(pos.shape[0], dtype=np.uint64), config.seed)
    n_steps = lag_steps(t, config.dt)
    q = state.positions.copy()
    if n_steps > 0:
        keys = state.noise_keys()
        dump = None
        if config.dump_trajectory:
            dump = _Dump(config.dump_trajectory, spec.dim, False, state.n_walkers * n_steps)

        def job(span):
            a, b = span
            q[a:b] = _em_chunk(q[a:b], keys[a:b], spec, params, config.dt, state.step, n_steps, a, dump)

        try:
            if dump is not None:
                job((0, state.n_walkers))
            else:
                _run_chunked(state.n_walkers, config, job)
        finally:
            if dump is not None:
                dump.close()
    if bare:
        return q
    return EnsembleState(q, None, state.rng_stream_ids, state.seed, state.step + n_steps, state._keys)


def integrate(state, spec, params, t, config):
    """Dispatch on ``config.scheme``."""
    if config.scheme == "LangevinBAOAB":
        return integrate_langevin(state, spec, params, t, config)
    return integrate_smoluchowski(state, spec, params, t, config)
