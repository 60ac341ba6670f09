"""Monte-Carlo Ulam discretization of position-space transfer operators.

Rows are estimated by drawing ``M`` points from f_Q inside each box (plus
canonical momenta for Langevin), integrating for the lag time and counting
the arrival boxes. The stored matrix is the row-stochastic transition form;
the Galerkin matrix with respect to mu_Q is similar to it through the box
masses, so both share eigenvalues.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from . import langevin as sim
from .collocation import SpectrumError, finish_spectrum
from .potential import DynamicsParams, PotentialSpec, tensor_nodes

GAUSS_POINTS = 8
DEFAULT_BATCHES = 8


@dataclass(frozen=True, eq=False)
class BoxPartition:
    """Uniform boxes tiling [0,1)^dim with their mu_Q masses.

    Box ``i`` has multi-index (i_0, i_1, ...) with axis 0 varying fastest.
    """

    dim: int
    n: int
    masses: np.ndarray

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def width(self) -> float:
        return 1.0 / self.n

    @property
    def volume(self) -> float:
        return self.width**self.dim

    @property
    def lower(self) -> np.ndarray:
        return tensor_nodes(self.dim, self.n)

    @property
    def centers(self) -> np.ndarray:
        return self.lower + 0.5 * self.width

    def box_index(self, q) -> np.ndarray:
        q = np.mod(np.asarray(q, dtype=float), 1.0)
        if q.ndim == 1:
            q = q[:, None] if self.dim == 1 else q[None, :]
        cell = np.minimum((q * self.n).astype(np.int64), self.n - 1)
        strides = self.n ** np.arange(self.dim)
        return cell @ strides

    def density(self) -> np.ndarray:
        """Box-averaged f_Q (mass over volume)."""
        return self.masses / self.volume


def build_partition(dim: int, n: int, spec: PotentialSpec, params: DynamicsParams) -> BoxPartition:
    """Uniform partition with f_Q masses from an 8-point Gauss-Legendre rule per box and axis."""
    if n < 2:
        raise ValueError(f"need at least 2 boxes per axis, got {n}")
    if spec.dim != dim:
        raise ValueError(f"potential dim {spec.dim} does not match partition dim {dim}")
    x, w = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    h = 1.0 / n
    local = np.stack(
        [g.ravel() for g in np.meshgrid(*([(x + 1) * h / 2] * dim), indexing="ij")], axis=1
    )
    lw = np.prod(
        np.stack([g.ravel() for g in np.meshgrid(*([w * h / 2] * dim), indexing="ij")], axis=1),
        axis=1,
    )
    lower = tensor_nodes(dim, n)
    pts = (lower[:, None, :] + local[None, :, :]).reshape(-1, dim)
    energy = params.beta * spec._value(pts)
    # shift by the minimum so cold systems do not underflow
    vals = np.exp(-(energy - energy.min())).reshape(lower.shape[0], -1)
    raw = vals @ lw
    return BoxPartition(dim, n, raw / raw.sum())


@dataclass(eq=False)
class UlamMatrix:
    """Row-stochastic transition matrix estimated from box-to-box counts.

    ``batch_counts[b]`` holds the counts from the ``b``-th interleaved subset
    of the samples in each row; their sum is ``counts``.
    """

    kind: str
    t: float
    matrix: np.ndarray
    counts: np.ndarray
    batch_counts: np.ndarray
    samples_per_box: int
    seed: int
    partition: BoxPartition
    params: DynamicsParams
    dt: float
    potential: str = ""
    extra: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "t": self.t,
            "N": self.partition.n,
            "dim": self.partition.dim,
            "M": self.samples_per_box,
            "seed": self.seed,
            "dt": self.dt,
            "beta": self.params.beta,
            "gamma": self.params.gamma,
            "n_batches": int(self.batch_counts.shape[0]),
            "potential": self.potential,
        }


def _estimate(partition, spec, params, lags, M, config, kind, n_batches):
    scalar = np.ndim(lags) == 0
    lags = [float(lags)] if scalar else [float(t) for t in lags]
    if M < 1:
        raise ValueError("need at least one sample per box")
    if any(t <= 0 for t in lags):
        raise ValueError("lag times must be positive")
    if np.any(partition.masses <= 0):
        raise sim.SamplingError("partition contains a box of zero mass")
    order = np.argsort(lags, kind="stable")
    nb = partition.size
    B = max(1, min(n_batches, M))
    ids = np.arange(nb * M, dtype=np.uint64)
    start = np.repeat(np.arange(nb), M)
    batch = np.tile(np.arange(M) % B, nb)
    lo = partition.lower[start]
    q = sim.sample_in_boxes(spec, params, lo, lo + partition.width, config.seed, ids)
    langevin = kind == "UlamS"
    p = sim.sample_canonical_momentum(spec.dim, params, ids.size, config.seed, walker_ids=ids) if langevin else None
    state = sim.EnsembleState(q, p, ids, seed=config.seed)
    scheme = "LangevinBAOAB" if langevin else "SmoluchowskiEM"
    cfg = replace(config, scheme=scheme)
    results = [None] * len(lags)
    elapsed = 0.0
    for idx in order:
        t = lags[idx]
        # step counts are taken per absolute lag so segments add up exactly
        steps_done = sim.lag_steps(elapsed, cfg.dt) if elapsed > 0 else 0
        steps_target = sim.lag_steps(t, cfg.dt)
        seg = (steps_target - steps_done) * cfg.dt
        if steps_target > steps_done:
            state = sim.integrate(state, spec, params, seg, cfg)
        elapsed = t
        end = partition.box_index(state.positions)
        flat = (batch * nb + start) * nb + end
        bc = np.bincount(flat, minlength=B * nb * nb).reshape(B, nb, nb).astype(np.int32)
        counts = bc.sum(axis=0, dtype=np.int64)
        mat = counts / counts.sum(axis=1, keepdims=True)
        results[idx] = UlamMatrix(
            kind, t, mat, counts, bc, M, config.seed, partition, params, cfg.dt, spec.name
        )
    return results[0] if scalar else results


def estimate_spatial_ulam(
    partition: BoxPartition,
    spec: PotentialSpec,
    params: DynamicsParams,
    t,
    M: int,
    config: sim.SamplerConfig,
    n_batches: int = DEFAULT_BATCHES,
):
    """Ulam matrix of the momentum-averaged Langevin transfer operator.

    ``t`` may be a sequence of lags; one set of trajectories then serves all
    of them and a list of matrices is returned in the given order.
    """
    return _estimate(partition, spec, params, t, M, config, "UlamS", n_batches)


def estimate_smoluchowski_ulam(
    partition: BoxPartition,
    spec: PotentialSpec,
    params: DynamicsParams,
    t,
    M: int,
    config: sim.SamplerConfig,
    n_batches: int = DEFAULT_BATCHES,
):
    """Ulam matrix of the Smoluchowski transfer operator (no momenta)."""
    return _estimate(partition, spec, params, t, M, config, "UlamSmol", n_batches)


def _sorted_eigvals(mat, k):
    w = scipy.linalg.eigvals(mat)
    order = np.lexsort((w.imag, -w.real))
    return w[order][:k]


def ulam_spectrum(um: UlamMatrix, k: int, stderr: bool = True):
    """Top-``k`` right eigenpairs, normalized in the mass-weighted norm.

    With ``stderr`` the per-eigenvalue standard error is estimated from the
    batch matrices (batch means over the interleaved sample subsets).
    """
    P = um.matrix
    part = um.partition
    if not 1 <= k <= P.shape[0]:
        raise ValueError(f"k must be in [1, {P.shape[0]}]")
    try:
        evals, evecs = scipy.linalg.eig(P)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectrumError(f"eigen-solver failed on Ulam matrix: {exc}", {"size": P.shape[0]}) from exc
    res = finish_spectrum(
        P,
        evals,
        evecs,
        k,
        weights=part.masses,
        density=part.density(),
        points=part.centers,
        kind=um.kind,
        t=um.t,
        box_partition=part,
        method="general",
    )
    B = um.batch_counts.shape[0]
    if stderr and B > 1:
        reps = []
        for b in range(B):
            c = um.batch_counts[b].astype(float)
            reps.append(_sorted_eigvals(c / c.sum(axis=1, keepdims=True), k).real)
        res.stderr = np.std(np.array(reps), axis=0, ddof=1) / np.sqrt(B)
    return res


def flux_matrix(um: UlamMatrix, counts=None) -> np.ndarray:
    if counts is None:
        P = um.matrix
    else:
        counts = counts.astype(float)
        P = counts / counts.sum(axis=1, keepdims=True)
    return um.partition.masses[:, None] * P


def flux_asymmetry(um: UlamMatrix) -> tuple[float, float]:
    """Relative flux asymmetry ||F - F^T||_1 / ||F||_1 and its noise scale.

    The noise scale propagates the batch-to-batch spread of F - F^T to the
    pooled estimate, i.e. the asymmetry expected from sampling noise alone.
    """
    F = flux_matrix(um)
    norm = np.abs(F).sum()
    asym = np.abs(F - F.T).sum() / norm
    B = um.batch_counts.shape[0]
    if B < 2:
        return float(asym), float("nan")
    skew = np.array([flux_matrix(um, um.batch_counts[b]) for b in range(B)])
    skew = skew - skew.transpose(0, 2, 1)
    sd = np.std(skew, axis=0, ddof=1) / np.sqrt(B)
    return float(asym), float(sd.sum() / norm)


def galerkin_matrix(um: UlamMatrix) -> np.ndarray:
    """Galerkin form with respect to mu_Q: entry (i, j) is m_i P_ij / m_j.

    This is ``diag(m) P diag(m)^-1``, similar to the stored transition matrix.
    """
    m = um.partition.masses
    return m[:, None] * um.matrix / m[None, :]


def save_ulam(um: UlamMatrix, path) -> tuple[Path, Path]:
    """Write the dense matrix as CSV (header ``j0,j1,...``) plus a JSON
    metadata sidecar."""
    path = Path(path)
    header = ",".join(f"j{j}" for j in range(um.matrix.shape[1]))
    np.savetxt(path, um.matrix, delimiter=",", fmt="%.12e", header=header, comments="")
    side = path.with_suffix(".json")
    side.write_text(json.dumps(um.metadata(), indent=2, sort_keys=True) + "\n")
    return path, side
