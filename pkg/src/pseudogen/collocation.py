"""Fourier collocation discretization of the second pseudo generator.

Everything lives in nodal space: an operator is an ``n**dim x n**dim`` real
matrix acting on samples at the tensor grid {0, 1/n, ..., (n-1)/n}^dim, with
axis 0 varying fastest in the flat ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .potential import DynamicsParams, PotentialSpec, tensor_nodes

MAX_NODES = 4096

KINDS = ("G2", "Rt", "Et", "UlamS", "UlamSmol")


class GridError(ValueError):
    pass


class SpectrumError(RuntimeError):
    """Eigen-solver failure; ``diagnostics`` carries solver details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class CollocationGrid:
    dim: int
    n: int

    @cached_property
    def nodes(self) -> np.ndarray:
        return tensor_nodes(self.dim, self.n)

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def mode_indices(self) -> np.ndarray:
        m = (self.n - 1) // 2
        return np.arange(-m, m + 1)


def build_grid(dim: int, n: int, max_nodes: int = MAX_NODES) -> CollocationGrid:
    if dim < 1:
        raise GridError(f"dim must be >= 1, got {dim}")
    if n < 3 or n % 2 == 0:
        raise GridError(f"n must be odd and >= 3, got {n}")
    if n**dim > max_nodes:
        raise GridError(
            f"grid with {n}^{dim} = {n**dim} nodes exceeds the cap of {max_nodes} nodes"
        )
    return CollocationGrid(dim, n)


def fourier_d1(n: int) -> np.ndarray:
    """First-derivative matrix for 1-periodic samples, n odd."""
    k = np.arange(n)
    col = np.zeros(n)
    j = k[1:]
    col[1:] = math.pi * (-1.0) ** j / np.sin(math.pi * j / n)
    # D[i, l] = col[(i - l) mod n]
    return scipy.linalg.toeplitz(col, np.concatenate(([0.0], -col[1:])))


def fourier_d2(n: int) -> np.ndarray:
    """Second-derivative matrix for 1-periodic samples, n odd."""
    j = np.arange(1, n)
    col = np.empty(n)
    col[0] = -(math.pi**2) * (n * n - 1) / 3.0
    x = math.pi * j / n
    col[1:] = -2.0 * math.pi**2 * (-1.0) ** j / (np.sin(x) * np.tan(x))
    return scipy.linalg.toeplitz(col)


def _on_axis(mat: np.ndarray, axis: int, dim: int, n: int) -> np.ndarray:
    left = np.eye(n ** (dim - 1 - axis))
    right = np.eye(n**axis)
    return np.kron(left, np.kron(mat, right))


def diff_matrices(grid: CollocationGrid):
    """Per-axis (D1, D2) lists acting on the full flattened grid."""
    d1, d2 = fourier_d1(grid.n), fourier_d2(grid.n)
    if grid.dim == 1:
        return [d1], [d2]
    D1 = [_on_axis(d1, a, grid.dim, grid.n) for a in range(grid.dim)]
    D2 = [_on_axis(d2, a, grid.dim, grid.n) for a in range(grid.dim)]
    return D1, D2


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense nodal operator tagged with what it represents.

    ``weights`` are the mu_Q quadrature masses of the support points (summing
    to one) and ``density`` the normalized Lebesgue density f_Q there.
    """

    kind: str
    t: float
    params: DynamicsParams
    matrix: np.ndarray
    grid: CollocationGrid
    spec: PotentialSpec
    weights: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")

    @property
    def points(self) -> np.ndarray:
        return self.grid.nodes


def _boltzmann(spec, beta, nodes):
    boltz = np.exp(-beta * spec._value(nodes))
    z = boltz.mean()
    return boltz / boltz.sum(), boltz / z


def assemble_g2(
    grid: CollocationGrid, spec: PotentialSpec, params: DynamicsParams
) -> OperatorMatrix:
    """Collocation matrix of (1/beta) Laplacian - grad V . grad."""
    if spec.dim != grid.dim:
        raise GridError(f"potential dim {spec.dim} does not match grid dim {grid.dim}")
    nodes = grid.nodes
    grad = spec._gradient(nodes)
    D1, D2 = diff_matrices(grid)
    L = sum(D2) / params.beta
    for axis in range(grid.dim):
        L = L - grad[:, axis, None] * D1[axis]
    weights, density = _boltzmann(spec, params.beta, nodes)
    return OperatorMatrix("G2", 0.0, params, L, grid, spec, weights, density)


def _require_g2(op: OperatorMatrix):
    if op.kind != "G2":
        raise ValueError(f"expected a G2 operator, got kind {op.kind!r}")


def taylor_factor(t: float, gamma: float) -> float:
    return t * t / 2.0 - gamma * t**3 / 6.0


def assemble_rt(g2: OperatorMatrix, t: float, params: DynamicsParams | None = None):
    """Taylor reconstruction I + (t^2/2 - gamma t^3/6) G2."""
    _require_g2(g2)
    if t < 0:
        raise ValueError("lag time must be non-negative")
    params = params or g2.params
    n = g2.matrix.shape[0]
    mat = np.eye(n) + taylor_factor(t, params.gamma) * g2.matrix
    return OperatorMatrix("Rt", t, params, mat, g2.grid, g2.spec, g2.weights, g2.density)


def assemble_et(g2: OperatorMatrix, t: float):
    """Exponential reconstruction exp((t^2/2) G2) by scaling and squaring."""
    _require_g2(g2)
    if t < 0:
        raise ValueError("lag time must be non-negative")
    if t == 0:
        mat = np.eye(g2.matrix.shape[0])
    else:
        mat = scipy.linalg.expm((t * t / 2.0) * g2.matrix)
    return OperatorMatrix("Et", t, g2.params, mat, g2.grid, g2.spec, g2.weights, g2.density)


def expm_eig(mat: np.ndarray, scale: float) -> np.ndarray:
    """exp(scale * mat) through an eigendecomposition; independent of expm."""
    w, v = np.linalg.eig(mat)
    out = (v * np.exp(scale * w)) @ np.linalg.inv(v)
    return out.real


def smoluchowski_lag(tau: float) -> float:
    """The E^t lag whose rescaled time t^2/2 equals the Smoluchowski time tau."""
    return math.sqrt(2.0 * tau)


def weighted_asymmetry(op: OperatorMatrix) -> float:
    """||W A W^-1 - (W A W^-1)^T||_F / ||A||_F with W = diag(sqrt(weights))."""
    w = np.sqrt(op.weights)
    sym = w[:, None] * op.matrix / w[None, :]
    return float(np.linalg.norm(sym - sym.T) / np.linalg.norm(op.matrix))


@dataclass(eq=False)
class SpectrumResult:
    """Top eigenpairs of an operator, sorted by descending real part.

    ``eigenvectors`` holds nodal (or per-box) values column-wise, normalized to
    unit mu_Q-weighted 2-norm with the largest-magnitude entry made positive.
    ``eigenvectors_weighted`` multiplies them by f_Q, giving the representation
    with respect to Lebesgue measure. ``residuals`` are ||A v - lambda v||_2 for
    the Euclidean-normalized vector.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    eigenvectors_weighted: np.ndarray
    residuals: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    kind: str
    t: float
    spectral_floor: float
    matrix_norm: float
    grid: CollocationGrid | None = None
    box_partition: object = None
    stderr: np.ndarray | None = None
    method: str = ""

    def __len__(self):
        return len(self.eigenvalues)

    def evaluate(self, j: int, q) -> np.ndarray:
        """Value of eigenvector ``j`` (0-based) at arbitrary torus points."""
        q = np.mod(np.atleast_2d(np.asarray(q, dtype=float)), 1.0)
        if q.shape[1] != self.points.shape[1] and self.points.shape[1] == 1:
            q = q.reshape(-1, 1)
        if self.grid is not None:
            return trig_interpolate(self.eigenvectors[:, j], self.grid, q)
        return self.eigenvectors[self.box_partition.box_index(q), j]

    def to_rows(self):
        for i, (lam, res) in enumerate(zip(self.eigenvalues, self.residuals), start=1):
            yield i, lam.real, lam.imag, res


def trig_interpolate(values: np.ndarray, grid: CollocationGrid, q: np.ndarray):
    """Evaluate the trigonometric interpolant of nodal ``values`` at ``q``."""
    n, d = grid.n, grid.dim
    vals = np.asarray(values)
    coef = np.fft.fftn(vals.reshape((n,) * d, order="F")) / n**d
    modes = np.fft.fftfreq(n, 1.0 / n)
    phase = [np.exp(2j * np.pi * np.outer(q[:, a], modes)) for a in range(d)]
    if d == 1:
        out = phase[0] @ coef
    elif d == 2:
        out = np.einsum("pi,ij,pj->p", phase[0], coef, phase[1], optimize=True)
    else:
        out = np.zeros(q.shape[0], dtype=complex)
        for idx in np.ndindex(*coef.shape):
            term = np.full(q.shape[0], coef[idx])
            for a, k in enumerate(idx):
                term = term * phase[a][:, k]
            out += term
    return out.real if np.isrealobj(vals) else out


def finish_spectrum(
    A,
    evals,
    evecs,
    k,
    *,
    weights,
    density,
    points,
    kind,
    t,
    grid=None,
    box_partition=None,
    method="",
):
    """Sort, normalize, sign-fix and compute residuals for raw eigenpairs."""
    evals = np.asarray(evals)
    evecs = np.asarray(evecs)
    # candidates by descending real part; exact ties broken by imag then peak node
    peak = np.argmax(np.abs(evecs), axis=0)
    order = np.lexsort((peak, evals.imag, -evals.real))
    floor = float(np.min(evals.real))
    sel = order[:k]
    lam = evals[sel]
    vec = evecs[:, sel]
    if np.all(lam.imag == 0) and np.iscomplexobj(vec):
        vec = vec.real
    lam = lam.astype(complex)
    norms = np.sqrt(np.sum(weights[:, None] * np.abs(vec) ** 2, axis=0))
    vec = vec / norms
    for j in range(vec.shape[1]):
        mag = np.abs(vec[:, j])
        i = int(np.flatnonzero(mag >= mag.max() * (1.0 - 1e-9))[0])
        ph = vec[i, j] / mag[i]
        vec[:, j] = vec[:, j] / ph if np.iscomplexobj(vec) else vec[:, j] * np.sign(ph)
    unit = vec / np.linalg.norm(vec, axis=0)
    res = np.linalg.norm(A @ unit - unit * lam[None, :], axis=0)
    return SpectrumResult(
        eigenvalues=lam,
        eigenvectors=vec,
        eigenvectors_weighted=vec * density[:, None],
        residuals=res,
        points=points,
        weights=weights,
        density=density,
        kind=kind,
        t=t,
        spectral_floor=floor,
        matrix_norm=float(np.linalg.norm(A)),
        grid=grid,
        box_partition=box_partition,
        method=method,
    )


SYMMETRIC_TOL = 1e-12


def solve_spectrum(op: OperatorMatrix, k: int) -> SpectrumResult:
    """Top-``k`` eigenpairs by real part.

    The matrix is first conjugated with W = diag(sqrt(weights)). If that makes
    it symmetric to within ``SYMMETRIC_TOL`` (relative), the symmetric solver
    is used; otherwise the general solver runs on the conjugated matrix.
    Eigenvectors are mapped back to nodal values either way.
    """
    A = op.matrix
    size = A.shape[0]
    if not 1 <= k <= size:
        raise ValueError(f"k must be in [1, {size}], got {k}")
    w = np.sqrt(op.weights)
    B = w[:, None] * A / w[None, :]
    asym = np.linalg.norm(B - B.T) / max(np.linalg.norm(A), 1e-300)
    try:
        if asym <= SYMMETRIC_TOL:
            evals, y = scipy.linalg.eigh(0.5 * (B + B.T))
            method = "symmetric"
        else:
            evals, y = scipy.linalg.eig(B)
            method = "general"
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectrumError(
            f"eigen-solver failed for {op.kind}: {exc}",
            {"size": size, "asymmetry": float(asym), "finite": bool(np.isfinite(A).all())},
        ) from exc
    evecs = y / w[:, None]
    return finish_spectrum(
        A,
        evals.astype(complex),
        evecs,
        k,
        weights=op.weights,
        density=op.density,
        points=op.points,
        kind=op.kind,
        t=op.t,
        grid=op.grid,
        method=method,
    )


def weighted_gram(spec: SpectrumResult, k: int | None = None) -> np.ndarray:
    """Gram matrix of the top eigenvectors in the discrete mu_Q inner product."""
    v = spec.eigenvectors[:, :k]
    return (v.conj().T * spec.weights) @ v
