"""Periodic trigonometric potentials on the unit torus.

A potential is a sum of trigonometric monomials

    V(q) = constant + sum_t coef_t * prod_i cos(2*pi*freq_ti*q_i - phase_ti)**power_ti

which keeps V smooth, exactly 1-periodic and gives closed-form gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi


class PotentialError(ValueError):
    """Malformed potential definition or evaluation input."""


@dataclass(frozen=True)
class Term:
    """One monomial ``coef * prod_i cos(2 pi freq_i q_i - phase_i)**power_i``."""

    coef: float
    freq: tuple[int, ...]
    phase: tuple[float, ...]
    power: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.freq) == len(self.phase) == len(self.power)):
            raise PotentialError("term freq/phase/power must have equal length")
        for f in self.freq:
            if int(f) != f:
                raise PotentialError(f"frequencies must be integers, got {f!r}")
        for p in self.power:
            if int(p) != p or p < 1:
                raise PotentialError(f"powers must be positive integers, got {p!r}")
        object.__setattr__(self, "freq", tuple(int(f) for f in self.freq))
        object.__setattr__(self, "phase", tuple(float(p) for p in self.phase))
        object.__setattr__(self, "power", tuple(int(p) for p in self.power))


@dataclass(frozen=True)
class PotentialSpec:
    """Trigonometric polynomial potential on the ``dim``-torus [0, 1)^dim."""

    dim: int
    terms: tuple[Term, ...] = ()
    constant: float = 0.0
    name: str = "custom"
    # unique (axis, freq, phase) angles shared between terms
    _angles: tuple = field(init=False, repr=False, compare=False)
    _factors: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise PotentialError(f"dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "terms", tuple(self.terms))
        angles: dict[tuple[int, int, float], int] = {}
        factors = []
        for term in self.terms:
            if len(term.freq) != self.dim:
                raise PotentialError(
                    f"term has {len(term.freq)} axes but potential dim is {self.dim}"
                )
            tf = []
            for axis, (f, ph, pw) in enumerate(zip(term.freq, term.phase, term.power)):
                if f == 0:
                    # constant factor cos(-phase)**power
                    tf.append((None, math.cos(-ph) ** pw, pw, axis))
                    continue
                key = (axis, f, ph)
                if key not in angles:
                    angles[key] = len(angles)
                tf.append((angles[key], None, pw, axis))
            factors.append((term.coef, tuple(tf)))
        object.__setattr__(self, "_angles", tuple(angles))
        object.__setattr__(self, "_factors", tuple(factors))

    @property
    def n_terms(self) -> int:
        """Number of terms, counting a nonzero constant offset as one."""
        return len(self.terms) + (self.constant != 0.0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "constant": self.constant,
            "terms": [
                {
                    "coef": t.coef,
                    "freq": list(t.freq),
                    "phase": list(t.phase),
                    "power": list(t.power),
                }
                for t in self.terms
            ],
        }

    def _trig(self, q):
        cos, sin = [], []
        for axis, f, ph in self._angles:
            theta = TWO_PI * f * q[:, axis] - ph
            cos.append(np.cos(theta))
            sin.append(np.sin(theta))
        return cos, sin

    def _value(self, q):
        cos, _ = self._trig(q)
        out = np.full(q.shape[0], float(self.constant))
        for coef, tf in self._factors:
            val = coef
            for idx, const, pw, _axis in tf:
                val = val * (const if idx is None else _ipow(cos[idx], pw))
            out += val
        return out

    def _gradient(self, q):
        cos, sin = self._trig(q)
        grad = np.zeros_like(q)
        for coef, tf in self._factors:
            vals = [
                const if idx is None else _ipow(cos[idx], pw)
                for idx, const, pw, _axis in tf
            ]
            for k, (idx, _const, pw, axis) in enumerate(tf):
                if idx is None:
                    continue
                f = self._angles[idx][1]
                d = -TWO_PI * f * pw * sin[idx]
                if pw > 1:
                    d = d * _ipow(cos[idx], pw - 1)
                for j, v in enumerate(vals):
                    if j != k:
                        d = d * v
                grad[:, axis] += coef * d
        return grad


def _ipow(x, p):
    if p == 1:
        return x
    if p == 2:
        return x * x
    if p == 3:
        return x * x * x
    return x**p


def _as_points(spec: PotentialSpec, q) -> tuple[np.ndarray, bool]:
    arr = np.asarray(q, dtype=float)
    single = arr.ndim <= 1
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if spec.dim == 1:
            # a flat array on the circle is a batch of points
            single = arr.shape[0] == 1
            arr = arr.reshape(-1, 1)
        else:
            arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != spec.dim:
        raise PotentialError(
            f"expected points of dimension {spec.dim}, got array of shape {np.shape(q)}"
        )
    return np.mod(arr, 1.0), single


def eval_potential(spec: PotentialSpec, q):
    """Evaluate V at one point (shape ``(dim,)``) or a batch (shape ``(n, dim)``).

    Coordinates are reduced mod 1 first. A single point returns a float.
    """
    pts, single = _as_points(spec, q)
    val = spec._value(pts)
    return float(val[0]) if single else val


def eval_gradient(spec: PotentialSpec, q):
    """Analytic gradient of V, same point conventions as :func:`eval_potential`."""
    pts, single = _as_points(spec, q)
    grad = spec._gradient(pts)
    return grad[0] if single else grad


def _double_well_terms(dim: int, axis: int) -> list[Term]:
    def mono(coef, power):
        freq = [0] * dim
        pw = [1] * dim
        freq[axis] = 1
        pw[axis] = power
        return Term(coef, tuple(freq), (0.0,) * dim, tuple(pw))

    return [mono(3.0, 1), mono(3.0, 2), mono(-1.0, 3)]


def builtin_double_well() -> PotentialSpec:
    """V(q) = 1 + 3 cos(2 pi q) + 3 cos^2(2 pi q) - cos^3(2 pi q) on the circle."""
    return PotentialSpec(1, tuple(_double_well_terms(1, 0)), 1.0, name="double_well")


def builtin_four_well() -> PotentialSpec:
    """Sum of two double wells plus the tilt cos(2 pi q2 - pi/3) on the 2-torus."""
    terms = _double_well_terms(2, 0) + _double_well_terms(2, 1)
    terms.append(Term(1.0, (0, 1), (0.0, math.pi / 3.0), (1, 1)))
    return PotentialSpec(2, tuple(terms), 2.0, name="four_well")


def zero_potential(dim: int = 1) -> PotentialSpec:
    return PotentialSpec(dim, (), 0.0, name="zero")


BUILTINS = {
    "double_well": builtin_double_well,
    "four_well": builtin_four_well,
}


def potential_from_dict(data: dict) -> PotentialSpec:
    """Build a potential from a key-value tree.

    Expected keys: ``dim``, optional ``constant`` and ``terms``, each term with
    ``coef`` and per-axis lists ``freq``, ``phase`` (radians), ``power``.
    """
    if not isinstance(data, dict):
        raise PotentialError("potential definition must be a mapping")
    if "dim" not in data:
        raise PotentialError("potential.dim: missing")
    dim = data["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise PotentialError(f"potential.dim: must be a positive integer, got {dim!r}")
    terms = []
    for i, raw in enumerate(data.get("terms", [])):
        where = f"potential.terms[{i}]"
        if not isinstance(raw, dict):
            raise PotentialError(f"{where}: must be a mapping")
        try:
            coef = float(raw["coef"])
            freq = tuple(raw["freq"])
            phase = tuple(raw.get("phase", [0.0] * len(freq)))
            power = tuple(raw.get("power", [1] * len(freq)))
        except KeyError as exc:
            raise PotentialError(f"{where}.{exc.args[0]}: missing") from None
        except TypeError as exc:
            raise PotentialError(f"{where}: {exc}") from None
        if len(freq) != dim:
            raise PotentialError(f"{where}.freq: expected {dim} entries, got {len(freq)}")
        try:
            terms.append(Term(coef, freq, phase, power))
        except PotentialError as exc:
            raise PotentialError(f"{where}: {exc}") from None
    return PotentialSpec(
        dim,
        tuple(terms),
        float(data.get("constant", 0.0)),
        name=str(data.get("name", "custom")),
    )


def resolve_potential(value) -> PotentialSpec:
    """Accept a built-in name, a mapping, or a path to a JSON/YAML file."""
    if isinstance(value, PotentialSpec):
        return value
    if isinstance(value, dict):
        return potential_from_dict(value)
    if isinstance(value, str):
        key = value.replace("-", "_")
        if key in BUILTINS:
            return BUILTINS[key]()
        path = Path(value)
        if path.is_file():
            text = path.read_text()
            if path.suffix == ".json":
                data = json.loads(text)
            else:
                import yaml

                data = yaml.safe_load(text)
            return potential_from_dict(data)
        raise PotentialError(f"unknown potential {value!r}")
    raise PotentialError(f"cannot interpret potential {value!r}")


@dataclass(frozen=True)
class DynamicsParams:
    """Inverse temperature and Langevin damping; the noise amplitude is derived."""

    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta!r}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")

    @property
    def sigma(self) -> float:
        return math.sqrt(2.0 * self.gamma / self.beta)


def tensor_nodes(dim: int, n: int) -> np.ndarray:
    """Uniform periodic grid {0, 1/n, ...}^dim, axis 0 varying fastest."""
    axes = np.meshgrid(*([np.arange(n) / n] * dim), indexing="ij")
    return np.stack([a.ravel(order="F") for a in axes], axis=1)


def partition_function(spec: PotentialSpec, beta: float, n: int = 256) -> float:
    """Z_Q = int exp(-beta V) dq by the periodic trapezoid rule on n^dim nodes."""
    nodes = tensor_nodes(spec.dim, n)
    return float(np.mean(np.exp(-beta * spec._value(nodes))))


def canonical_density(spec: PotentialSpec, beta: float, q, z: float | None = None):
    """Normalized positional Boltzmann density f_Q at ``q``."""
    if z is None:
        z = partition_function(spec, beta)
    pts, single = _as_points(spec, q)
    val = np.exp(-beta * spec._value(pts)) / z
    return float(val[0]) if single else val
