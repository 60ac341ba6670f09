import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from pseudogen.potential import (
    DynamicsParams,
    PotentialError,
    Term,
    builtin_double_well,
    builtin_four_well,
    eval_gradient,
    eval_potential,
    partition_function,
    potential_from_dict,
    resolve_potential,
    tensor_nodes,
    zero_potential,
)

coord = st.floats(-3.0, 3.0, allow_nan=False)


def double_well_formula(q):
    c = np.cos(2 * np.pi * q)
    return 1 + 3 * c + 3 * c**2 - c**3


@given(coord)
def test_double_well_matches_formula(q):
    assert eval_potential(builtin_double_well(), q) == pytest.approx(double_well_formula(q), abs=1e-12)


@given(coord, coord)
def test_four_well_matches_formula(q1, q2):
    v = double_well_formula(q1) + double_well_formula(q2) + np.cos(2 * np.pi * q2 - np.pi / 3)
    assert eval_potential(builtin_four_well(), [q1, q2]) == pytest.approx(v, abs=1e-12)


@settings(max_examples=100)
@given(coord, coord, st.integers(0, 1))
def test_periodic_in_every_axis(q1, q2, axis):
    spec = builtin_four_well()
    q = np.array([q1, q2])
    shifted = q.copy()
    shifted[axis] += 1.0
    assert abs(eval_potential(spec, shifted) - eval_potential(spec, q)) <= 1e-12


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    h = 1e-5
    for spec in (builtin_double_well(), builtin_four_well()):
        for q in rng.random((100, spec.dim)):
            g = eval_gradient(spec, q)
            fd = np.empty(spec.dim)
            for a in range(spec.dim):
                e = np.zeros(spec.dim)
                e[a] = h
                fd[a] = (eval_potential(spec, q + e) - eval_potential(spec, q - e)) / (2 * h)
            assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))


def test_gradient_error_is_second_order():
    spec = builtin_double_well()
    q = 0.123
    g = eval_gradient(spec, q)[0]
    errs = []
    for h in (1e-2, 5e-3):
        fd = (eval_potential(spec, q + h) - eval_potential(spec, q - h)) / (2 * h)
        errs.append(abs(fd - g))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_builtin_shapes():
    dw = builtin_double_well()
    assert dw.dim == 1 and dw.n_terms == 4
    fw = builtin_four_well()
    assert fw.dim == 2
    assert any(t.phase[1] == pytest.approx(math.pi / 3) for t in fw.terms)


def test_double_well_minima():
    # V'(q) = 0 with cos(2 pi q) = 1 - sqrt(2) gives the two symmetric minima
    spec = builtin_double_well()
    exact = math.acos(1 - math.sqrt(2)) / (2 * math.pi)
    xs = np.linspace(0, 1, 20001)
    v = eval_potential(spec, xs)
    found = []
    for lo, hi in ((0.0, 0.5), (0.5, 1.0)):
        sel = (xs >= lo) & (xs <= hi)
        x0 = xs[sel][np.argmin(v[sel])]
        res = minimize_scalar(lambda x: eval_potential(spec, x), bracket=(x0 - 1e-3, x0, x0 + 1e-3))
        found.append(res.x)
    assert found[0] == pytest.approx(exact, abs=1e-6)
    assert found[1] == pytest.approx(1 - exact, abs=1e-6)


def test_batch_and_single_point_conventions():
    spec = builtin_double_well()
    assert isinstance(eval_potential(spec, 0.3), float)
    assert eval_potential(spec, np.array([0.1, 0.2, 0.3])).shape == (3,)
    fw = builtin_four_well()
    assert eval_gradient(fw, [0.1, 0.2]).shape == (2,)
    assert eval_gradient(fw, np.zeros((5, 2))).shape == (5, 2)
    with pytest.raises(PotentialError):
        eval_potential(fw, np.zeros((4, 3)))


def test_term_validation():
    with pytest.raises(PotentialError):
        Term(1.0, (1.5,), (0.0,), (1,))
    with pytest.raises(PotentialError):
        Term(1.0, (1,), (0.0,), (0,))


def test_loader_reports_field_paths(tmp_path):
    data = {"dim": 1, "terms": [{"coef": 1.0, "freq": [1], "phase": [0.0], "power": [1]}, {"freq": [1]}]}
    with pytest.raises(PotentialError, match=r"potential\.terms\[1\]\.coef"):
        potential_from_dict(data)
    good = {"dim": 1, "constant": 2.0, "terms": [{"coef": 3.0, "freq": [1], "phase": [0.0], "power": [1]}]}
    path = tmp_path / "v.json"
    path.write_text(json.dumps(good))
    spec = resolve_potential(str(path))
    assert eval_potential(spec, 0.0) == pytest.approx(5.0)
    assert resolve_potential("double-well").name == "double_well"
    with pytest.raises(PotentialError):
        resolve_potential("no-such-potential")


def test_dynamics_params_fluctuation_dissipation():
    for beta, gamma in ((1.0, 1.0), (4.0, 0.5), (0.3, 7.0)):
        p = DynamicsParams(beta, gamma)
        assert p.sigma**2 * beta == pytest.approx(2 * gamma, rel=1e-15)
    with pytest.raises(ValueError):
        DynamicsParams(0.0, 1.0)
    with pytest.raises(ValueError):
        DynamicsParams(1.0, -1.0)


def test_partition_function_converges():
    spec = builtin_double_well()
    zs = [partition_function(spec, 1.0, n) for n in (16, 32, 64, 128)]
    diffs = np.abs(np.diff(zs))
    assert diffs[-1] < 1e-12 or np.all(diffs[1:] <= diffs[:-1] + 1e-15)
    assert partition_function(zero_potential(2), 1.0) == pytest.approx(1.0)


def test_tensor_nodes_axis0_fastest():
    nodes = tensor_nodes(2, 3)
    assert np.allclose(nodes[:3], [[0, 0], [1 / 3, 0], [2 / 3, 0]])
