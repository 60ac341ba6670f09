import json

import numpy as np
import pytest

from pseudogen import cli, io
from pseudogen.config import ConfigError, PRESETS, build_config, load_config


def write_yaml(path, text):
    path.write_text(text)
    return str(path)


def test_presets_validate():
    for name in PRESETS:
        cfg = build_config(preset=name)
        assert cfg.beta == 1.0 and cfg.gamma == 1.0 and cfg.n == 33
    assert build_config(preset="double-well").boxes == 256


@pytest.mark.parametrize(
    "data, field",
    [
        ({"potential": "double-well", "lags": []}, "lags"),
        ({"potential": "double-well", "lags": [0.1, -1]}, r"lags\[1\]"),
        ({"beta": 1.0}, "potential: missing"),
        ({"potential": {"dim": 1, "terms": [{"freq": [1], "phase": [0], "power": [1]}]}}, r"potential\.terms\[0\]\.coef"),
        ({"potential": "double-well", "n": 32}, "n:"),
        ({"potential": "double-well", "bogus": 1}, "bogus"),
        ({"potential": "double-well", "seed": -1}, "seed"),
        ({"potential": "double-well", "window": [0.4, 0.1]}, "window"),
    ],
)
def test_validation_names_the_field(data, field):
    with pytest.raises(ConfigError, match=field):
        build_config(data)


def test_load_yaml_with_overrides(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", "preset: four-well\nsamples: 10\nlags: [0.1]\n")
    cfg = load_config(path, seed=9, out=str(tmp_path / "o"))
    assert cfg.potential == "four-well" and cfg.samples == 10 and cfg.seed == 9
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_spectrum_command_is_deterministic(tmp_path):
    args = ["spectrum", "--preset", "double-well", "--check"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == cli.EXIT_OK
    for name in ("g2_spectrum.csv", "g2_eigenvectors.csv", "eigenvalues_Et.csv", "eigenvalues_Rt.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header, rows = io.read_csv(tmp_path / "a" / "g2_spectrum.csv")
    assert header == ["index", "re_lambda", "im_lambda", "residual"]
    assert rows[1][1] == "%.12e" % float(rows[1][1])
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        assert io.sha256(tmp_path / "a" / name) == digest
    resolved = json.loads((tmp_path / "a" / "config.resolved.json").read_text())
    assert resolved["preset"] == "double-well"


def test_reference_two_box_sanity(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", "potential: double-well\nboxes: 2\nsamples: 50\nlags: [0.1]\nk: 2\n")
    assert cli.main(["reference", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_OK
    mat = np.loadtxt(tmp_path / "o" / "ulam_matrix_t0.1.csv", delimiter=",", skiprows=1)
    assert mat.shape == (2, 2)
    assert np.allclose(mat.sum(axis=1), 1.0)


def test_exit_codes(tmp_path):
    bad = write_yaml(tmp_path / "bad.yaml", "potential: double-well\nlags: []\n")
    assert cli.main(["spectrum", "--config", bad, "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    cold = write_yaml(tmp_path / "cold.yaml", "potential: double-well\nbeta: 1.0e+9\nboxes: 2\nsamples: 5\nk: 2\n")
    assert cli.main(["reference", "--config", cold, "--out", str(tmp_path / "y")]) == cli.EXIT_NUMERIC
    small = write_yaml(
        tmp_path / "small.yaml", "potential: double-well\nboxes: 16\nsamples: 20\nlags: [0.1, 0.2]\n"
    )
    assert cli.main(["compare", "--config", small, "--out", str(tmp_path / "z"), "--check"]) == cli.EXIT_CHECK


def test_bounds_and_figures(tmp_path):
    cfg = write_yaml(
        tmp_path / "c.yaml",
        "preset: double-well\nboxes: 32\nsamples: 100\nlags: [0.1, 0.2]\nmc_samples: 1000\n",
    )
    out = tmp_path / "o"
    assert cli.main(["bounds", "--config", cfg, "--out", str(out), "--figures"]) == cli.EXIT_OK
    header, rows = io.read_csv(out / "bounds.csv")
    assert header[:6] == ["t", "upper", "lower", "mc_sum", "mc_stderr", "source"]
    zero = [r for r in rows if float(r[0]) == 0.0]
    assert zero and all(float(r[3]) == 2.0 for r in zero)
    assert {r[5] for r in rows} == {"ulam", "collocation_Et", "collocation_Rt"}
    assert (out / "bounds.png").stat().st_size > 0
    assert (out / "partition_nodes.csv").exists() and (out / "partition_tier1_boxes.csv").exists()
    meta = json.loads((out / "bounds_meta.json").read_text())
    assert "caveat" in meta and meta["n_sets"] == 2


def test_spectrum_with_smoluchowski_and_figures(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", "potential: four-well\nn: 15\nlags: [0.1, 0.5]\nsmoluchowski: true\n")
    assert cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "o"), "--figures"]) == cli.EXIT_OK
    assert (tmp_path / "o" / "eigenvalues_Smol.csv").exists()
    assert (tmp_path / "o" / "eigenvalues.png").exists()
