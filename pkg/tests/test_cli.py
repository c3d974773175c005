import csv

import numpy as np
import pytest

from sgpdf.cli import ExperimentConfig, default_config_path, load_config, main, read_config_file


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def eigenvalues(out):
    return [float(line.split("=")[1]) for line in out.splitlines() if line.startswith("lambda_")]


def test_shipped_config_matches_reference_defaults():
    cfg = load_config()
    ref = ExperimentConfig()
    assert cfg == ref
    assert (cfg.refinement_level, cfg.L, cfg.N, cfg.a_min, cfg.p, cfg.q, cfg.M, cfg.M_crude, cfg.f) == (
        3, 0.1, 2, 0.01, 4, 5, 100_000, 10_000, -1.0)
    assert set(read_config_file(default_config_path())) == set(ExperimentConfig.__dataclass_fields__)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("sigma_gamma = 0.5  # comment\nM = 1e3\nkde = yes\n")
    cfg = load_config(path, {"p": "3"})
    assert (cfg.sigma_gamma, cfg.M, cfg.kde, cfg.p, cfg.q) == (0.5, 1000, True, 3, 5)


@pytest.mark.parametrize("text", ["nonsense = 1\n", "sigma_gamma = abc\n", "method = fem\n", "just text\n",
                                  "order = 9\n"])
def test_bad_config_exit_code(tmp_path, text, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    assert main(["kl", "--config", str(path), "--output", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_is_io_error(tmp_path):
    assert main(["kl", "--config", str(tmp_path / "none.cfg")]) == 4


def test_kl_command_and_cache(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["kl", "--output", out]) == 0
    lam = eigenvalues(capsys.readouterr().out)
    assert len(lam) == 2 and all(v > 0 for v in lam)
    cache = next((tmp_path / "cache").iterdir())
    stamp = cache.stat().st_mtime_ns
    assert main(["kl", "--output", out]) == 0
    assert eigenvalues(capsys.readouterr().out) == lam
    assert cache.stat().st_mtime_ns == stamp
    assert main(["kl", "--output", out, "--sigma-gamma", "0.16"]) == 0
    doubled = eigenvalues(capsys.readouterr().out)
    assert np.allclose(doubled, 4 * np.array(lam), rtol=1e-5)


def test_moments_sg_reference_run(tmp_path):
    assert main(["moments", "--output", str(tmp_path)]) == 0
    table = rows(tmp_path / "moments_sg_average_s0.08.csv")
    assert [r["l"] for r in table] == ["1", "2", "3", "4", "5", "6"]
    assert f"{float(table[0]['m']):.4e}" == "-3.4798e-02"
    assert abs(float(table[1]["kappa_std"]) - 1.0) < 1e-12


def test_mc_refused_above_threshold(tmp_path, capsys):
    assert main(["moments", "--method", "mc", "--sigma-gamma", "0.5", "--output", str(tmp_path)]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["moments", "--method", "mc", "--sigma-gamma", "0.5", "--M", "200", "--force",
                 "--output", str(tmp_path)]) == 0


def test_outputs_are_byte_identical(tmp_path):
    args = ["moments", "--method", "mc", "--M", "500", "--seed", "3", "--output", str(tmp_path)]
    assert main(args) == 0
    first = (tmp_path / "moments_mc_average_s0.08.csv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "moments_mc_average_s0.08.csv").read_bytes() == first
    assert first.startswith(b"# sgpdf ")


def test_compare_small_variance(tmp_path):
    assert main(["compare", "--sigma-gamma", "0.02", "--M", "2000", "--output", str(tmp_path)]) == 0
    table = rows(tmp_path / "compare_average_s0.02.csv")
    assert [r["within_3se"] for r in table] == ["yes"] * 6


def test_estimate_nearly_gaussian_regime(tmp_path):
    out = str(tmp_path)
    assert main(["estimate", "--series", "GC", "--kde", "true", "--output", out]) == 0
    curves = rows(tmp_path / "series_GC_sg_average_s0.08.csv")
    hist = rows(tmp_path / "histogram_sg_average_s0.08.csv")
    x = np.array([float(r["x"]) for r in curves])
    centers = np.array([float(r["center"]) for r in hist])
    dens = np.array([float(r["density"]) for r in hist])
    names = [k for k in curves[0] if k.startswith("GC")]
    assert names
    for name in names:
        y = np.interp(centers, x, [float(r[name]) for r in curves])
        assert np.sqrt(np.mean((y - dens) ** 2)) < 0.02
    kde_lines = (tmp_path / "kde_sg_average_s0.08.csv").read_text().splitlines()
    width = float(hist[0]["right"]) - float(hist[0]["left"])
    h = float(next(l for l in kde_lines if l.startswith("# h=")).split("=")[1])
    assert abs(h - width) < 5e-5 * width  # both printed to 6 digits


def test_estimate_fixed_order(tmp_path):
    assert main(["estimate", "--series", "ED", "--order", "2", "--output", str(tmp_path)]) == 0
    curves = rows(tmp_path / "series_ED_sg_average_s0.08.csv")
    assert [k for k in curves[0]] == ["x", "ED2"]
    assert not list(tmp_path.glob("selection_*"))


def test_degenerate_variance_exit_code(tmp_path, capsys):
    assert main(["estimate", "--sigma-gamma", "1e-9", "--output", str(tmp_path)]) == 3
    assert "degenerate" in capsys.readouterr().err


def test_max_qoi_needs_mc(tmp_path):
    assert main(["moments", "--qoi-kind", "max", "--output", str(tmp_path)]) == 2
