import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from localpc import cli
from localpc.mcmc import load_chain
from localpc.polychaos import load_surrogate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TOY = CONFIGS / "conjugate_toy.cfg"
STAGES = ["synthesize-data", "build-surrogate", "adapt", "sample", "analyze"]


def _run_all(cfg, out, seed=None):
    for stage in STAGES:
        argv = [stage, "--config", str(cfg), "--out", str(out)]
        if seed is not None:
            argv += ["--seed", str(seed)]
        assert cli.main(argv) == 0, stage


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    _run_all(TOY, out)
    return out


def test_toy_pipeline_outputs(toy_run):
    manifest = json.loads((toy_run / "manifest.json").read_text())
    assert set(manifest["stages"]) == set(STAGES)
    for stage in manifest["stages"].values():
        for name in stage["outputs"]:
            assert (toy_run / name).exists()
    assert manifest["stages"]["adapt"]["model_evals"] > 0
    assert "wall" not in json.dumps(manifest)
    assert set(json.loads((toy_run / "timings.json").read_text())) == set(STAGES)


def test_toy_posterior_matches_conjugate_formula(toy_run):
    d = np.loadtxt(toy_run / "data.tsv", ndmin=2)[:, 2]
    assert d.shape == (1,)
    post_var = 1 / (1 / 2 + 1 / 0.25)
    post_mean = post_var * d[0] / 0.25
    v = np.loadtxt(toy_run / "biasing.tsv", ndmin=2)
    trace = np.loadtxt(toy_run / "trace.tsv", ndmin=2)
    se = math.sqrt(post_var / trace[-1, -2])
    assert abs(v[0, 1] - post_mean) < 3 * se
    assert v[0, 2] == pytest.approx(math.sqrt(post_var), rel=0.1)
    assert trace[-1, 1] == 1.0
    chain, names = load_chain(toy_run / "chain_exact_independence.tsv")
    assert names == ["y1"]
    x = chain.kept()[:, 0]
    assert x.mean() == pytest.approx(post_mean, abs=0.03)


def test_toy_analysis_tables(toy_run):
    stats = (toy_run / "chain_stats.tsv").read_text().splitlines()
    assert stats[0].startswith("# chain\tacceptance\tess")
    assert len(stats) == 4
    ac = np.loadtxt(toy_run / "autocorr_y1.tsv")
    assert ac.shape == (101, 4)
    np.testing.assert_array_equal(ac[0, 1:], 1.0)


def test_analyze_can_be_rerun(toy_run):
    before = (toy_run / "chain_stats.tsv").read_bytes()
    assert cli.main(["analyze", "--config", str(TOY), "--out", str(toy_run)]) == 0
    assert (toy_run / "chain_stats.tsv").read_bytes() == before


def test_pipeline_is_bit_reproducible(toy_run, tmp_path):
    _run_all(TOY, tmp_path)
    for name in ["data.tsv", "trace.tsv", "biasing.tsv", "surrogate_adaptive.pc", "surrogate_prior.pc",
                 "chain_exact_dram.tsv", "chain_adaptive_independence.tsv", "chain_stats.tsv",
                 "manifest.json"]:
        assert (tmp_path / name).read_bytes() == (toy_run / name).read_bytes(), name


def test_seed_override_changes_outputs(toy_run, tmp_path):
    assert cli.main(["synthesize-data", "--config", str(TOY), "--out", str(tmp_path), "--seed", "11"]) == 0
    assert (tmp_path / "data.tsv").read_bytes() != (toy_run / "data.tsv").read_bytes()
    prov = json.loads((tmp_path / "data_provenance.json").read_text())
    assert prov["seed"] == 11


def test_later_stage_does_not_rerun_earlier_ones(toy_run, tmp_path):
    for name in ["data.tsv", "surrogate_adaptive.pc", "surrogate_prior.pc", "biasing.tsv"]:
        shutil.copy(toy_run / name, tmp_path / name)
    assert cli.main(["sample", "--config", str(TOY), "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert set(man["stages"]) == {"sample"}


def test_zero_noise_data_equals_fine_model(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TOY.read_text().replace("noise_sigma = 0.5", "noise_sigma = 0"))
    assert cli.main(["synthesize-data", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert np.loadtxt(tmp_path / "data.tsv", ndmin=2)[0, 2] == 0.7


def test_source_data_has_eighteen_rows(tmp_path):
    assert cli.main(["synthesize-data", "--config", str(CONFIGS / "source_paper.cfg"),
                     "--out", str(tmp_path)]) == 0
    rows = np.loadtxt(tmp_path / "data.tsv", ndmin=2)
    assert rows.shape == (18, 3)
    first = (tmp_path / "data.tsv").read_bytes()
    assert cli.main(["synthesize-data", "--config", str(CONFIGS / "source_paper.cfg"),
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "data.tsv").read_bytes() == first


def test_heat_data_has_fifty_rows(tmp_path):
    assert cli.main(["synthesize-data", "--config", str(CONFIGS / "heat_desk.cfg"),
                     "--out", str(tmp_path)]) == 0
    assert np.loadtxt(tmp_path / "data.tsv", ndmin=2).shape == (50, 3)


def test_constant_order_zero_surrogate(tmp_path):
    cfg = tmp_path / "c.cfg"
    text = TOY.read_text().replace("matrix = 1.0", "matrix = 0.0").replace("[surrogate]\norder = 1",
                                                                            "[surrogate]\norder = 0")
    cfg.write_text(text)
    assert cli.main(["build-surrogate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    s = load_surrogate(tmp_path / "surrogate_prior.pc")
    assert s.coefficients.shape == (1, 1) and s.coefficients[0, 0] == 0.0


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_missing_config_is_configuration_error(tmp_path, capsys):
    assert cli.main(["adapt", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_missing_truth_and_bad_values(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TOY.read_text().replace("truth = 0.7\n", ""))
    assert cli.main(["synthesize-data", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text(TOY.read_text().replace("rho = ", "x = ").replace("[adaptive]", "[adaptive]\nrho = 2"))
    shutil.copy(CONFIGS / "conjugate_toy.cfg", tmp_path / "orig.cfg")
    assert cli.main(["synthesize-data", "--config", str(tmp_path / "orig.cfg"), "--out", str(tmp_path)]) == 0
    assert cli.main(["adapt", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text(TOY.read_text().replace("problem = custom", "problem = weather"))
    assert cli.main(["adapt", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_stage_order_errors(tmp_path):
    assert cli.main(["adapt", "--config", str(TOY), "--out", str(tmp_path)]) == 2
    assert cli.main(["analyze", "--config", str(TOY), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    # a likelihood far sharper than the sample spread collapses the weights
    cfg.write_text(TOY.read_text().replace("[likelihood]\nsigma = 0.5", "[likelihood]\nsigma = 1e-6")
                   .replace("n_samples = 20000", "n_samples = 200").replace("initial_sigma = 1",
                                                                              "initial_sigma = 1\nmin_ess = 50"))
    assert cli.main(["synthesize-data", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert cli.main(["adapt", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_parser_requires_known_subcommand():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["fly", "--config", "x", "--out", "y"])
