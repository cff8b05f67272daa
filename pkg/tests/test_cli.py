import csv
import math

import numpy as np
import pytest

from kinetic_gibbs import constants as K
from kinetic_gibbs.cli import main, parse_config_text, ConfigError
from kinetic_gibbs.models import blr_synthetic_data, write_blr_csv
from kinetic_gibbs.sampler import InitialSpec
from kinetic_gibbs.wasserstein import read_cloud_csv

P0_TEXT = """\
L1 = 1
L2 = 1
rho = 0
C_rho = 1
H0 = 1
h0 = 1
u0 = 0
L1_bar = 1
a = 1
b = 1
gamma = 2
beta = 1   # inverse temperature
d = 1
sigma_Z = 1
m0 = 0
alpha = 1
eta = 0.01
"""

SMALL_SAMPLE = """\
model = quadratic
eta = 0.05
gamma = 2
beta = 1
steps = 400
burn_in = 0
thin = 10
n_chains = 70
master_seed = 11
init = gaussian
theta0 = 1
v0 = 0
"""


def run(tmp_path, command, text, *extra):
    cfg = tmp_path / f"{command}.cfg"
    cfg.write_text(text)
    out = tmp_path / "out"
    return main([command, str(cfg), "-o", str(out), *extra]), out


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


# ---------------------------------------------------------------------------
# config handling


def test_parse_config_comments_and_types():
    cfg = parse_config_text("# c\n eta = 0.5 # trailing\nsteps=3\ntheta0 = 1, 2\nnoise_enabled = off\n\n")
    assert cfg["eta"] == 0.5 and cfg["steps"] == 3 and not cfg["noise_enabled"]
    np.testing.assert_array_equal(cfg["theta0"], [1.0, 2.0])


@pytest.mark.parametrize("text, msg", [
    ("lambda_typo = 3\n", "lambda_typo"),
    ("eta 0.1\n", "key = value"),
    ("steps = many\n", "steps"),
    ("noise_enabled = maybe\n", "noise_enabled"),
])
def test_parse_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config_text(text)


def test_unknown_key_exits_2(tmp_path, capsys):
    code, _ = run(tmp_path, "constants", P0_TEXT + "lambda_typo = 0.3\n")
    assert code == 2
    assert "lambda_typo" in capsys.readouterr().err


def test_missing_key_exits_2(tmp_path, capsys):
    code, _ = run(tmp_path, "constants", P0_TEXT.replace("L2 = 1\n", ""))
    assert code == 2
    assert "L2" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["constants", str(tmp_path / "nope.cfg")]) == 2


def test_bad_command_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["bogus", str(tmp_path / "x.cfg")])
    assert exc.value.code == 2


def test_help_documents_schemas(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for cols in ("name, value, log10_value, formula_ref", "k, m2, m2_se, th2, th2_se, v2, v2_se, vsq, vsq_se",
                 "eta, w2_moment, w2_assign, mc_se", "k, subopt, se, bound", "quantity, value",
                 "theta_1..theta_d, v_1..v_d", "check, statistic, threshold, passed"):
        assert cols in text


# ---------------------------------------------------------------------------
# constants


def test_constants_p0(tmp_path, capsys):
    code, out = run(tmp_path, "constants", P0_TEXT)
    assert code == 0
    printed = capsys.readouterr().out
    assert "eta_max = 7.509" in printed and "gibbs_gap = 0.8465" in printed
    assert header(out / "constants.csv") == ["name", "value", "log10_value", "formula_ref"]
    got = K.read_report_csv(out / "constants.csv")
    ref = K.evaluate_all(K.P0, eta=0.01)
    assert set(got) == set(ref.entries)
    for name, e in ref.entries.items():
        if math.isfinite(e.value) and e.value != 0:
            assert got[name] == pytest.approx(e.value, rel=1e-12), name


def test_constants_set_override(tmp_path):
    code, out = run(tmp_path, "constants", P0_TEXT, "--set", "beta=2")
    assert code == 0
    got = K.read_report_csv(out / "constants.csv")
    assert got["gibbs_gap"] == pytest.approx(K.gibbs_gap(K.P0.with_(beta=2.0)), rel=1e-12)


def test_constants_bad_eta(tmp_path):
    code, _ = run(tmp_path, "constants", P0_TEXT.replace("eta = 0.01", "eta = 2"))
    assert code == 2


# ---------------------------------------------------------------------------
# sample


def test_sample_outputs_and_schemas(tmp_path):
    code, out = run(tmp_path, "sample", SMALL_SAMPLE + "params = declared\n")
    assert code == 0
    assert header(out / "moments.csv") == ["k", "m2", "m2_se", "th2", "th2_se", "v2", "v2_se", "vsq", "vsq_se"]
    assert header(out / "terminal_cloud.csv") == ["theta_1", "v_1"]
    assert header(out / "checks.csv") == ["check", "statistic", "threshold", "passed"]
    assert header(out / "stationarity.csv") == ["quantity", "value"]
    names = [r[0] for r in csv.reader(open(out / "checks.csv"))][1:]
    assert names == ["drift_violations", "bound_C_theta", "bound_C_v", "bound_C_zeta", "bound_Vsq_bound"]
    assert read_cloud_csv(out / "terminal_cloud.csv").shape == (70, 2)


def test_sample_deterministic_bytes(tmp_path, monkeypatch):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    monkeypatch.setenv("KINETIC_GIBBS_THREADS", "1")
    assert run(a, "sample", SMALL_SAMPLE)[0] == 0
    monkeypatch.setenv("KINETIC_GIBBS_THREADS", "2")
    assert run(b, "sample", SMALL_SAMPLE)[0] == 0
    for name in ("moments.csv", "terminal_cloud.csv", "stationarity.csv"):
        assert (a / "out" / name).read_bytes() == (b / "out" / name).read_bytes()


def test_sample_zero_steps_returns_initial_draws(tmp_path):
    code, out = run(tmp_path, "sample", SMALL_SAMPLE.replace("steps = 400", "steps = 0"))
    assert code == 0
    cloud = read_cloud_csv(out / "terminal_cloud.csv")
    init = InitialSpec([1.0], [0.0], kind="gaussian", theta_scale=1.0, v_scale=1.0)
    for cid in (0, 1, 69):
        s = init.draw(11, cid)
        np.testing.assert_array_equal(cloud[cid], np.r_[s.theta, s.v])


def test_sample_divergence_exits_3(tmp_path, capsys):
    text = SMALL_SAMPLE.replace("eta = 0.05", "eta = 3").replace("gamma = 2", "gamma = 0.5")
    code, out = run(tmp_path, "sample", text)
    assert code == 3
    assert "divergence: chain@iteration 0@" in capsys.readouterr().err
    # every chain failed; the series stops before the first failure
    k = np.loadtxt(out / "moments.csv", delimiter=",", skiprows=1, ndmin=2)[:, 0]
    assert k.size > 0 and k[0] == 0
    assert not (out / "terminal_cloud.csv").exists()


# ---------------------------------------------------------------------------
# scaling


SCALING = """\
model = quadratic
gamma = 2
beta = 1
eta = 0.1
physical_time = 50
burn_in_time = 5
n_chains = 20
master_seed = 1
reference_size = 100
bootstrap = 20
"""


def test_scaling_single_eta(tmp_path, capsys):
    code, out = run(tmp_path, "scaling", SCALING + "eta_list = 0.1\n")
    assert code == 0
    rows = list(csv.DictReader(open(out / "scaling.csv")))
    assert header(out / "scaling.csv") == ["eta", "w2_moment", "w2_assign", "mc_se"]
    assert len(rows) == 1 and float(rows[0]["eta"]) == 0.1
    assert float(rows[0]["w2_moment"]) > 0 and float(rows[0]["mc_se"]) > 0
    assert (out / "plot_scaling.py").read_text().startswith("# Log-log")


def test_scaling_divergence_keeps_smaller_eta(tmp_path):
    code, out = run(tmp_path, "scaling", SCALING + "eta_list = 3, 0.1\n", "--set", "physical_time=200")
    assert code == 3
    rows = list(csv.DictReader(open(out / "scaling.csv")))
    assert [float(r["eta"]) for r in rows] == [3.0, 0.1]
    assert math.isnan(float(rows[0]["w2_moment"])) and math.isfinite(float(rows[1]["w2_moment"]))


def test_scaling_needs_quadratic(tmp_path):
    code, _ = run(tmp_path, "scaling", SCALING.replace("quadratic", "mixture") + "eta_list = 0.1\n")
    assert code == 2


# ---------------------------------------------------------------------------
# optimize


def test_optimize_at_minimum_is_zero(tmp_path):
    text = SMALL_SAMPLE.replace("init = gaussian", "init = point").replace("theta0 = 1", "theta0 = 0") \
        + "noise_enabled = false\n"
    code, out = run(tmp_path, "optimize", text)
    assert code == 0
    assert header(out / "optimize.csv") == ["k", "subopt", "se", "bound"]
    rows = list(csv.DictReader(open(out / "optimize.csv")))
    assert all(float(r["subopt"]) == 0.0 for r in rows)


def test_optimize_mixture_nonnegative(tmp_path):
    text = """model = mixture\nprior_m = 2\neta = 0.01\nsteps = 2000\nthin = 100\nn_chains = 50\n
theta0 = 3\nbeta = 5\n"""
    code, out = run(tmp_path, "optimize", text)
    assert code == 0
    rows = list(csv.DictReader(open(out / "optimize.csv")))
    # U - U_* >= 0 pointwise, so every mean is >= 0 up to the line-search tolerance
    assert all(float(r["subopt"]) >= -1e-9 for r in rows)


def test_optimize_overlays_bound(tmp_path):
    code, out = run(tmp_path, "optimize", SMALL_SAMPLE + "params = declared\n")
    assert code == 0
    rows = list(csv.DictReader(open(out / "optimize.csv")))
    bounds = [float(r["bound"]) for r in rows]
    assert all(math.isfinite(b) and b > 0 for b in bounds)


# ---------------------------------------------------------------------------
# blr


BLR = """\
M = 4
K = 2
theta_true = 1, -1
data_seed = 3
test_size = 200
prior_m = 1, 1
eta = 0.001
steps = 2000
n_chains = 4
master_seed = 2
"""


def _summary(out):
    return {r[0]: r[1] for r in list(csv.reader(open(out / "blr_summary.csv")))[1:]}


def test_blr_exhaustive_unbiasedness(tmp_path):
    code, out = run(tmp_path, "blr", BLR)
    assert code == 0
    s = _summary(out)
    assert header(out / "blr_summary.csv") == ["quantity", "value"]
    assert s["unbiasedness_mode"] == "exhaustive"
    assert float(s["unbiasedness_deviation"]) < 1e-10 and s["unbiasedness_passed"] == "True"
    assert "full_batch_consistent" not in s


def test_blr_full_batch_flag(tmp_path):
    code, out = run(tmp_path, "blr", BLR.replace("K = 2", "K = 4"))
    assert code == 0
    s = _summary(out)
    assert s["full_batch_consistent"] == "True" and float(s["full_batch_deviation"]) < 1e-12


def test_blr_data_file_with_holdout(tmp_path):
    ds = blr_synthetic_data(300, 2, [2.0, -1.0], seed=1)
    path = tmp_path / "data.csv"
    write_blr_csv(ds, path)
    text = f"data_file = {path}\ntest_size = 100\nK = 10\nprior_m = 1, 1\neta = 0.001\nsteps = 500\nn_chains = 2\n"
    code, out = run(tmp_path, "blr", text)
    assert code == 0
    assert 0.5 < float(_summary(out)["accuracy"]) <= 1.0


@pytest.mark.parametrize("content", ["z_1,y\n1,0\n2,5\n", "a,b\n1,0\n", "z_1,y\n1\n", ""])
def test_blr_malformed_csv_exits_2(tmp_path, capsys, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    code, _ = run(tmp_path, "blr", f"data_file = {path}\nK = 1\neta = 0.001\nsteps = 10\n")
    assert code == 2
    assert "dataset" in capsys.readouterr().err


def test_blr_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert run(a, "blr", BLR)[0] == 0
    assert run(b, "blr", BLR)[0] == 0
    for name in ("blr_summary.csv", "terminal_cloud.csv"):
        assert (a / "out" / name).read_bytes() == (b / "out" / name).read_bytes()


def test_shipped_configs_parse():
    from pathlib import Path
    from kinetic_gibbs.cli import load_config

    configs = sorted((Path(__file__).resolve().parents[1] / "scripts" / "configs").glob("*.cfg"))
    assert len(configs) >= 7
    for path in configs:
        assert "output_dir" in load_config(path)
