import json

import numpy as np
import pytest

from dlsem.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fit_json_default(capsys):
    code, out, _ = run(capsys, "fit")
    rep = json.loads(out)
    assert code == 0
    assert rep["n"] == 145 and rep["p"] == 9
    assert rep["method"]["name"] == "ml-em"
    assert [r["name"] for r in rep["parameters"]][0] == "visual=~x1"
    assert "version" in rep and "seed" in rep
    assert rep["fit_statistics"]["df"] == 23


@pytest.mark.parametrize("se", ["standard", "sandwich"])
def test_fit_dls_m_one_equals_gls_m(capsys, se):
    # under --se auto the two differ only in SE kind (standard vs sandwich)
    _, a, _ = run(capsys, "fit", "--method", "dls-m", "--a", "1", "--se", se)
    _, b, _ = run(capsys, "fit", "--method", "gls-m", "--se", se)
    ra, rb = json.loads(a), json.loads(b)
    for x, y in zip(ra["parameters"], rb["parameters"]):
        assert x["estimate"] == pytest.approx(y["estimate"], abs=1e-6)
        assert x["se"] == pytest.approx(y["se"], abs=1e-6)
    assert ra["fit_statistics"]["T"] == pytest.approx(rb["fit_statistics"]["T"], abs=1e-6)


def test_fit_csv(capsys, tmp_path):
    path = tmp_path / "fit.csv"
    code, _, _ = run(capsys, "fit", "--method", "rgls-i", "--a", "0.36", "--out", "csv", "-o", str(path))
    text = path.read_text()
    assert code == 0
    assert text.startswith("# dlsem")
    assert "name,estimate,se,z" in text


def test_fit_bad_a_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--a", "1.5"])
    assert exc.value.code == 2


def test_fit_missing_file_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "fit", str(tmp_path / "nope.csv"))
    assert code == 2 and "invalid input" in err


def test_fit_nonconvergence_exits_3(capsys):
    code, out, err = run(capsys, "fit", "--max-iterations", "1")
    assert code == 3
    assert json.loads(out)["convergence"]["converged"] is False


def test_describe(capsys, tmp_path):
    code, out, _ = run(capsys, "describe")
    rep = json.loads(out)
    assert code == 0 and rep["n"] == 145 and rep["p"] == 9
    csv = tmp_path / "const.csv"
    rows = "\n".join(f"{i},1,{i * i}" for i in range(10))
    csv.write_text("a,b,c\n" + rows + "\n")
    code, out, err = run(capsys, "describe", str(csv))
    assert code == 0 and "warning" in err
    assert json.loads(out)["multivariate_kurtosis"] is None


def test_describe_normal_data(capsys, tmp_path, rng):
    X = rng.standard_normal((3000, 3))
    csv = tmp_path / "norm.csv"
    np.savetxt(csv, X, delimiter=",", header="a,b,c", comments="")
    _, out, _ = run(capsys, "describe", str(csv))
    rep = json.loads(out)
    assert rep["multivariate_skewness"] == pytest.approx(1.0, abs=0.3)
    assert rep["multivariate_kurtosis"] == pytest.approx(1.0, abs=0.05)


def test_tune_smoke_and_determinism(capsys, tmp_path):
    args = ["tune", "--method", "dls-m", "--grid", "0.7,0.8", "-B", "3", "--seed", "5"]
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args, "--curve-csv", str(tmp_path / "c.csv"))
    assert json.loads(a)["curve"] == json.loads(b)["curve"]
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "a,rmse,convergence_rate"


def test_tune_single_bootstrap_warns(capsys):
    code, out, err = run(capsys, "tune", "--method", "rgls-i", "--grid", "0.3:0.4:0.1", "-B", "1")
    assert code == 0 and "warning" in err
    assert json.loads(out)["B"] == 1


def test_simulate(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"p": 4, "m": 1, "n_list": [80], "replications": 3, "seed": 2,
                               "methods": [{"method": "dls-m", "grid": [0.5, 1.0]}, "ml"]}))
    code, _, _ = run(capsys, "simulate", str(cfg), "--out", str(tmp_path / "o1"))
    run(capsys, "simulate", str(cfg), "--out", str(tmp_path / "o2"))
    assert code == 0
    for name in ("report.json", "metrics.csv", "parameters.csv", "selected_a.csv", "plot_by_a.csv", "plot_by_n.csv"):
        assert (tmp_path / "o1" / name).exists()
    assert (tmp_path / "o1" / "report.json").read_bytes() == (tmp_path / "o2" / "report.json").read_bytes()


def test_simulate_bad_condition(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"conditions": ["uniform"]}))
    code, _, err = run(capsys, "simulate", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 2 and "config.conditions" in err
