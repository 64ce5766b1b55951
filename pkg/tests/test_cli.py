import csv
import io
import json
import subprocess
import sys

import pytest

from semibasis.cli import main
from semibasis.lynx_model import SETAR2, forecast_eval, load_series


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def data_section(text):
    head, _, body = text.partition("\n\n")
    return head, body


def table(text):
    return list(csv.DictReader(io.StringIO(data_section(text)[1])))


def test_price_european_call(capsys):
    code, out, _ = run(
        capsys, "price", "--style", "european", "--kind", "call", "--S", "100", "--K", "100",
        "--r", "0", "--d", "0", "--sigma", "0.2", "--tau", "1",
    )
    assert code == 0
    rows = table(out)
    assert round(float(rows[0]["price"]), 4) == 7.9656
    head, _ = data_section(out)
    assert "config.sigma: 0.2" in head and "command: price" in head


def test_price_american_put_zero_rates_has_no_premium(capsys):
    code, out, _ = run(capsys, "price", "--style", "american", "--kind", "put", "--S", "100", "--K", "100",
                       "--r", "0", "--d", "0", "--tau", "1")
    rows = {r["method"]: r for r in table(out)}
    assert rows["american"]["note"] == "premium 0"
    assert rows["american"]["price"] == rows["black-scholes"]["price"]


def test_price_american_put_with_rate(capsys):
    code, out, _ = run(capsys, "price", "--style", "american", "--kind", "put", "--S", "100", "--K", "100",
                       "--r", "0.06", "--tau", "1", "--n-steps", "500", "--decomposition")
    rows = {r["method"]: r for r in table(out)}
    assert float(rows["american"]["price"]) > float(rows["black-scholes"]["price"])
    assert float(rows["decomposition"]["price"]) == pytest.approx(float(rows["american"]["price"]), rel=5e-3)


def test_missing_strike_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["price", "--S", "100", "--tau", "1"])
    assert exc.value.code != 0
    assert "--K" in capsys.readouterr().err


def test_invalid_value_exits_nonzero(capsys):
    code, _, err = run(capsys, "price", "--S", "100", "--K", "100", "--tau", "1", "--sigma", "-0.2")
    assert code == 1
    assert "sigma" in err


def test_console_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "semibasis", "lynx-skeleton"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "summary: period 8, max 0.212, min -0.269" in res.stdout


def test_boundary_and_premium(capsys):
    code, out, _ = run(capsys, "boundary", "--S", "100", "--K", "100", "--r", "0.06", "--tau", "0.5", "--n-steps", "200")
    rows = table(out)
    assert code == 0 and len(rows) > 10
    assert float(rows[-1]["u"]) == 0.0
    code, out, _ = run(capsys, "premium", "--S", "100", "--K", "100", "--r", "0.06", "--tau", "0.5", "--n-steps", "1000")
    row = table(out)[0]
    assert abs(float(row["difference"])) < 0.01


def test_lynx_forecast_setar(capsys):
    code, out, _ = run(capsys, "lynx-forecast", "--model", "setar2")
    rows = table(out)
    assert [r["year"] for r in rows[:12]] == [str(y) for y in range(1923, 1935)]
    ref = forecast_eval(SETAR2, load_series())
    assert float(rows[-1]["error_1"]) == pytest.approx(ref.aape[1], abs=1e-15)
    assert float(rows[-1]["error_2"]) == pytest.approx(ref.aape[2], abs=1e-15)
    assert rows[0]["X"] == "3.054"


def test_lynx_skeleton_summary(capsys):
    code, out, _ = run(capsys, "lynx-skeleton", "--model", "setar2", "--x0", "3,3")
    head, _ = data_section(out)
    assert "summary: period 8, max 0.212, min -0.269" in head
    assert len(table(out)) == 8


def test_lynx_skeleton_bad_x0(capsys):
    code, _, err = run(capsys, "lynx-skeleton", "--x0", "3")
    assert code == 1 and "--x0" in err


def test_lynx_grid_file(tmp_path, capsys):
    out = tmp_path / "grid.csv"
    code, stdout, _ = run(capsys, "lynx-grid", "--model", "logistic", "--out", str(out), "--x1", "1,4,7", "--x2", "1,4,7")
    assert code == 0 and stdout == ""
    text = out.read_text()
    head, body = data_section(text)
    assert "config.model: logistic" in head
    rows = list(csv.DictReader(io.StringIO(body)))
    assert len(rows) == 49
    assert {r["extinct"] for r in rows} == {"true", "false"}
    assert [p.name for p in tmp_path.iterdir()] == ["grid.csv"]


def test_lynx_fit_json(capsys):
    code, out, _ = run(capsys, "lynx-fit", "--model", "logistic", "--format", "json")
    doc = json.loads(out)
    assert doc["header"]["equilibrium"] == pytest.approx(3.107, abs=0.01)
    assert doc["data"]["r_m"] == pytest.approx(0.460, rel=0.01)


def test_lynx_fit_combined(capsys):
    code, out, _ = run(capsys, "lynx-fit", "--model", "combined", "--format", "json")
    doc = json.loads(out)
    assert doc["data"]["schema"] == "lynx-combined/1"
    assert doc["data"]["g"]["schema"] == "mars/1"


def test_outputs_are_reproducible(capsys):
    argv = ["hedge-sim", "--paths", "300", "--tau", "0.1", "--seed", "3"]
    a = run(capsys, *argv)[1]
    b = run(capsys, *argv)[1]
    assert a == b
    rows = table(a)
    xs = [float(r["xi"]) for r in rows]
    assert xs == sorted(xs, reverse=True)


def test_fit_spline_then_hedge(tmp_path, capsys):
    from semibasis.spline_pricer import simulate_training_book

    book = simulate_training_book(years=0.5, n_steps=100, seed=2)
    train = tmp_path / "train.csv"
    book.write_csv(train)
    model = tmp_path / "model.json"
    code, _, _ = run(capsys, "fit-spline", "--train", str(train), "--format", "json", "--out", str(model))
    assert code == 0
    doc = json.loads(model.read_text())
    assert doc["data"]["schema"] == "spline-pricer/1"
    assert doc["header"]["rmse_model"] < doc["header"]["rmse_european"]
    code, out, _ = run(capsys, "hedge-sim", "--mode", "american", "--model", str(model), "--paths", "20",
                       "--tau", "0.08", "--n-steps", "80", "--format", "json")
    rep = json.loads(out)["data"]
    assert rep["schema"] == "hedge-report/1" and rep["n_paths"] == 20


def test_hedge_american_needs_model(capsys):
    code, _, err = run(capsys, "hedge-sim", "--mode", "american")
    assert code == 1 and "--model" in err


def test_bad_training_file_names_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("S,K,tau,r,d,sigma,price\n100,100,0.1,0.05,0,0.2,x\n")
    code, _, err = run(capsys, "fit-spline", "--train", str(bad))
    assert code == 1 and "line 2" in err
