import json
import subprocess
import sys

import numpy as np
import pytest

from clup.cli import main
from clup.model import generate_instance, load_instance, sigma_from_snr_db


def test_simulate_writes_outputs(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["simulate", "--n", "40", "--reps", "3", "--iters", "2", "--r-sc", "1.5", "--seed", "1",
                 "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "p_err" in text and "wrote" in text
    agg = (out / "aggregate.csv").read_text().splitlines()
    assert len(agg) == 3
    meta = json.loads((out / "experiment.json").read_text())
    assert meta["spec"]["config"]["seed"] == 1


def test_simulate_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nn = 30\nreps = 2\nmax_iters = 1\nr_sc = 2.0\nseed = 4\n")
    assert main(["simulate", "--config", str(cfg)]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.strip().startswith("30")]
    assert len(lines) == 1
    # flags override the file
    assert main(["simulate", "--config", str(cfg), "--reps", "3"]) == 0
    assert " 3 " in capsys.readouterr().out


def test_bad_config_file_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_dump_instance(tmp_path, capsys):
    path = tmp_path / "inst" / "n{n}.csv"
    code = main(["simulate", "--n", "20", "--reps", "1", "--iters", "1", "--r-sc", "2.0", "--seed", "9",
                 "--dump-instance", str(path)])
    assert code == 0
    inst = load_instance(tmp_path / "inst" / "n20.csv")
    ref = generate_instance(20, 0.8, sigma_from_snr_db(13.0), (9, 0))
    np.testing.assert_allclose(inst.A, ref.A, rtol=1e-15)
    np.testing.assert_array_equal(inst.x_sol, ref.x_sol)


def test_failed_replications_exit_1(capsys):
    code = main(["simulate", "--n", "30", "--reps", "2", "--iters", "1", "--r-plt", "0.001", "--r-sc", "1.0"])
    assert code == 1
    assert "2/2 replications failed" in capsys.readouterr().err


def test_theory_first(tmp_path, capsys):
    assert main(["theory", "first", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "theory_first.json").read_text())
    assert data["p_err"] == pytest.approx(0.0456, abs=1e-3)
    assert main(["theory", "first", "--snr-db", "10", "--r", "0.2252"]) == 0


def test_theory_second(capsys):
    assert main(["theory", "second", "--nodes", "48"]) == 0
    assert "p_err2" in capsys.readouterr().out


def test_theory_domain_error_exits_2(capsys):
    assert main(["theory", "first", "--rho", "1.5"]) == 2
    assert "error:" in capsys.readouterr().err


def test_random_dual(tmp_path, capsys):
    assert main(["random-dual", "--k-max", "3", "--n-dual", "20000", "--seed", "2", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "random_dual.csv").read_text().splitlines()
    assert rows[0] == "k,p_err,neg_s_hat,d2,d1" and len(rows) == 4
    assert "P =" in capsys.readouterr().out


def test_compare(tmp_path, capsys):
    code = main(["compare", "--n", "100", "--reps", "6", "--iters", "1", "--seed", "3", "--out", str(tmp_path)])
    assert code == 0
    assert "entries beyond 3 SE" in capsys.readouterr().out
    assert (tmp_path / "comparison.csv").exists()


def test_repro_list_and_unknown(capsys):
    assert main(["repro", "--list"]) == 0
    listing = capsys.readouterr().out
    assert "table1" in listing and "table15" in listing
    assert main(["repro", "table99"]) == 2
    assert "unknown table id" in capsys.readouterr().err


def test_repro_theory_table(tmp_path, capsys):
    assert main(["repro", "table2", "--out", str(tmp_path)]) == 0
    csv_text = (tmp_path / "repro_table2.csv").read_text()
    assert csv_text.startswith("row,stat,ours,se,published")


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["theory", "third"])
    assert exc.value.code == 2


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "clup.cli", "repro", "--list"], capture_output=True, text=True)
    assert out.returncode == 0 and "table5" in out.stdout
