import shutil

import numpy as np
import pytest

from spinflywheel import cli
from spinflywheel import config as cf
from spinflywheel.engine import read_trajectory_csv
from spinflywheel.thermo import read_report_csv

SMALL = """
[engine]
dim = 40
steps_per_period = 200
snapshots_per_period = 10
[tomography]
n_rings = 8
base_angles = 6
shots = 1000
seed = 3
[fit]
n_starts = 2
dim = 40
[sweep]
t_he_us = 1.5, 3
[output]
directory = {out}
"""

CSV_FILES = ["trajectory.csv", "tomo/q_raw_001.50us.csv", "tomo/q_003.00us.csv", "fits.jsonl", "thermo.csv", "thermo_simulation.csv"]


def _write(tmp_path, name="run.ini", out="out", extra=""):
    path = tmp_path / name
    path.write_text(SMALL.format(out=tmp_path / out) + extra)
    return path


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    ini = _write(tmp)
    assert cli.main(["pipeline", "--config", str(ini)]) == cli.EXIT_OK
    return tmp, ini


def test_pipeline_emits_everything(pipeline_run):
    tmp, ini = pipeline_run
    out = tmp / "out"
    for name in CSV_FILES + ["snapshots.bin", "figures/q_001.50us.png", "figures/q_003.00us.png", "figures/energetics.png"]:
        assert (out / name).is_file(), name
    rows = read_report_csv(out / "thermo.csv")
    assert [r.t_HE for r in rows] == pytest.approx([1.5e-6, 3e-6])
    assert all(r.source == "fit" for r in rows)
    assert all(r.source == "simulation" for r in read_report_csv(out / "thermo_simulation.csv"))
    assert not list(out.rglob("*.tmp"))


def test_every_file_is_stamped(pipeline_run):
    tmp, ini = pipeline_run
    h = cf.load(ini).config_hash
    out = tmp / "out"
    for name in CSV_FILES:
        text = (out / name).read_text()
        assert h in text, name
        assert "0.1.0" in text, name
    assert h.encode() in (out / "snapshots.bin").read_bytes()
    assert h.encode() in (out / "figures/energetics.png").read_bytes()


def test_pipeline_equals_sequential_stages(pipeline_run, tmp_path):
    tmp, _ = pipeline_run
    ini = _write(tmp_path)
    for stage in ("simulate", "tomo", "fit", "report"):
        assert cli.main([stage, "--config", str(ini)]) == 0
    for name in CSV_FILES:
        assert (tmp_path / "out" / name).read_bytes() == (tmp / "out" / name).read_bytes(), name
    assert (tmp_path / "out/snapshots.bin").read_bytes() == (tmp / "out/snapshots.bin").read_bytes()


def test_parallel_jobs_match_serial(pipeline_run, tmp_path):
    tmp, _ = pipeline_run
    ini = _write(tmp_path)
    shutil.copytree(tmp / "out", tmp_path / "out", ignore=shutil.ignore_patterns("tomo", "fits.jsonl", "thermo*.csv", "figures"))
    assert cli.main(["tomo", "--config", str(ini), "--jobs", "2"]) == 0
    assert cli.main(["fit", "--config", str(ini), "--jobs", "2"]) == 0
    for name in CSV_FILES[1:4]:
        assert (tmp_path / "out" / name).read_bytes() == (tmp / "out" / name).read_bytes(), name


def test_report_deterministic_on_identical_fit_logs(pipeline_run, tmp_path):
    tmp, _ = pipeline_run
    outs = []
    for k in (1, 2):
        d = tmp_path / f"r{k}"
        shutil.copytree(tmp / "out", d)
        (d / "thermo.csv").unlink()
        ini = _write(tmp_path, f"r{k}.ini", f"r{k}", "csv = true\nheatmaps = false\ncurves = false\n")
        assert cli.main(["report", "--config", str(ini)]) == 0
        outs.append((d / "thermo.csv").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] == (tmp / "out" / "thermo.csv").read_bytes()


def test_decoupled_simulation(tmp_path):
    ini = _write(tmp_path, extra="")
    text = ini.read_text().replace("[engine]\n", "[engine]\ndelta_s_mhz = 0\n")
    ini.write_text(text)
    assert cli.main(["simulate", "--config", str(ini)]) == 0
    _, cols = read_trajectory_csv(tmp_path / "out" / "trajectory.csv")
    assert np.all(np.abs(cols["n"]) < 1e-6)
    assert np.all(np.abs(cols["trace"] - 1) < 1e-10)


def test_hash_mismatch_refused_unless_forced(pipeline_run, tmp_path, capsys):
    tmp, _ = pipeline_run
    shutil.copytree(tmp / "out", tmp_path / "out")
    other = _write(tmp_path, extra="")
    other.write_text(other.read_text().replace("seed = 3", "seed = 4"))
    assert cli.main(["tomo", "--config", str(other)]) == cli.EXIT_CONFIG
    assert "config hash" in capsys.readouterr().err
    assert cli.main(["tomo", "--config", str(other), "--force"]) == cli.EXIT_OK


def test_seed_flag_changes_hash_and_is_refused(pipeline_run, tmp_path):
    tmp, _ = pipeline_run
    shutil.copytree(tmp / "out", tmp_path / "out")
    ini = _write(tmp_path)
    assert cli.main(["tomo", "--config", str(ini), "--seed", "9"]) == cli.EXIT_CONFIG


def test_output_directory_precedence(tmp_path, monkeypatch):
    ini = _write(tmp_path, out="from_config")
    text = ini.read_text().replace("t_he_us = 1.5, 3", "t_he_us = 0.7")
    ini.write_text(text)
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "from_env"))
    assert cli.main(["simulate", "--config", str(ini)]) == 0
    assert (tmp_path / "from_env" / "trajectory.csv").is_file()
    assert not (tmp_path / "from_config").exists()
    assert cli.main(["simulate", "--config", str(ini), "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "trajectory.csv").is_file()


def test_config_error_exit_code(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[engine]\ndimension = 40\n")
    assert cli.main(["simulate", "--config", str(ini)]) == cli.EXIT_CONFIG
    assert "engine.dimension" in capsys.readouterr().err


def test_truncation_exit_code(tmp_path, capsys):
    ini = _write(tmp_path)
    ini.write_text(ini.read_text().replace("dim = 40\nsteps", "dim = 6\nsteps").replace("t_he_us = 1.5, 3", "t_he_us = 6"))
    assert cli.main(["simulate", "--config", str(ini)]) == cli.EXIT_NUMERIC
    assert "dim" in capsys.readouterr().err


def test_io_error_exit_codes(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    ini = _write(tmp_path)
    assert cli.main(["simulate", "--config", str(ini), "--out", str(blocker / "sub")]) == cli.EXIT_IO
    assert cli.main(["report", "--config", str(ini)]) == cli.EXIT_IO
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_IO


def test_parser_surface():
    p = cli.build_parser()
    for name in ("simulate", "tomo", "fit", "report", "pipeline"):
        a = p.parse_args([name, "--config", "x.ini", "--jobs", "3", "--force", "--seed", "5", "--out", "d"])
        assert (a.command, a.jobs, a.force, a.seed) == (name, 3, True, 5)
    with pytest.raises(SystemExit):
        p.parse_args(["simulate"])
