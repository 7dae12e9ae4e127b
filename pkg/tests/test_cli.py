import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from cavnet.cli import artifact_csv, config_from_csv, main
from cavnet.config import SCHEMA, ConfigError, default_text, load_config, loads
from cavnet.figures import FIGURES, make_figure


def write_config(tmp_path, cfg, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(cfg.dumps())
    return str(p)


def read_rows(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(io.StringIO("\n".join(body))))
    return rows[0], rows[1:]


# ------------------------------------------------------------------ config

def test_default_config_complete():
    cfg = load_config()
    for sec, keys in SCHEMA.items():
        assert set(cfg[sec]) == set(keys)
    assert cfg.get("physics", "g_over_2pi_hz") == 520e3
    p = cfg.module_params()
    assert p.cooperativity == pytest.approx(2.488, abs=0.01)


def test_config_round_trip():
    cfg = load_config()
    again = loads(cfg.dumps())
    assert again.values == cfg.values
    assert again.dumps() == cfg.dumps()


def test_config_hash_changes():
    cfg = load_config()
    seen = {cfg.hash}
    for sec, keys in SCHEMA.items():
        for k, typ in keys.items():
            v = cfg.get(sec, k)
            seen.add(cfg.replace(sec, k, v + 1 if typ is int else v * 1.5 + 1e-30).hash)
    assert len(seen) == 1 + sum(len(k) for k in SCHEMA.values())


def test_config_rejects_unknown_key():
    text = default_text().replace("[physics]", "[physics]\ng_over_2pi_hzz = 1")
    with pytest.raises(ConfigError, match="g_over_2pi_hzz"):
        loads(text)
    with pytest.raises(ConfigError):
        load_config().replace("physics", "nope", 1.0)


def test_config_rejects_missing_key_and_section():
    lines = [ln for ln in default_text().splitlines() if not ln.startswith("tau_3p0_s")]
    with pytest.raises(ConfigError, match="tau_3p0_s"):
        loads("\n".join(lines))
    with pytest.raises(ConfigError, match="numerics"):
        loads(default_text().split("[numerics]")[0])
    with pytest.raises(ConfigError, match="extra"):
        loads(default_text() + "\n[extra]\na = 1\n")


def test_config_rejects_bad_type():
    text = default_text().replace("rounds = 5", "rounds = five")
    with pytest.raises(ConfigError, match="rounds"):
        loads(text)


def test_config_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.ini")


# ------------------------------------------------------------------ CSV artifacts

def test_artifact_embeds_config():
    cfg = load_config().replace("numerics", "kappa_points", 6)
    art = make_figure("2c", cfg)
    text = artifact_csv(art, cfg)
    back = config_from_csv(text)
    assert back.hash == cfg.hash
    assert f"# config_hash: {cfg.hash}" in text
    header, rows = read_rows(text)
    assert header == list(art.columns)
    assert len(rows) == len(art.rows)
    # lossless float formatting
    assert float(rows[0][1]) == art.rows[0][1]


def test_figure_2c_shape():
    cfg = load_config().replace("numerics", "kappa_points", 12)
    art = make_figure("2c", cfg)
    k = np.array(art.column("kappa_over_2pi_hz"))
    eta = np.array(art.column("eta"))
    assert eta.max() == pytest.approx(0.50, abs=0.02)
    assert 0.5e6 < k[np.argmax(eta)] < 2e6


def test_figure_2d_rates():
    art = make_figure("2d", load_config())
    m = art.column("rounds")
    r = dict(zip(m, art.column("rate_per_s")))
    assert r[5] == pytest.approx(1.0e5, rel=0.03)
    assert list(m) == list(range(1, 21))


def test_unknown_figure():
    from cavnet.figures import FigureError

    with pytest.raises(FigureError):
        make_figure("9z", load_config())
    assert main(["run", "9z"]) == 2


# ------------------------------------------------------------------ commands

def test_run_byte_identical(tmp_path):
    cfg = load_config().replace("numerics", "kappa_points", 8)
    path = write_config(tmp_path, cfg)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "2c", "--config", path, "--out", str(a)]) == 0
    assert main(["run", "2c", "--config", path, "--out", str(b), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_run_seed_override(tmp_path):
    out = tmp_path / "x.csv"
    assert main(["run", "2d", "--seed", "17", "--out", str(out)]) == 0
    assert config_from_csv(out.read_text()).get("numerics", "seed") == 17


def test_run_rerun_from_metadata(tmp_path):
    out = tmp_path / "x.csv"
    assert main(["run", "2d", "--out", str(out)]) == 0
    cfg = config_from_csv(out.read_text())
    path = write_config(tmp_path, cfg, "back.ini")
    out2 = tmp_path / "y.csv"
    assert main(["run", "2d", "--config", path, "--out", str(out2)]) == 0
    assert out.read_bytes() == out2.read_bytes()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(default_text().replace("tau_3p0_s", "tau_3p0_sec"))
    assert main(["verify", "--config", str(p)]) == 2
    assert "tau_3p0_s" in capsys.readouterr().err
    assert main(["report", "--config", str(tmp_path / "missing.ini")]) == 2


def test_bad_arguments_exit_code():
    assert main(["run"]) == 2
    assert main(["frobnicate"]) == 2


def test_verify_detects_broken_kappa(tmp_path, capsys):
    cfg = load_config()
    cfg = cfg.replace("physics", "kappa_over_2pi_hz", 2 * cfg.get("physics", "kappa_over_2pi_hz"))
    cfg = cfg.replace("numerics", "kappa_points", 8)
    path = write_config(tmp_path, cfg)
    assert main(["verify", "--criteria", "1", "--config", path]) == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_verify_passing_subset(capsys):
    assert main(["verify", "--criteria", "2,5"]) == 0
    out = capsys.readouterr().out
    assert "2/2 criteria passed" in out


def test_report_without_dark_counts(tmp_path, capsys):
    cfg = load_config().replace("physics", "dark_rate_per_s", 0.0)
    path = write_config(tmp_path, cfg)
    assert main(["report", "--config", path]) == 0
    out = capsys.readouterr().out
    row = [ln for ln in out.splitlines() if ln.startswith("eps_dc")][0]
    value = [tok for tok in row.split() if "e+" in tok or "e-" in tok][0]
    assert float(value) == 0.0
    fid = float(out.split("fidelity")[1].split()[0])
    assert fid == pytest.approx(0.999, abs=0.0006)


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "cavnet.cli", "run", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for fig in FIGURES:
        assert fig in r.stdout
