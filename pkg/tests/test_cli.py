import json
import subprocess
import sys

import pytest

from diffconj.cli import GridCache, main
from diffconj.diffeo_model import Diffeo, Interval

MOBIUS_PAIR = {
    "f": {"expr": "x/(1+x)", "interval": [0, "inf"], "fixed_points": [0]},
    "g": {"expr": "x/(1+2*x)", "interval": [0, "inf"], "fixed_points": [0]},
}
COMPACT_PAIR = {
    "f": {"expr": "x/(2-x)", "interval": [0, 1]},
    "g": {"expr": "x/(2-x)", "interval": [0, 1], "conjugate_by": "x*(1+x)/2"},
}


def write_config(tmp_path, data, name="job.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def report(out):
    return json.loads((out / "report.json").read_text())


def test_series_task(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["series", "X + X^4 + 2X^7", "X + 5X^4 + 50X^7", "--out", str(out)]) == 0
    assert "conjugate-as-jets" in capsys.readouterr().out
    rep = report(out)
    assert rep["verdict"] == "conjugate-as-jets"
    assert rep["normal_form_P"]["p"] == 3 and rep["normal_form_P"]["alpha"] == "2"
    assert main(["series", "3X + X^2", "2X", "--out", str(out)]) == 0
    assert report(out)["verdict"] == "not-conjugate-as-jets"


def test_classify_task(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {**MOBIUS_PAIR, "base_pairs": [[1, 0.5]]})
    assert main(["classify", cfg, "--out", str(out)]) == 0
    assert "verdict: Conjugate" in capsys.readouterr().out
    rep = report(out)
    assert rep["verdict"] == "Conjugate"
    assert rep["gaps"][0]["lambda"] == pytest.approx(0.5, abs=1e-8)
    assert (out / "grids" / "gap0_conjugacy.csv").exists()
    assert (out / "summary.txt").read_text().startswith("verdict: Conjugate")


def test_malformed_expression(tmp_path, capsys):
    cfg = write_config(tmp_path, {"f": {"expr": "x/(1+*x)", "interval": [0, "inf"], "fixed_points": [0]},
                                  "g": {"expr": "x", "interval": [0, 1]}})
    assert main(["classify", cfg, "--out", str(tmp_path / "out")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("parse error") and "byte offset 5" in err


def test_bad_inputs_exit_with_one(tmp_path, capsys):
    missing = write_config(tmp_path, {"f": MOBIUS_PAIR["f"]})
    assert main(["classify", missing, "--out", str(tmp_path / "out")]) == 1
    assert main(["series", "X+", "X", "--out", str(tmp_path / "out")]) == 1
    assert "error" in capsys.readouterr().err


def test_reports_are_deterministic(tmp_path):
    cfg = write_config(tmp_path, {**MOBIUS_PAIR, "x": 1, "xi": 0.5, "random_pairs": 5})
    texts = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["product", cfg, "--out", str(out), "--seed", "7"]) == 0
        texts.append((out / "report.json").read_text())
    assert texts[0] == texts[1]
    data = json.loads(texts[0])
    assert data["seed"] == 7 and list(data) == sorted(data)


def test_grid_cache_is_reused(tmp_path):
    f = Diffeo("x/(2-x)", Interval(0.0, 1.0))
    gap = f.gaps()[0]
    cache = GridCache(tmp_path / "cache")
    first = cache.shape_grid(f, gap, 0.5, 21, 1e-12)
    again = GridCache(tmp_path / "cache").shape_grid(f, gap, 0.5, 21, 1e-12)
    assert (again.values == first.values).all()
    fresh = GridCache(tmp_path / "cache")
    fresh.shape_grid(f, gap, 0.5, 21, 1e-12)
    assert fresh.hits == 1
    assert len(list((tmp_path / "cache").glob("*.npz"))) == 1


def test_product_on_compact_gap_writes_shape(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {**COMPACT_PAIR, "x": 0.5, "xi": 0.5})
    assert main(["product", cfg, "--out", str(out)]) == 0
    assert (out / "grids" / "shape_f.csv").exists()
    assert any((out / "cache").glob("*.npz"))


def test_root_task(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"f": COMPACT_PAIR["f"], "a": 0.5})
    assert main(["root", cfg, "-k", "2", "--out", str(out)]) == 0
    assert report(out)["alpha"] == pytest.approx(2 ** 0.5 - 1, rel=1e-10)


def test_plots_flag(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"f": COMPACT_PAIR["f"]})
    assert main(["flow", cfg, "--out", str(out), "--plots"]) == 0
    assert (out / "grids" / "shape_f.png").exists()
    assert not list((tmp_path / "quiet").glob("**/*.png"))


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "diffconj.cli", "series", "X + X^2 + X^3", "X + 2X^3",
                           "--out", str(tmp_path / "out")], capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "not-conjugate-as-jets" in proc.stdout
