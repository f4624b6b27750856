import csv
import json
import math

import numpy as np
import pytest

from magswim.cli import main
from magswim.config import ConfigError, load_config, override, parse_config, parse_grid


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


def read_csv(path):
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    rows = list(csv.DictReader([l for l in lines if not l.startswith("#")]))
    return header, rows


# ---------------------------------------------------------------- config

def test_parse_config_sections_and_grids():
    cfg = parse_config("""
        # comment
        params.a = logspace(-2, 0, 3)
        params.psi = 0.1, 0.2 pi
        integrator.rel_tol = 1e-9   # trailing
        run.seed = 7
        run.q0 = 0 0 0 1
    """)
    np.testing.assert_allclose(cfg.a_grid, [0.01, 0.1, 1.0])
    assert cfg.psi_grid == [0.1, 0.2, math.pi]
    assert cfg.integrator(10.0).max_step == pytest.approx(0.01)
    assert cfg.integrator(10.0).rel_tol == 1e-9
    assert cfg.seed == 7


def test_parse_grid_linspace():
    assert parse_grid("linspace(0, 1, 5)") == [0.0, 0.25, 0.5, 0.75, 1.0]


@pytest.mark.parametrize("text", [
    "params.a = -1",
    "params.psi = 4",
    "bogus.key = 1",
    "params.a",
    "run.horizon = 10\nrun.transient = 20",
    "run.q0 = 1 0 0",
    "run.n_random_ic = x",
    "integrator.rel_tol = 1",
    "params.a = linspace(1, 2, 0)",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_digest_is_canonical(tmp_path):
    a = parse_config("params.a = 1\nparams.psi = 0.2")
    b = parse_config("params.psi = 0.20\n\nparams.a = 1.0  # same")
    assert a.digest() == b.digest()
    assert override(a, ["run.seed=3"]).digest() != a.digest()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        override(a, ["noequals"])


def test_config_models(tmp_path):
    assert parse_config("swimmer.model = isotropic").model().p[1, 0] == 1.0
    with pytest.raises(ConfigError):
        parse_config("swimmer.model = file").model()
    drag = tmp_path / "d.txt"
    drag.write_text("\n".join(" ".join("1" if i == j else "0" for j in range(6)) for i in range(6)))
    m = parse_config(f"swimmer.drag = {drag}\nswimmer.moment = 0 0 2").model()
    np.testing.assert_array_equal(m.m, [0, 0, 1.0])


# ---------------------------------------------------------------- commands

def test_predict_lowa_isotropic(capsys, tmp_path):
    code, out, _ = run(capsys, "predict", "--regime", "lowa", "--set", "swimmer.model=isotropic",
                       "--set", "params.a=0.01", "--set", f"params.psi={math.pi / 3!r}", "--out", str(tmp_path))
    assert code == 0
    doc = json.loads((tmp_path / "prediction.json").read_text())
    assert doc["period_t"] == pytest.approx(1256.637, abs=1e-3)
    assert len(doc["config_hash"]) == 16 and len(doc["model_hash"]) == 16


def test_predict_smallpsi_isotropic(capsys, tmp_path):
    code, _, _ = run(capsys, "predict", "--regime", "smallpsi", "--order", "2", "--set", "swimmer.model=isotropic",
                     "--set", "params.a=2", "--set", "params.psi=0.1", "--out", str(tmp_path))
    assert code == 0
    doc = json.loads((tmp_path / "prediction.json").read_text())
    eps = math.sin(0.1)
    assert doc["radius_r"] == pytest.approx(eps * 4 / 25, abs=1e-12)
    header, rows = read_csv(tmp_path / "predicted_curve.csv")
    assert any(h.startswith("# config_hash") for h in header) and any(h.startswith("# model_hash") for h in header)
    assert len(rows) == 2001


def test_predict_higha(capsys, tmp_path, helix, helix_spec):
    from magswim.asymptotics import higha_predict
    from magswim.dynamics import Parameters
    code, _, _ = run(capsys, "predict", "--regime", "higha", "--set", "params.a=100", "--set", "params.psi=0.4",
                     "--out", str(tmp_path))
    assert code == 0
    doc = json.loads((tmp_path / "prediction.json").read_text())
    assert doc["tau_rate"] == higha_predict(helix_spec, Parameters(100.0, 0.4)).tau_rate


def test_predict_regime_error(capsys, tmp_path):
    code, _, err = run(capsys, "predict", "--regime", "higha", "--set", "params.a=100",
                       "--set", f"params.psi={math.pi / 2!r}", "--out", str(tmp_path))
    assert code != 0 and err["error"] == "RegimeError"


def test_config_error_exit_code(capsys, tmp_path):
    code, out, err = run(capsys, "simulate", "--set", "run.horizon=5", "--set", "run.transient=10",
                         "--out", str(tmp_path))
    assert code == 2 and out is None and err["error"] == "ConfigError"
    code, _, err = run(capsys, "simulate", "--config", str(tmp_path / "nope.cfg"))
    assert code == 2


def test_simulate_periodic_and_steady(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("params.a = 0.01\nparams.psi = 0.2\nrun.transient = 6000\nrun.horizon = 8000\n")
    code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--out", str(tmp_path / "p"))
    assert code == 0
    doc = json.loads((tmp_path / "p" / "classification.json").read_text())
    assert doc["classification"] == "periodic" and doc["quaternion_symmetric"]
    assert doc["norm_deviation"] < 1e-9
    orbit = json.loads((tmp_path / "p" / "orbit.json").read_text())
    assert orbit["period"] == pytest.approx(doc["period"])
    for name in ("trajectory.csv", "curve.csv"):
        header, rows = read_csv(tmp_path / "p" / name)
        assert header[1].startswith("# config_hash") and header[2].startswith("# model_hash")
    meta = json.loads((tmp_path / "p" / "curve.json").read_text())
    assert meta["config_hash"] == header[1].split()[-1]

    code, out, _ = run(capsys, "simulate", "--set", "params.a=0.01", "--set", f"params.psi={math.pi / 2!r}",
                       "--out", str(tmp_path / "s"))
    assert code == 0
    assert json.loads((tmp_path / "s" / "classification.json").read_text())["classification"] == "steady"
    assert not (tmp_path / "s" / "orbit.json").exists()


def test_simulate_needs_scalar_params(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--set", "params.a=1,2", "--out", str(tmp_path))
    assert code == 2 and "sweep" in err["message"]


SWEEP = ["--set", "params.a=0.01,1", "--set", "params.psi=0.2,2.9", "--set", "run.n_random_ic=2",
         "--set", "run.transient=7000", "--set", "run.horizon=9000", "--seed", "11"]


def test_sweep_white_region_and_determinism(capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", *SWEEP, "--workers", "4", "--out", str(tmp_path / "x"))
    assert code == 0 and out["cells"] == 4
    header, rows = read_csv(tmp_path / "x" / "catalog.csv")
    assert len(rows) == 4
    for row in rows:
        assert int(row["n_stable_periodic"]) >= 1
        assert int(row["n_failed"]) == 0
    code, _, _ = run(capsys, "sweep", *SWEEP, "--workers", "1", "--out", str(tmp_path / "y"))
    assert (tmp_path / "x" / "catalog.csv").read_bytes() == (tmp_path / "y" / "catalog.csv").read_bytes()


def test_sweep_empty(capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", "--set", "run.n_random_ic=0", "--out", str(tmp_path))
    assert code == 0 and out["cells"] == 0
    header, rows = read_csv(tmp_path / "catalog.csv")
    assert rows == [] and any("config_hash" in h for h in header)


@pytest.fixture(scope="module")
def orbit_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("seed")
    assert main(["simulate", "--set", "params.a=1", "--set", "params.psi=0.2", "--set", "run.transient=300",
                 "--set", "run.horizon=400", "--out", str(out)]) == 0
    return out / "orbit.json"


def test_continue_deterministic(capsys, tmp_path, orbit_file):
    args = ["continue", "--orbit", str(orbit_file), "--free-param", "psi", "--range", "0.15", "0.25"]
    code, out, _ = run(capsys, *args, "--out", str(tmp_path / "a"))
    assert code == 0 and out["diagnostics"] == ["reached psi bound 0.15", "reached psi bound 0.25"]
    header, rows = read_csv(tmp_path / "a" / "branch.csv")
    psi = [float(r["psi"]) for r in rows]
    assert psi[0] == 0.15 and psi[-1] == 0.25 and np.all(np.diff(psi) > 0)
    events = json.loads((tmp_path / "a" / "events.json").read_text())
    assert [e["kind"] for e in events["events"]] == ["end", "end"]
    run(capsys, *args, "--out", str(tmp_path / "b"))
    assert (tmp_path / "a" / "branch.csv").read_bytes() == (tmp_path / "b" / "branch.csv").read_bytes()


def test_continue_collapsed_and_failure(capsys, tmp_path, orbit_file):
    code, out, _ = run(capsys, "continue", "--orbit", str(orbit_file), "--range", "0.2", "0.2",
                       "--out", str(tmp_path / "c"))
    assert code == 0 and out["points"] == 1
    code, out, _ = run(capsys, "continue", "--orbit", str(orbit_file), "--set", "continue.direction=1",
                       "--set", "continue.ds=1", "--set", "continue.ds_min=0.9", "--out", str(tmp_path / "d"))
    assert code == 0
    events = json.loads((tmp_path / "d" / "events.json").read_text())["events"]
    kinds = [e["kind"] for e in events]
    assert "corrector_failure" in kinds or "bound" in events[-1]["detail"]


def test_compare_smallpsi_orders(capsys, tmp_path):
    code, _, _ = run(capsys, "compare", "--regime", "smallpsi", "--set", "params.a=1", "--set", "params.psi=0.1",
                     "--out", str(tmp_path))
    assert code == 0
    _, rows = read_csv(tmp_path / "compare.csv")
    assert float(rows[0]["distance_order2"]) < float(rows[0]["distance_order1"])


def test_compare_lowa_incomparable(capsys, tmp_path):
    code, _, _ = run(capsys, "compare", "--regime", "lowa", "--set", "params.a=0.01", "--set", "params.psi=1.4",
                     "--out", str(tmp_path))
    assert code == 0
    _, rows = read_csv(tmp_path / "compare.csv")
    assert rows[0]["rel_error"] == "incomparable" and rows[0]["reference_bound"] == "7.6922000000000007e-05"
