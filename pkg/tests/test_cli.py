import json
from pathlib import Path

import numpy as np
import pytest

from decgreen import config as config_mod
from decgreen.cli import main
from decgreen.config import ConfigError
from decgreen.io import (
    CheckpointError,
    checkpoint_dumps,
    checkpoint_loads,
    load_checkpoint,
    read_field_csv,
    save_checkpoint,
    write_field_csv,
)
from decgreen.models import Model, ModelConfig
from decgreen.pde import POISSON2D
from decgreen.training import evaluate, field_report

from conftest import poisson_oracle_net

TINY_DECGREEN = {"kind": "decgreen", "nets": {"F": [2, 10, 10, 4], "H": [2, 8, 4]}, "P": 6}
TINY_NL = {"kind": "decgreen_nl", "nets": {"F": [2, 10, 10, 4], "H": [2, 8, 4], "O": [6, 1]}, "P": 6}


def write_config(tmp_path, name="run.json", **kw):
    d = {
        "problem": "poisson2d",
        "model": TINY_DECGREEN,
        "params": [15.0],
        "steps": 10,
        "n_interior": 20,
        "n_boundary": 12,
        "eval_resolution": 11,
        "out_dir": str(tmp_path / "out"),
    }
    d.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(d, indent=2))
    return path


def run_train(tmp_path, out, *extra, **kw):
    cfg = write_config(tmp_path, **kw)
    return main(["train", "--config", str(cfg), "--out", str(out), "--threads", "1", "--no-plots", *extra])


@pytest.fixture
def oracle_ckpt(tmp_path):
    model = Model(ModelConfig("pinn", {"net": [2, 4, 4, 1]}, k=2), 0, nets={"net": poisson_oracle_net(15.0)})
    path = tmp_path / "oracle.ckpt.json"
    save_checkpoint(path, model, "poisson2d", [15.0])
    return path


@pytest.fixture
def multi_ckpt(tmp_path):
    out = tmp_path / "multi"
    assert run_train(tmp_path, out, model=TINY_NL, params=[10.0, 20.0, 30.0], share_collocation=True, steps=3) == 0
    return out / "model.ckpt.json"


# -- configuration ---------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    run = config_mod.load(write_config(tmp_path, lambda2=2.0, chunk_rows=64))
    again = config_mod.loads(run.dumps())
    assert again.to_dict() == run.to_dict()
    assert again.dumps() == run.dumps()
    # every training default is materialized
    assert set(config_mod.train_field_names()) - {"model"} <= set(run.to_dict())


def test_config_round_trip_with_benchmark(tmp_path):
    bench = {"models": [TINY_DECGREEN, TINY_NL], "repetitions": 2}
    run = config_mod.load(write_config(tmp_path, benchmark=bench))
    assert config_mod.loads(run.dumps()).to_dict() == run.to_dict()


@pytest.mark.parametrize(
    "override, field",
    [
        ({"steps": "ten"}, "steps"),
        ({"lr": True}, "lr"),
        ({"learning_rate": 0.1}, "learning_rate"),
        ({"model": {"kind": "decgreen", "nets": {"F": [2, 8, 5], "H": [2, 8, 4]}}}, "model"),
        ({"export_resolution": 1}, "export_resolution"),
    ],
)
def test_invalid_config_names_field(tmp_path, override, field):
    with pytest.raises(ConfigError, match=field):
        config_mod.load(write_config(tmp_path, **override))


def test_malformed_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "problem": "poisson2d",\n  "steps": 10,,\n}')
    assert main(["train", "--config", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_missing_field_exits_2(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"problem": "poisson2d"}))
    assert main(["train", "--config", str(path)]) == 2
    assert "model" in capsys.readouterr().err


# -- train ----------------------------------------------------------------------------------


def test_train_writes_checkpoint_and_metrics(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(write_config(tmp_path)), "--out", str(out)]) == 0
    assert (out / "model.ckpt.json").exists()
    records = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == 10
    assert [r["step"] for r in records] == list(range(10))
    for r in records:
        assert {"step", "residual", "boundary", "total", "elapsed", "evals"} <= set(r)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "decgreen" and summary["steps_run"] == 10
    assert summary["config"]["lambda1"] == 1.0
    assert (out / "loss_history.png").stat().st_size > 0


def test_seed_override(tmp_path):
    assert run_train(tmp_path, tmp_path / "a", "--seed", "5") == 0
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config"]["seed"] == 5


def test_single_thread_runs_are_bit_identical(tmp_path):
    out = tmp_path / "same"
    first = {}
    for _ in range(2):
        assert run_train(tmp_path, out) == 0
        current = {f: (out / f).read_bytes() for f in ("summary.json", "model.ckpt.json", "metrics.jsonl")}
        first = first or current
    assert first["summary.json"] == current["summary.json"]
    assert first["model.ckpt.json"] == current["model.ckpt.json"]


def test_divergence_exits_3(tmp_path):
    with np.errstate(all="ignore"):
        assert run_train(tmp_path, tmp_path / "d", lr=1e30, steps=5) == 3


# -- checkpoints ----------------------------------------------------------------------------------


def test_checkpoint_save_load_save_identical(tmp_path):
    assert run_train(tmp_path, tmp_path / "r", model=TINY_NL, params=[10.0, 20.0], steps=2) == 0
    text = (tmp_path / "r" / "model.ckpt.json").read_text()
    model, problem, params = checkpoint_loads(text)
    assert checkpoint_dumps(model, problem, params) == text
    assert params == [10.0, 20.0] and problem == "poisson2d"


@pytest.mark.parametrize("kind", ["pinn", "modnet", "modnet_nl", "decgreen", "decgreen_nl"])
def test_checkpoint_round_trip_preserves_predictions(tmp_path, kind):
    nets = {
        "pinn": {"net": [2, 6, 1]},
        "modnet": {"G": [4, 6, 1]},
        "modnet_nl": {"G": [4, 6, 3], "F2": [3, 1]},
        "decgreen": {"F": [2, 6, 3], "H": [2, 6, 3]},
        "decgreen_nl": {"F": [2, 6, 3], "H": [2, 6, 3], "O": [5, 1]},
    }[kind]
    model = Model(ModelConfig(kind, nets, P=5), seed=3, quadrature=np.random.default_rng(0).random((5, 2)))
    path = tmp_path / "m.json"
    save_checkpoint(path, model, "poisson2d", [15.0])
    loaded, _, _ = load_checkpoint(path)
    pts = np.random.default_rng(1).random((20, 2))
    np.testing.assert_array_equal(model.predict(POISSON2D, 15.0, pts), loaded.predict(POISSON2D, 15.0, pts))


def test_bad_checkpoint_is_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    assert main(["evaluate", "--checkpoint", str(path)]) == 2
    assert main(["export", "--checkpoint", str(tmp_path / "missing.json")]) == 2


# -- export / evaluate -------------------------------------------------------------------------------


def test_export_oracle(tmp_path, oracle_ckpt):
    out = tmp_path / "exp"
    assert main(["export", "--checkpoint", str(oracle_ckpt), "--out", str(out), "--a", "15"]) == 0
    csv_path = out / "field_poisson2d_a15.csv"
    assert csv_path.read_text().splitlines()[0] == "x,y,u_exact,u_pred,abs_error"
    cols = read_field_csv(csv_path)
    assert len(cols["x"]) == 10201
    assert np.max(cols["abs_error"]) <= 1e-12
    np.testing.assert_array_equal(cols["abs_error"], np.abs(cols["u_exact"] - cols["u_pred"]))
    # row-major: x is the slow axis
    assert cols["x"][0] == cols["x"][100] == 0.0 and cols["y"][100] == 1.0 and cols["x"][101] == 0.01
    assert (out / "field_poisson2d_a15.png").stat().st_size > 0


def test_export_resolution(tmp_path, oracle_ckpt):
    out = tmp_path / "exp"
    assert main(["export", "--checkpoint", str(oracle_ckpt), "--out", str(out), "--resolution", "7", "--no-plots"]) == 0
    assert len(read_field_csv(out / "field_poisson2d_a15.csv")["x"]) == 49
    assert main(["export", "--checkpoint", str(oracle_ckpt), "--resolution", "1"]) == 2


def test_csv_round_trip_full_precision(tmp_path):
    model = Model(ModelConfig("decgreen", {"F": [2, 8, 3], "H": [2, 8, 3]}, P=4), seed=2,
                  quadrature=np.random.default_rng(2).random((4, 2)))
    rep = field_report(model, POISSON2D, 15.0, 21)
    path = tmp_path / "f.csv"
    write_field_csv(path, rep.points, rep.u_exact, rep.u_pred)
    cols = read_field_csv(path)
    np.testing.assert_allclose(cols["u_pred"], rep.u_pred, rtol=0, atol=1e-15)
    np.testing.assert_allclose(cols["u_exact"], rep.u_exact, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(np.column_stack([cols["x"], cols["y"]]), rep.points)


def test_evaluate_command(tmp_path, oracle_ckpt, capsys):
    assert main(["evaluate", "--checkpoint", str(oracle_ckpt), "--resolution", "21"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["test_mse"]["15"] <= 1e-28


# -- interpolate ------------------------------------------------------------------------------------


def test_interpolate_refuses_single_source(tmp_path, oracle_ckpt, capsys):
    assert main(["interpolate", "--checkpoint", str(oracle_ckpt), "--a", "15"]) == 2
    assert "single source parameter" in capsys.readouterr().err


def test_interpolate_emits_csv_and_summary(tmp_path, multi_ckpt, capsys):
    out = tmp_path / "interp"
    assert main(["interpolate", "--checkpoint", str(multi_ckpt), "--a", "15", "--out", str(out), "--resolution", "11"]) == 0
    summary = json.loads((out / "interpolate_poisson2d_a15.summary.json").read_text())
    assert {"mse", "rel_l2"} <= set(summary) and summary["extrapolation"] is False
    assert summary["warning"] is None
    assert len(read_field_csv(out / "interpolate_poisson2d_a15.csv")["x"]) == 121


def test_interpolate_at_trained_value_matches_evaluate(tmp_path, multi_ckpt, capsys):
    out = tmp_path / "interp"
    main(["evaluate", "--checkpoint", str(multi_ckpt), "--a", "20", "--resolution", "11"])
    evaluated = json.loads(capsys.readouterr().out)["test_mse"]["20"]
    main(["interpolate", "--checkpoint", str(multi_ckpt), "--a", "20", "--out", str(out), "--resolution", "11", "--no-plots"])
    assert json.loads(capsys.readouterr().out)["mse"] == evaluated


def test_interpolate_extrapolation_warning(tmp_path, multi_ckpt):
    out = tmp_path / "interp"
    assert main(["interpolate", "--checkpoint", str(multi_ckpt), "--a", "500", "--out", str(out), "--no-plots", "--resolution", "5"]) == 0
    summary = json.loads((out / "interpolate_poisson2d_a500.summary.json").read_text())
    assert summary["extrapolation"] is True
    assert "outside" in summary["warning"]


# -- benchmark ---------------------------------------------------------------------------------------


def test_benchmark_needs_two_models(tmp_path, capsys):
    cfg = write_config(tmp_path, benchmark={"models": [TINY_DECGREEN]})
    assert main(["benchmark", "--config", str(cfg)]) == 2
    assert "benchmark.models" in capsys.readouterr().err


def test_benchmark_counter_ratio(tmp_path):
    decgreen = {"kind": "decgreen", "nets": {"F": [2, 8, 4], "H": [2, 8, 4]}, "P": 100}
    modnet = {"kind": "modnet", "nets": {"G": [4, 4, 1]}, "P": 10}
    out = tmp_path / "bench"
    cfg = write_config(
        tmp_path, n_interior=1000, n_boundary=400, benchmark={"models": [decgreen, modnet], "repetitions": 1, "warmup": 0}
    )
    assert main(["benchmark", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    report = json.loads((out / "benchmark.json").read_text())
    rows = report["models"]
    assert [r["kernel_evals_per_step"] for r in rows] == [100, 14000]
    assert all(r["counter_law_ok"] for r in rows)
    assert report["ratios"][0]["counter_ratio"] == 140.0
    for r in rows:
        assert len(r["step_seconds"]) == 1 and r["median_step_seconds"] == r["step_seconds"][0]
        assert np.isfinite(r["median_step_seconds"]) and r["median_step_seconds"] > 0
    assert (out / "benchmark.csv").read_text().count("\n") == 3
    assert (out / "benchmark.png").stat().st_size > 0


@pytest.mark.parametrize("name", ["smoke", "poisson_decgreen", "poisson_operator_nl", "rd_decgreen", "benchmark"])
def test_shipped_configs_parse(name):
    run = config_mod.load(Path(__file__).parent.parent / "configs" / f"{name}.json")
    assert config_mod.loads(run.dumps()).to_dict() == run.to_dict()
