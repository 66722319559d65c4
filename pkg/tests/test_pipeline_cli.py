import csv
import json
import warnings

import numpy as np
import pytest

from dorl_lab import pipeline as pl
from dorl_lab.cli import main
from dorl_lab.config import config_from_dict

TINY = {
    "seed": 3,
    "world": {"n_users": 6, "n_items": 24, "n_categories": 4, "latent_dim": 2,
              "noise_scale": 0.1},
    "behavior": {"temperature": 0.5, "popularity_center": 5, "popularity_width": 5,
                 "popularity_strength": 2.0, "events_per_user": 30},
    "user_model": {"d": 2, "K": 2, "epochs": 2, "batch_size": 32},
    "penalty": {"lambda1": 0.1, "lambda2": 1.0},
    "agent": {"epochs": 2, "episodes_per_epoch": 16, "batch_episodes": 8, "rollout_len": 6,
              "state_window": 3, "emb_dim": 8},
    "eval": {"n_episodes": 10, "sweep": {"lambda1": [0.0, 0.1], "lambda2": [0.0, 1.0]},
             "marginalize": "lambda1"},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**TINY, "out_dir": str(tmp_path / "run")}))
    return p


def _run(cfg_file, *args):
    return main([args[0], "--config", str(cfg_file), *args[1:]])


def _chain(cfg_file, baseline="dorl"):
    for cmd in ("gen-world", "gen-logs", "build-entropy-index"):
        assert _run(cfg_file, cmd) == 0
    assert _run(cfg_file, "train-user-model", "--baseline", baseline) == 0
    assert _run(cfg_file, "train-policy", "--baseline", baseline) == 0


# --------------------------------------------------------------------------- baselines


def test_penalty_for_each_baseline():
    cfg = config_from_dict(TINY)
    assert (pl.penalty_for("dorl", cfg).lambda1, pl.penalty_for("dorl", cfg).lambda2) == (0.1, 1.0)
    assert pl.penalty_for("mopo", cfg).lambda2 == 0.0 and pl.penalty_for("mopo", cfg).lambda1 == 0.1
    for b in ("mbpo", "ips"):
        assert (pl.penalty_for(b, cfg).lambda1, pl.penalty_for(b, cfg).lambda2) == (0.0, 0.0)
    with pytest.raises(ValueError):
        pl.penalty_for("ucb", cfg)


def test_mbpo_equals_dorl_with_zero_weights():
    cfg = config_from_dict(TINY)
    zero = config_from_dict({**TINY, "penalty": {"lambda1": 0.0, "lambda2": 0.0}})
    world = pl.make_world(cfg)
    logs = pl.make_logs(cfg, world)
    ens = pl.make_user_model(cfg, logs)
    index = pl.make_index(cfg, logs)
    a = pl.make_policy(cfg, world, ens, index, pl.penalty_for("mbpo", cfg))
    b = pl.make_policy(zero, world, ens, index, pl.penalty_for("dorl", zero))
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])


# --------------------------------------------------------------------------- CLI


def test_full_chain_and_artifacts(cfg_file, tmp_path, capsys):
    _chain(cfg_file)
    assert _run(cfg_file, "evaluate") == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["baseline"] == "dorl" and out["length_mean"] >= 1
    run = tmp_path / "run"
    h = config_from_dict(TINY).config_hash()
    for name in ("world.json", "user_model.json", "entropy_index.json", "policy_dorl.json",
                 "logs.meta.json", "results_dorl.meta.json"):
        meta = json.loads((run / name).read_text())
        assert meta["config_hash"] == h and meta["seed"] == 3
    for name in ("world.json", "user_model.json", "entropy_index.json", "policy_dorl.json"):
        assert "version" in json.loads((run / name).read_text())
    rows = list(csv.DictReader(open(run / "results_dorl.csv")))
    assert len(rows) == 1 and rows[0]["param_lambda2"] == "1.0"


def test_sweep_outputs(cfg_file, tmp_path):
    _chain(cfg_file)
    assert _run(cfg_file, "sweep") == 0
    rows = list(csv.DictReader(open(tmp_path / "run" / "sweep_dorl.csv")))
    assert len(rows) == 4
    marg = list(csv.DictReader(open(tmp_path / "run" / "sweep_dorl_marginal_lambda1.csv")))
    assert len(marg) == 2 and "param_lambda1" not in marg[0]


def test_quit_window_sweep_reuses_policy(tmp_path):
    raw = {**TINY, "out_dir": str(tmp_path / "w"),
           "eval": {"n_episodes": 5, "sweep": {"lambda2": [1.0], "quit_window": [1, 4]}}}
    path = pl.run_pipeline(config_from_dict(raw))
    rows = list(csv.DictReader(open(path)))
    assert [r["param_quit_window"] for r in rows] == ["1", "4"]


def test_missing_policy_names_prior_command(cfg_file, capsys):
    for cmd in ("gen-world", "gen-logs", "build-entropy-index", "train-user-model"):
        assert _run(cfg_file, cmd) == 0
    assert _run(cfg_file, "evaluate") == 2
    assert "run train-policy first" in capsys.readouterr().err


def test_missing_world_names_gen_world(cfg_file, capsys):
    assert _run(cfg_file, "gen-logs") == 2
    assert "run gen-world first" in capsys.readouterr().err


def test_schema_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"world": {"n_usrs": 3}}))
    assert main(["gen-world", "--config", str(p)]) == 2
    assert "config.world.n_usrs" in capsys.readouterr().err


def test_hash_mismatch_warns(cfg_file, tmp_path):
    assert _run(cfg_file, "gen-world") == 0
    with pytest.warns(pl.ConfigHashMismatch):
        _run(cfg_file, "gen-logs", "--seed", "99")


def test_seed_override_changes_world(cfg_file, tmp_path):
    assert _run(cfg_file, "gen-world", "--out", str(tmp_path / "a")) == 0
    assert _run(cfg_file, "gen-world", "--out", str(tmp_path / "b"), "--seed", "4") == 0
    a = json.loads((tmp_path / "a" / "world.json").read_text())
    b = json.loads((tmp_path / "b" / "world.json").read_text())
    assert a["preference"] != b["preference"]


@pytest.mark.parametrize("baseline", ["egreedy", "ucb"])
def test_bandit_baselines_evaluate_without_training(cfg_file, baseline):
    for cmd in ("gen-world", "gen-logs", "train-user-model"):
        assert _run(cfg_file, cmd) == 0
    assert _run(cfg_file, "train-policy", "--baseline", baseline) == 0
    assert _run(cfg_file, "evaluate", "--baseline", baseline) == 0


def test_ips_baseline_uses_its_own_model(cfg_file, tmp_path, capsys):
    _chain(cfg_file, "ips")
    assert (tmp_path / "run" / "user_model_ips.json").is_file()
    assert not (tmp_path / "run" / "user_model.json").exists()
    assert _run(cfg_file, "evaluate", "--baseline", "ips") == 0
    capsys.readouterr()
    assert _run(cfg_file, "evaluate", "--baseline", "mopo") == 2
    assert "run train-policy --baseline mopo first" in capsys.readouterr().err


def test_analyze_logs(cfg_file, tmp_path):
    assert _run(cfg_file, "gen-world") == 0
    assert _run(cfg_file, "gen-logs") == 0
    assert _run(cfg_file, "analyze-logs") == 0
    summary = json.loads((tmp_path / "run" / "log_analysis.json").read_text())
    assert summary["n_records"] == 6 * 30
    assert summary["item_repeat_rate_mean"] >= 1.0
    assert abs(sum(summary["category_share"]) - 1) < 1e-5


def test_verify_lemma_cli(cfg_file, tmp_path, capsys):
    assert _run(cfg_file, "verify-lemma", "--instances", "5") == 0
    out = capsys.readouterr().out
    assert "max |diff|" in out and len(out.strip().splitlines()) == 7
    report = json.loads((tmp_path / "run" / "lemma_check.json").read_text())
    assert report["passed"] and len(report["instances"]) == 5


def test_threads_flag_validation(cfg_file):
    assert _run(cfg_file, "gen-world", "--threads", "0") == 2


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = config_from_dict({**TINY, "out_dir": str(tmp_path)})
    world = pl.make_world(cfg)
    logs = pl.make_logs(cfg, world)
    ens = pl.make_user_model(cfg, logs)
    index = pl.make_index(cfg, logs)
    serial = pl.run_sweep(cfg, world, logs, ens, index, threads=1)
    parallel = pl.run_sweep(cfg, world, logs, ens, index, threads=2)
    assert serial == parallel


def test_pipeline_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = config_from_dict({**TINY, "out_dir": str(tmp_path / name)})
        outs.append(pl.run_pipeline(cfg).read_bytes())
    assert outs[0] == outs[1]


def test_loading_without_warnings_when_hash_matches(cfg_file):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _chain(cfg_file)
