import csv
import json
import math

import numpy as np
import pytest

from acodm.agent import ActorNet
from acodm.checkpoint import save_net
from acodm.corpus import generate
from acodm.lm_env import DivergenceError
from acodm.orchestrator import (ConfigError, Exp3Config, RunCurve, compare_report, config_from_dict,
                                load_config, metrics_header, read_curve, report_csv, report_table,
                                resolve_weights, run, run_acodm, run_exp3, run_static, run_transfer,
                                run_with_actor, steps_to_threshold, warmup_weights)
from factories import tiny_config


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def column(rows, name):
    return [r[name] for r in rows]


# -- config ---------------------------------------------------------------------


def test_config_roundtrip_through_dict():
    cfg = tiny_config()
    again = config_from_dict(cfg.to_dict())
    assert again == cfg


@pytest.mark.parametrize("path", [[], ["schedule"], ["agent"], ["corpus"], ["target"]])
def test_unknown_keys_rejected_at_any_depth(path):
    data = tiny_config().to_dict()
    node = data
    for key in path:
        node = node[key]
    node["bogus"] = 1
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict(data)


@pytest.mark.parametrize("patch", [
    {"schedule": {"T": 10, "warmup_steps": 10}},
    {"schedule": {"explore_frac": 0.6}},
    {"mode": "doremi"},
    {"schedule": {"eval_interval": 3, "log_interval": 2}},
    {"target": {"reward_layer_indices": [7]}},
])
def test_invalid_config_rejected(patch):
    data = tiny_config().to_dict()
    for key, value in patch.items():
        if isinstance(value, dict):
            data[key].update(value)
        else:
            data[key] = value
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.json")):
        load_config(p)


def test_resolve_weights():
    c = generate(tiny_config().corpus)
    np.testing.assert_array_equal(resolve_weights("uniform", c), np.full(3, 1 / 3))
    np.testing.assert_allclose(resolve_weights([0.2, 0.3, 0.5], c), [0.2, 0.3, 0.5])
    with pytest.raises(ConfigError):
        resolve_weights([0.5, 0.5], c)
    with pytest.raises(ConfigError):
        resolve_weights("pile", c)


def test_warmup_weights():
    base = np.array([0.5, 0.3, 0.2])
    rng = np.random.default_rng(0)
    assert warmup_weights(base, 0.0, rng).tolist() == base.tolist()
    for _ in range(200):
        a = warmup_weights(base, 0.3, rng)
        assert np.all(a > 0) and abs(a.sum() - 1) <= 1e-12


def test_metrics_header_layout():
    h = metrics_header(2)
    assert h == ["step", "alpha_0", "alpha_1", "train_loss_0", "train_loss_1", "val_loss_0", "val_loss_1",
                 "val_ppl_0", "val_ppl_1", "mean_val_loss", "mean_val_ppl", "reward_0", "reward_1"]


# -- runs -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def acodm_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acodm")
    cfg = tiny_config()
    return cfg, run_acodm(cfg, out_dir=out), out


def test_acodm_row_count_and_files(acodm_run):
    cfg, result, out = acodm_run
    rows = read_rows(out / "metrics.csv")
    assert len(rows) == cfg.schedule.T // cfg.schedule.log_interval + 1
    assert rows[0]["step"] == "0" and rows[0]["alpha_0"] == ""
    assert (out / "actor.bin").exists() and (out / "critic.bin").exists()
    summary = json.loads((out / "summary.json").read_text())
    t = summary["timings"]
    assert t["steps"] == cfg.schedule.T
    assert t["overhead_fraction"] == pytest.approx((t["alignment"] + t["agent"]) / t["total"])


def test_acodm_buffer_holds_every_step(acodm_run):
    cfg, result, _ = acodm_run
    assert len(result.agent.buffer) == cfg.schedule.T


def test_warmup_buffer_size_equals_warmup_steps():
    cfg = tiny_config(agent_updates=False)
    cfg.schedule.T = cfg.schedule.warmup_steps + 1
    cfg.schedule.log_interval = cfg.schedule.eval_interval = 1
    result = run_acodm(cfg)
    # the final step's transition is stored after warmup_fit ran on the warm-up tuples
    assert len(result.agent.buffer) == cfg.schedule.warmup_steps + 1


def test_every_logged_alpha_on_simplex(acodm_run):
    _, _, out = acodm_run
    for row in read_rows(out / "metrics.csv")[1:]:
        a = np.array([float(row[f"alpha_{i}"]) for i in range(3)])
        assert np.all(a >= 0) and abs(a.sum() - 1) <= 1e-9


def test_perplexity_is_exp_loss(acodm_run):
    _, _, out = acodm_run
    for row in read_rows(out / "metrics.csv"):
        if row["val_loss_0"]:
            assert float(row["val_ppl_0"]) == pytest.approx(math.exp(float(row["val_loss_0"])), rel=1e-15)


def test_static_alpha_constant(tmp_path):
    cfg = tiny_config("static", static_weights=[0.2, 0.5, 0.3])
    result = run_static(cfg, out_dir=tmp_path)
    assert all(a.tolist() == [0.2, 0.5, 0.3] for a in result.alphas)
    rows = read_rows(tmp_path / "metrics.csv")[1:]
    for i in range(3):
        assert len(set(column(rows, f"alpha_{i}"))) == 1


def test_exp3_floor(tmp_path):
    cfg = tiny_config("exp3", exp3=Exp3Config(lr=0.5, explore=0.1))
    result = run_exp3(cfg, out_dir=tmp_path)
    for a in result.alphas:
        assert np.all(a >= 0.1 / 3 - 1e-15)


@pytest.mark.parametrize("mode", ["ac-odm", "transfer", "exp3", "static"])
def test_identical_seed_runs_are_bitwise_identical(tmp_path, mode):
    cfg = tiny_config(mode)
    run(cfg, tmp_path / "a")
    run(tiny_config(mode), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_different_seeds_differ(tmp_path):
    run(tiny_config("static", seed=0), tmp_path / "a")
    run(tiny_config("static", seed=1), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_frozen_agent_ablation_matches_static_replay(tmp_path):
    cfg = tiny_config(agent_updates=False)
    frozen = run_acodm(cfg, out_dir=tmp_path / "frozen")
    replay = run_static(tiny_config("static"), out_dir=tmp_path / "replay", schedule=frozen.alphas)
    a, b = read_rows(tmp_path / "frozen" / "metrics.csv"), read_rows(tmp_path / "replay" / "metrics.csv")
    keys = [c for c in metrics_header(3) if not c.startswith("reward")]
    assert [[r[c] for c in keys] for r in a] == [[r[c] for c in keys] for r in b]


def test_frozen_agent_keeps_actor_after_warmup_fit():
    cfg = tiny_config(agent_updates=False)
    result = run_acodm(cfg)
    assert result.agent.actor_opt.step == cfg.agent.warmup_fit_steps


# -- transfer -------------------------------------------------------------------


def _uniform_actor(cfg):
    k = cfg.corpus.k
    state_dim = 3 * k + 2 * len(cfg.target.state_layer_indices) + 1
    actor = ActorNet(state_dim, k, 8, 2, np.random.default_rng(0))
    actor.params["actor.out.weight"].data[:] = 0.0
    actor.params["actor.out.bias"].data[:] = 0.0
    return actor


def test_uniform_dummy_actor_reproduces_static_uniform(tmp_path):
    cfg = tiny_config("transfer")
    corpus = generate(cfg.corpus)
    stage2 = run_with_actor(cfg, _uniform_actor(cfg), corpus, cfg.target, tmp_path / "t")
    run_static(tiny_config("static"), corpus, cfg.target, tmp_path / "s")
    a, b = read_rows(tmp_path / "t" / "metrics.csv"), read_rows(tmp_path / "s" / "metrics.csv")
    assert a == b
    assert stage2.actor_checksum is not None


def test_transfer_from_checkpoint(tmp_path):
    cfg = tiny_config("transfer")
    save_net(_uniform_actor(cfg), tmp_path / "actor.bin", m=2)
    cfg.actor_checkpoint = str(tmp_path / "actor.bin")
    stage1, stage2 = run_transfer(cfg, out_dir=tmp_path / "run")
    assert stage1 is None
    assert all(np.all(a == 1 / 3) for a in stage2.alphas)


def test_transfer_writes_proxy_stage(tmp_path):
    stage1, stage2 = run_transfer(tiny_config("transfer"), out_dir=tmp_path)
    assert (tmp_path / "proxy" / "metrics.csv").exists()
    assert stage2.actor_checksum == stage1.agent.actor_target.params.checksum()


def test_transfer_rejects_state_mismatch():
    cfg = tiny_config("transfer")
    cfg.proxy.state_layer_indices = [0]
    with pytest.raises(ConfigError, match="state_layer_indices"):
        run_transfer(cfg)


def test_transfer_rejects_checkpoint_mismatch(tmp_path):
    cfg = tiny_config("transfer")
    save_net(_uniform_actor(cfg), tmp_path / "actor.bin", m=1)
    cfg.actor_checkpoint = str(tmp_path / "actor.bin")
    with pytest.raises(ConfigError):
        run_transfer(cfg)


# -- divergence -----------------------------------------------------------------


def test_divergence_flushes_partial_metrics(tmp_path):
    cfg = tiny_config("static")
    cfg.schedule.optimizer = "sgd"
    cfg.schedule.lr_min = cfg.schedule.lr_max = 1e150
    with pytest.raises(DivergenceError):
        run(cfg, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "diverged"
    assert len(read_rows(tmp_path / "metrics.csv")) >= 1


# -- reporting ------------------------------------------------------------------


def _write_curve(dir_, steps, losses, digest="abc", T=1000, mode="static"):
    dir_.mkdir(parents=True, exist_ok=True)
    with open(dir_ / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "mean_val_loss", "mean_val_ppl"])
        for s, l in zip(steps, losses):
            w.writerow([s, l, math.exp(l)])
    (dir_ / "summary.json").write_text(json.dumps({"mode": mode, "T": T, "corpus_digest": digest}))
    return dir_


def test_report_identical_inputs_ratio_one(tmp_path):
    a = _write_curve(tmp_path / "a", [0, 500, 1000], [3.0, 2.5, 2.0])
    b = _write_curve(tmp_path / "b", [0, 500, 1000], [3.0, 2.5, 2.0])
    rows, thr = compare_report([a, b])
    assert thr == 2.0
    assert [r.speedup for r in rows] == [1.0, 1.0]


def test_report_ratio_two(tmp_path):
    base = _write_curve(tmp_path / "B", [0, 500, 1000], [3.0, 2.5, 2.0])
    fast = _write_curve(tmp_path / "A", [0, 500, 1000], [3.0, 2.0, 1.8])
    rows, _ = compare_report([base, fast])
    assert rows[1].steps_to_threshold == 500 and rows[0].steps_to_threshold == 1000
    assert rows[1].speedup == 2.0


def test_report_not_reached(tmp_path):
    base = _write_curve(tmp_path / "B", [0, 500, 1000], [3.0, 2.5, 2.0])
    slow = _write_curve(tmp_path / "C", [0, 500, 1000], [3.0, 2.8, 2.6], mode="exp3")
    rows, thr = compare_report([base, slow])
    assert rows[1].steps_to_threshold is None and rows[1].speedup is None
    assert "not reached" in report_csv(rows)
    assert "not reached" in report_table(rows, thr)


def test_report_rejects_corpus_mismatch(tmp_path):
    a = _write_curve(tmp_path / "a", [0, 10], [3.0, 2.0], digest="x")
    b = _write_curve(tmp_path / "b", [0, 10], [3.0, 2.0], digest="y")
    with pytest.raises(ValueError, match="corpus"):
        compare_report([a, b])


def test_report_needs_two_files(tmp_path):
    with pytest.raises(ValueError):
        compare_report([_write_curve(tmp_path / "a", [0], [1.0])])


def test_steps_to_threshold_first_hit():
    c = RunCurve("x", "static", 30, "d", np.array([0, 10, 20, 30]), np.array([3.0, 2.0, 2.5, 1.0]),
                 np.zeros(4))
    assert steps_to_threshold(c, 2.0) == 10
    assert steps_to_threshold(c, 0.5) is None


def test_read_curve_from_real_run(acodm_run):
    cfg, result, out = acodm_run
    curve = read_curve(out)
    assert curve.T == cfg.schedule.T and curve.mode == "ac-odm"
    assert curve.steps[-1] == cfg.schedule.T
    assert curve.mean_val_loss[-1] == pytest.approx(float(np.mean(result.final_val_loss)), rel=1e-15)
