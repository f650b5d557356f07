import json

import pytest

from acodm.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from acodm.corpus import load_corpus
from factories import tiny_config


@pytest.fixture
def config_file(tmp_path):
    def write(cfg=None, name="c.json", **patch):
        data = (cfg or tiny_config()).to_dict()
        data.update(patch)
        p = tmp_path / name
        p.write_text(json.dumps(data))
        return p
    return write


def test_generate_corpus(tmp_path, config_file, capsys):
    out = tmp_path / "corpus.bin"
    assert main(["generate-corpus", "--config", str(config_file()), "--seed", "5", "--out", str(out)]) == EXIT_OK
    c = load_corpus(out)
    assert c.k == 3 and c.vocab_size == 10
    assert "digest=" in capsys.readouterr().out


def test_generate_corpus_from_bare_corpus_fields(tmp_path):
    p = tmp_path / "corpus.json"
    p.write_text(json.dumps({"k": 2, "vocab_size": 5, "seq_len": 4, "docs_per_domain": 10}))
    assert main(["generate-corpus", "--config", str(p), "--out", str(tmp_path / "c.bin")]) == EXIT_OK
    assert load_corpus(tmp_path / "c.bin").k == 2


@pytest.mark.parametrize("mode", ["static", "ac-odm"])
def test_run_writes_outputs(tmp_path, config_file, mode):
    out = tmp_path / "run"
    assert main(["run", "--mode", mode, "--config", str(config_file()), "--out", str(out)]) == EXIT_OK
    assert (out / "metrics.csv").exists() and (out / "summary.json").exists()


def test_unknown_key_exits_config(tmp_path, config_file):
    p = config_file(unexpected=True)
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_bad_mode_exits_config(tmp_path, config_file):
    assert main(["run", "--config", str(config_file(mode="nope")), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_divergence_exits_diverged(tmp_path, config_file):
    cfg = tiny_config("static")
    cfg.schedule.optimizer = "sgd"
    cfg.schedule.lr_min = cfg.schedule.lr_max = 1e150
    with pytest.warns(RuntimeWarning):
        code = main(["run", "--config", str(config_file(cfg)), "--out", str(tmp_path / "r")])
    assert code == EXIT_DIVERGED


def test_report(tmp_path, config_file, capsys):
    p = config_file()
    for mode in ("static", "exp3"):
        assert main(["run", "--mode", mode, "--config", str(p), "--out", str(tmp_path / mode)]) == EXIT_OK
    capsys.readouterr()
    csv_out = tmp_path / "report.csv"
    code = main(["report", str(tmp_path / "static" / "metrics.csv"), str(tmp_path / "exp3" / "metrics.csv"),
                 "--csv", str(csv_out)])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "static" in text and "exp3" in text
    assert csv_out.read_text().splitlines()[0].startswith("run,mode,steps_to_threshold")


def test_sweep(tmp_path, config_file):
    code = main(["sweep", "--config", str(config_file()), "--modes", "static", "exp3", "--seeds", "0", "1",
                 "--workers", "1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    for name in ("static-s0", "static-s1", "exp3-s0", "exp3-s1"):
        assert (tmp_path / name / "metrics.csv").exists()
