import json

import numpy as np
import pytest
import yaml

from polyssl.cli import annotate, main
from polyssl.config import config_from_mapping, load_config
from polyssl.corpus import make_labeled
from polyssl.errors import ConfigError
from polyssl.model import load_checkpoint, predict
from polyssl.pipeline import accuracy_report, evaluate, load_resources, run_staged, train
from polyssl.ssl import MODEL, PseudoPool, prediction_entropy, threshold

from conftest import tiny_model


def small_mapping(task_dir, out_dir, **over):
    m = {
        "mode": "base",
        "seed": 0,
        "epochs": 5,
        "batch_size": 16,
        "optimizer": {"lr": 3e-3},
        "loss": {"w_consis": 0.0},
        "ssl": {"epochs": 4, "lr": 1e-3, "w_consis": 0.003},
        "model": {"char_emb": 8, "d_enc": 8, "hidden": 8},
        "paths": {
            "inventory": str(task_dir / "inventory.tsv"),
            "lexicon": str(task_dir / "lexicon.tsv"),
            "embeddings": str(task_dir / "embeddings.txt"),
            "labeled": str(task_dir / "labeled.jsonl"),
            "unlabeled": str(task_dir / "unlabeled.txt"),
            "test": str(task_dir / "test.jsonl"),
            "out_dir": str(out_dir),
        },
    }
    for k, v in over.items():
        if isinstance(v, dict):
            m[k] = {**m.get(k, {}), **v}
        else:
            m[k] = v
    return m


@pytest.fixture(scope="module")
def task_dir(tmp_path_factory):
    from polyssl.corpus import SyntheticTaskSpec, generate_synthetic

    spec = SyntheticTaskSpec(alphabet_size=20, n_polyphones=3, n_labeled=60, n_unlabeled=120,
                             n_test=40, seed=3)
    out = tmp_path_factory.mktemp("task")
    generate_synthetic(spec).write(out)
    return out


@pytest.fixture(scope="module")
def resources(task_dir, tmp_path_factory):
    cfg = config_from_mapping(small_mapping(task_dir, tmp_path_factory.mktemp("r")))
    return load_resources(cfg)


def test_accuracy_report_by_hand():
    gold = [("和", "hé"), ("和", "hé"), ("行", "háng"), ("行", "xíng")]
    pred = ["hé", "hè", "háng", "xíng"]
    rep = accuracy_report(gold, pred)
    assert rep.overall == 0.75
    assert rep.per_character == {"和": 0.5, "行": 1.0}
    # overall equals the support-weighted mean of per-character accuracies
    weighted = sum(rep.per_character[c] * rep.support[c] for c in rep.support) / sum(rep.support.values())
    assert rep.overall == weighted
    assert rep.confusion["和"]["hé"] == {"hé": 1, "hè": 1}


def test_evaluate_matches_argmax_oracle(inventory):
    texts = ["我和你行", "长和行", "得和"]
    model = tiny_model(inventory, texts, seed=4)
    rng = np.random.default_rng(0)
    test = []
    for t in texts:
        targets = [(i, int(rng.choice(inventory.candidate_classes(c)))) for i, c in enumerate(t) if c in inventory]
        test.append(make_labeled(t, targets, inventory))
    hits = total = 0
    for ex in test:
        for (pos, label), d in zip(ex.targets, predict(model, ex.text, ex.positions)):
            hits += int(np.argmax(d.probs)) == label
            total += 1
    assert evaluate(model, test).overall == hits / total


def test_loss_decreases(task_dir, tmp_path, resources):
    cfg = config_from_mapping(small_mapping(task_dir, tmp_path))
    res = train(cfg, resources)
    losses = [row["loss"] for row in res.metrics]
    assert losses[-1] < losses[0]
    assert (tmp_path / "metrics.jsonl").exists() and (tmp_path / "test_report.json").exists()


def test_zero_weight_consistency_equals_base(task_dir, tmp_path, resources):
    base = train(config_from_mapping(small_mapping(task_dir, tmp_path / "a", epochs=2)), resources)
    cfg_c = small_mapping(task_dir, tmp_path / "b", epochs=2, mode="base_c")
    c = train(config_from_mapping(cfg_c), resources)
    assert [r["loss"] for r in base.metrics] == [r["loss"] for r in c.metrics]
    assert base.test_report.overall == c.test_report.overall


def test_consistency_changes_training(task_dir, tmp_path, resources):
    base = train(config_from_mapping(small_mapping(task_dir, tmp_path / "a", epochs=2)), resources)
    cfg_c = small_mapping(task_dir, tmp_path / "b", epochs=2, mode="base_c", loss={"w_consis": 0.5})
    c = train(config_from_mapping(cfg_c), resources)
    assert all(r["consis"] > 0 for r in c.metrics)
    assert [r["loss"] for r in base.metrics] != [r["loss"] for r in c.metrics]


def test_training_is_deterministic(task_dir, tmp_path, resources):
    runs = [train(config_from_mapping(small_mapping(task_dir, tmp_path / k, epochs=2)), resources)
            for k in "ab"]
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert runs[0].test_report == runs[1].test_report


def test_staged_pseudo_labelling(task_dir, tmp_path, resources):
    cfg = config_from_mapping(small_mapping(task_dir, tmp_path, epochs=2, mode="base_c", loss={"w_consis": 0.008}))
    first, second = run_staged(cfg, resources)
    sizes = [r["pool_size"] for r in second.metrics]
    assert sizes == sorted(sizes) and sizes[-1] > 0
    # pools only grow on odd epochs
    assert all(r["assigned"] == 0 for r in second.metrics if r["epoch"] % 2 == 0)
    pool = PseudoPool.load(tmp_path / "stage_cp" / "pool.jsonl")
    assert len(pool) == sizes[-1]
    for rec in pool:
        assert rec.epoch_assigned % 2 == 1
        if rec.source == MODEL:
            assert rec.entropy_at_assignment <= threshold(rec.epoch_assigned, cfg.ssl.schedule)
    stats = [json.loads(l) for l in (tmp_path / "stage_cp" / "pseudo_stats.jsonl").read_text().splitlines()]
    assert [s["pool_size"] for s in stats] == sizes


def test_base_cp_requires_checkpoint(task_dir, tmp_path, resources):
    cfg = config_from_mapping(small_mapping(task_dir, tmp_path, mode="base_cp"))
    with pytest.raises(ConfigError):
        train(cfg, resources)


def test_config_validation(task_dir, tmp_path):
    with pytest.raises(ConfigError):
        config_from_mapping(small_mapping(task_dir, tmp_path, loss={"w_consis": 0.1})).validate()
    with pytest.raises(ConfigError):
        config_from_mapping(small_mapping(task_dir, tmp_path, batch_size=7)).validate()
    m = small_mapping(task_dir, tmp_path)
    del m["seed"]
    with pytest.raises(ConfigError):
        config_from_mapping(m)
    with pytest.raises(ConfigError):
        config_from_mapping({**small_mapping(task_dir, tmp_path), "bogus": 1})


def test_checkpoint_reload_gives_identical_report(task_dir, tmp_path, resources):
    res = train(config_from_mapping(small_mapping(task_dir, tmp_path, epochs=1)), resources)
    again = evaluate(res.checkpoint, resources.test, resources.inventory)
    assert again == res.test_report


# -- command line ----------------------------------------------------------


def write_config(path, mapping):
    path.write_text(yaml.safe_dump(mapping, allow_unicode=True), encoding="utf-8")
    return path


def test_cli_train_eval_predict(task_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", small_mapping(task_dir, tmp_path / "run", epochs=1))
    assert main(["train", "--config", str(cfg)]) == 0
    summary = json.loads(capsys.readouterr().out)
    ckpt = summary["checkpoint"]

    assert main(["eval", "--checkpoint", ckpt, "--test", str(task_dir / "test.jsonl")]) == 0
    assert json.loads(capsys.readouterr().out)["overall"] == summary["test_accuracy"]

    model, _ = load_checkpoint(ckpt)
    text = next(l for l in (task_dir / "unlabeled.txt").read_text(encoding="utf-8").splitlines())
    assert main(["predict", "--checkpoint", ckpt, "--text", text, "--json"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["pos"] for r in rows] == [i for i, c in enumerate(text) if c in model.inventory]
    for r in rows:
        assert r["source"] in ("dict", "model")
        assert abs(r["entropy"] - prediction_entropy(list(r["probs"].values()))) < 1e-12
        assert abs(sum(r["probs"].values()) - 1) < 1e-6

    assert main(["predict", "--checkpoint", ckpt, "--text", text]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == len(rows) and all(l.count("\t") == 5 for l in lines)


def test_cli_predict_dictionary_flag(tmp_path, inventory, lexicon):
    model = tiny_model(inventory, ["我在银行和你"])
    rows = annotate(model, "我在银行和你", lexicon)
    assert [(r["char"], r["source"]) for r in rows] == [("行", "dict"), ("和", "model")]
    assert rows[0]["pinyin"] == "háng"


def test_cli_exit_codes(task_dir, tmp_path, capsys):
    bad = write_config(tmp_path / "bad.yaml", {"mode": "base"})
    assert main(["train", "--config", str(bad)]) == 2
    missing = small_mapping(task_dir, tmp_path / "m")
    missing["paths"]["labeled"] = str(tmp_path / "nope.jsonl")
    assert main(["train", "--config", str(write_config(tmp_path / "m.yaml", missing))]) == 3

    cfg = write_config(tmp_path / "c.yaml", small_mapping(task_dir, tmp_path / "run", epochs=0))
    assert main(["train", "--config", str(cfg)]) == 0
    ckpt = str(tmp_path / "run" / "checkpoint.pt")
    other = tmp_path / "inv.tsv"
    other.write_text("和\thé,hè\n", encoding="utf-8")
    code = main(["eval", "--checkpoint", ckpt, "--test", str(task_dir / "test.jsonl"), "--inventory", str(other)])
    assert code == 3
    assert main(["pseudo-stats", "--run", str(tmp_path / "run")]) == 3
    capsys.readouterr()


def test_cli_staged_and_pseudo_stats(task_dir, tmp_path, capsys):
    m = small_mapping(task_dir, tmp_path / "run", epochs=1, mode="base_c", loss={"w_consis": 0.008}, ssl={"epochs": 2})
    cfg = write_config(tmp_path / "c.yaml", m)
    assert main(["train", "--config", str(cfg), "--staged"]) == 0
    capsys.readouterr()
    assert main(["pseudo-stats", "--run", str(tmp_path / "run" / "stage_cp")]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    assert rows[0]["assignment_epoch"] and not rows[1]["assignment_epoch"]
    assert sum(rows[0]["entropy_histogram"].values()) == rows[0]["assigned_model"] + (
        rows[0]["considered"] - rows[0]["assigned"]
    )


def test_cli_augment_preview_and_synth(tmp_path, capsys):
    args = ["augment-preview", "--text", "我们今天和北京银行", "--pos", "4", "--seed", "3", "--count", "6"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    for line in first.splitlines():
        policy, pos, text = line.split("\t")
        assert text[int(pos)] == "和" and policy in ("naive", "ngram", "replace")
    assert main(["augment-preview", "--text", "我和你", "--pos", "1"]) == 3

    spec = tmp_path / "spec.yaml"
    spec.write_text("seed: 1\nn_labeled: 10\nn_unlabeled: 10\nn_test: 10\n", encoding="utf-8")
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "syn")]) == 0
    assert (tmp_path / "syn" / "labeled.jsonl").exists()
    spec.write_text("n_labeled: 10\n", encoding="utf-8")
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "syn2")]) == 2
    capsys.readouterr()


def test_cli_model_stats(task_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", small_mapping(task_dir, tmp_path / "run"))
    assert main(["model-stats", "--config", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["total"] == sum(out["stages"].values())


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("reference_base", "reference_base_c", "reference_base_cp", "synthetic_base", "synthetic_base_c"):
        cfg = load_config(root / f"{name}.yaml")
        assert cfg.seed is not None
    ref = load_config(root / "reference_base_c.yaml")
    assert ref.loss.w_consis == 0.008 and ref.optimizer.lr == 1e-5 and ref.batch_size == 128
    cp = load_config(root / "reference_base_cp.yaml")
    assert (cp.ssl.lr, cp.ssl.w_consis, cp.ssl.t_min, cp.ssl.t_max) == (1e-6, 0.003, 0.81, 0.85)
