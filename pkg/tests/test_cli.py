import json

import pandas as pd
import pytest

from cli import main
from modules.corpus import load_corpus_csv, save_corpus_csv, stratified_split

SMALL_VAE = {"arch": "mlp", "latent_dim": 2, "hidden": [16, 12, 8], "embedding_dim": 3, "batch": 32,
             "max_epochs": 2, "patience": 2}
SMALL_CLASSIFIER = {"hidden": [8], "max_epochs": 3, "patience": 3}


def write_json(path, value):
    path.write_text(json.dumps(value))
    return str(path)


@pytest.fixture
def corpus_files(tmp_path, toy_corpus):
    train, val, test = stratified_split(toy_corpus, [0.6, 0.2, 0.2], seed=17)
    paths = {}
    for name, corpus in (("train", train), ("val", val), ("test", test)):
        paths[name] = str(save_corpus_csv(corpus, tmp_path / f"{name}.csv"))
    return paths


@pytest.fixture
def vae_model(tmp_path, corpus_files):
    out = tmp_path / "vae.json"
    code = main(["--threads", "1", "train", "--kind", "vae", "--train", corpus_files["train"],
                 "--val", corpus_files["val"], "--config", write_json(tmp_path / "vae_cfg.json", SMALL_VAE),
                 "--out", str(out), "--history", str(tmp_path / "history.csv")])
    assert code == 0
    return str(out)


def test_toy_corpus_command(tmp_path):
    out = tmp_path / "toy.csv"
    spec = write_json(tmp_path / "spec.json", {"per_class": 4, "bins": 20})
    assert main(["--seed", "3", "toy-corpus", "--spec", spec, "--out", str(out)]) == 0
    corpus = load_corpus_csv(out)
    assert corpus.n == 12 and corpus.dim == 20


def test_usage_errors_exit_with_two(tmp_path):
    assert main([]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["--seed", "-1", "toy-corpus", "--out", str(tmp_path / "x.csv")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["toy-corpus", "--spec", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    invalid = write_json(tmp_path / "invalid.json", {"bins": 3})
    assert main(["toy-corpus", "--spec", invalid, "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["--threads", "-1", "toy-corpus", "--out", str(tmp_path / "x.csv")]) == 2


def test_data_errors_exit_with_three(tmp_path, corpus_files):
    assert main(["metrics", "--real", str(tmp_path / "absent.csv"), "--generated", corpus_files["test"],
                 "--out", str(tmp_path / "m.csv")]) == 3
    broken = tmp_path / "broken.csv"
    broken.write_text("label,bin_0\nA,2.5\n")
    assert main(["metrics", "--real", corpus_files["train"], "--generated", str(broken),
                 "--out", str(tmp_path / "m.csv")]) == 3


def test_metrics_command(tmp_path, corpus_files):
    out = tmp_path / "metrics.csv"
    assert main(["--threads", "2", "metrics", "--real", corpus_files["train"], "--generated", corpus_files["test"],
                 "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert sorted(frame["class"][:-1]) == ["species_0", "species_1", "species_2"]
    assert frame["class"].iloc[-1] == "__mean__"
    assert frame["pike_all_mean"].between(0.0, 1.0).all()


def test_train_generate_and_export(tmp_path, corpus_files, vae_model):
    history = pd.read_csv(tmp_path / "history.csv")
    assert list(history.columns) == ["epoch", "train_total", "train_recon", "train_kl", "val_total"]

    generated = tmp_path / "generated.csv"
    assert main(["--seed", "4", "generate", "--model", vae_model, "--class", "species_1", "--count", "5",
                 "--out", str(generated)]) == 0
    corpus = load_corpus_csv(generated)
    assert corpus.n == 5 and corpus.vocab == ["species_1"]

    again = tmp_path / "again.csv"
    main(["--seed", "4", "generate", "--model", vae_model, "--class", "species_1", "--count", "5",
          "--out", str(again)])
    assert generated.read_bytes() == again.read_bytes()

    assert main(["metrics", "--real", corpus_files["train"], "--generated", str(generated),
                 "--out", str(tmp_path / "m.csv")]) == 0

    embeddings = tmp_path / "z.csv"
    assert main(["export-embeddings", "--model", vae_model, "--corpus", corpus_files["test"],
                 "--out", str(embeddings)]) == 0
    assert list(pd.read_csv(embeddings).columns) == ["label", "z_0", "z_1"]


def test_generate_rejects_unknown_class_and_negative_count(tmp_path, vae_model):
    out = str(tmp_path / "g.csv")
    assert main(["generate", "--model", vae_model, "--class", "nope", "--count", "2", "--out", out]) == 3
    assert main(["generate", "--model", vae_model, "--class", "species_0", "--count", "-1", "--out", out]) == 2


def run_substitution(tmp_path, corpus_files, model, out):
    return main(["--threads", "1", "experiment", "--kind", "substitution", "--train", corpus_files["train"],
                 "--val", corpus_files["val"], "--test", corpus_files["test"], "--ood", corpus_files["val"],
                 "--models", model, "--config", write_json(tmp_path / "clf.json", SMALL_CLASSIFIER),
                 "--out", str(out)])


def test_substitution_experiment_command(tmp_path, corpus_files, vae_model):
    out = tmp_path / "comparison.csv"
    assert run_substitution(tmp_path, corpus_files, vae_model, out) == 0
    frame = pd.read_csv(out)
    assert set(frame["condition"]) == {"real", "vae", "real@ood", "vae@ood"}
    assert (frame["class"] == "__macro__").sum() == 4

    for label in ("real", "vae", "real@ood", "vae@ood"):
        rates = pd.read_csv(tmp_path / f"comparison_{label}_rates.csv")
        assert list(rates.columns) == ["class", "rate_percent"]
        assert rates["class"].iloc[-1] == "__macro__"
        confusion = pd.read_csv(tmp_path / f"comparison_{label}_confusion.csv", index_col="class")
        assert confusion.shape == (3, 3)


def test_train_rerun_writes_identical_files(tmp_path, corpus_files, vae_model):
    again = tmp_path / "vae_again.json"
    assert main(["--threads", "1", "train", "--kind", "vae", "--train", corpus_files["train"],
                 "--val", corpus_files["val"], "--config", write_json(tmp_path / "vae_cfg2.json", SMALL_VAE),
                 "--out", str(again), "--history", str(tmp_path / "history_again.csv")]) == 0
    assert (tmp_path / "vae.json").read_bytes() == again.read_bytes()
    assert (tmp_path / "history.csv").read_bytes() == (tmp_path / "history_again.csv").read_bytes()
    assert "train_seconds" not in json.loads(again.read_text())["extra"]["cost"]


def test_reruns_are_byte_identical(tmp_path, corpus_files, vae_model):
    spec = write_json(tmp_path / "spec.json", {"per_class": 5, "bins": 24})
    for name in ("toy_a.csv", "toy_b.csv"):
        assert main(["--seed", "9", "toy-corpus", "--spec", spec, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "toy_a.csv").read_bytes() == (tmp_path / "toy_b.csv").read_bytes()

    for name in ("metrics_a.csv", "metrics_b.csv"):
        assert main(["--threads", "1", "metrics", "--real", corpus_files["train"],
                     "--generated", corpus_files["test"], "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "metrics_a.csv").read_bytes() == (tmp_path / "metrics_b.csv").read_bytes()

    for name in ("exp_a.csv", "exp_b.csv"):
        assert run_substitution(tmp_path, corpus_files, vae_model, tmp_path / name) == 0
    assert (tmp_path / "exp_a.csv").read_bytes() == (tmp_path / "exp_b.csv").read_bytes()
    assert (tmp_path / "exp_a_vae_rates.csv").read_bytes() == (tmp_path / "exp_b_vae_rates.csv").read_bytes()


def test_preprocess_command(tmp_path):
    raw_dir = tmp_path / "raw"
    raw_dir.mkdir()
    for name, centre in (("A__1.txt", 2100.0), ("B__1.txt", 2200.0)):
        lines = [f"{2000.0 + i:.1f} {5.0 + 300.0 * (abs(2000.0 + i - centre) < 4):.1f}" for i in range(300)]
        (raw_dir / name).write_text("\n".join(lines) + "\n")
    config = write_json(tmp_path / "pre.json", {"mz_min": 2000.0, "mz_max": 2300.0})
    out = tmp_path / "corpus.csv"
    assert main(["preprocess", "--input-dir", str(raw_dir), "--config", config, "--out", str(out)]) == 0
    corpus = load_corpus_csv(out)
    assert corpus.vocab == ["A", "B"] and corpus.dim == 100
