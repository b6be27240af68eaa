import json
import os

import numpy as np
import pytest

from kgsampler.cli import main, resolve_config, ConfigError
from kgsampler.scorers import load_checkpoint


@pytest.fixture
def toy_dataset(tmp_path):
    out = tmp_path / "toy"
    assert main(["make-toy", "--kind", "planted", "--out", str(out), "--seed", "1"]) == 0
    return str(out)


def run_training(tmp_path, toy_dataset, extra=()):
    run_dir = str(tmp_path / "run")
    code = main([
        "train", "--dataset", toy_dataset, "--model", "distmult",
        "--sampler", "sr", "--batch-size", "128", "--epochs", "2",
        "--dimension", "8", "--seed", "3", "--out", run_dir,
        "--set", "loss.negatives=8", "--set", "train.eval_every=2",
        *extra,
    ])
    return code, run_dir


class TestConfigResolution:
    def test_defaults(self):
        config = resolve_config()
        assert config["sampler"]["kind"] == "sr"
        assert config["train"]["epochs"] == 100

    def test_file_overrides_defaults(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[train]\nepochs = 7\n[sampler]\nkind = rwisg\n")
        config = resolve_config(str(ini))
        assert config["train"]["epochs"] == 7
        assert config["sampler"]["kind"] == "rwisg"

    def test_cli_overrides_file(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[train]\nepochs = 7\n")
        config = resolve_config(str(ini), ["train.epochs=2"])
        assert config["train"]["epochs"] == 2

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="sampler.bogus"):
            resolve_config(None, ["sampler.bogus=1"])

    def test_bool_coercion(self):
        config = resolve_config(None, ["loss.neighbors_loss=true"])
        assert config["loss"]["neighbors_loss"] is True
        with pytest.raises(ConfigError):
            resolve_config(None, ["loss.neighbors_loss=maybe"])


class TestMakeToy:
    def test_writes_splits(self, toy_dataset):
        for split in ("train.txt", "valid.txt", "test.txt"):
            assert os.path.isfile(os.path.join(toy_dataset, split))

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["make-toy", "--kind", "dense", "--out", str(a), "--seed", "4"])
        main(["make-toy", "--kind", "dense", "--out", str(b), "--seed", "4"])
        assert (a / "train.txt").read_text() == (b / "train.txt").read_text()


class TestTrainCommand:
    def test_run_directory_contents(self, tmp_path, toy_dataset):
        code, run_dir = run_training(tmp_path, toy_dataset)
        assert code == 0
        for fname in ("manifest.json", "train_log.jsonl", "last.ckpt", "best.ckpt",
                      "entities.tsv", "relations.tsv"):
            assert os.path.isfile(os.path.join(run_dir, fname)), fname
        manifest = json.load(open(os.path.join(run_dir, "manifest.json")))
        assert manifest["config"]["train"]["epochs"] == 2
        assert manifest["config"]["loss"]["negatives"] == 8
        assert "train.txt" in manifest["dataset_fingerprint"]
        assert "started_at" in manifest and "finished_at" in manifest
        log_lines = open(os.path.join(run_dir, "train_log.jsonl")).read().splitlines()
        assert len(log_lines) == 2
        store = load_checkpoint(os.path.join(run_dir, "last.ckpt"))
        assert store.model_kind == "distmult"

    def test_unknown_sampler_lists_kinds(self, tmp_path, toy_dataset, capsys):
        code = main(["train", "--dataset", toy_dataset, "--sampler", "frontier"])
        assert code == 1
        err = capsys.readouterr().err
        for kind in ("sr", "rw", "rwr", "rwisg", "rwisg_n"):
            assert kind in err

    def test_unknown_config_key_exits_usage(self, tmp_path, toy_dataset, capsys):
        code = main(["train", "--dataset", toy_dataset, "--set", "loss.negs=8"])
        assert code == 1
        assert "loss.negs" in capsys.readouterr().err

    def test_missing_dataset_exits_data_error(self, tmp_path):
        code = main(["train", "--dataset", "no-such-dataset",
                     "--data-root", str(tmp_path)])
        assert code == 2


class TestEvalCommand:
    def test_eval_checkpoint(self, tmp_path, toy_dataset, capsys):
        code, run_dir = run_training(tmp_path, toy_dataset)
        assert code == 0
        capsys.readouterr()
        code = main(["eval", "--dataset", toy_dataset,
                     "--checkpoint", os.path.join(run_dir, "last.ckpt"),
                     "--split", "test", "--protocol", "filtered"])
        assert code == 0
        record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(record) == {"mrr", "mr", "hits1", "hits3", "hits10", "count", "protocol"}

    def test_filtered_at_least_raw(self, tmp_path, toy_dataset, capsys):
        code, run_dir = run_training(tmp_path, toy_dataset)
        ckpt = os.path.join(run_dir, "last.ckpt")
        results = {}
        for protocol in ("raw", "filtered"):
            capsys.readouterr()
            assert main(["eval", "--dataset", toy_dataset, "--checkpoint", ckpt,
                         "--protocol", protocol]) == 0
            results[protocol] = json.loads(
                capsys.readouterr().out.strip().splitlines()[-1])
        assert results["filtered"]["mrr"] >= results["raw"]["mrr"]

    def test_mismatched_checkpoint(self, tmp_path, toy_dataset, capsys):
        other = tmp_path / "other"
        main(["make-toy", "--kind", "variance", "--out", str(other), "--seed", "2"])
        code, run_dir = run_training(tmp_path, toy_dataset)
        code = main(["eval", "--dataset", str(other),
                     "--checkpoint", os.path.join(run_dir, "last.ckpt")])
        assert code == 2

    def test_random_checkpoint_near_random_baseline(self, tmp_path, toy_dataset, capsys):
        from kgsampler.scorers import initialize, save_checkpoint
        from kgsampler.graph import load_dataset
        g = load_dataset(toy_dataset)
        store = initialize(g.n_entities, g.n_relations, "distmult", 8, seed=9)
        ckpt = str(tmp_path / "random.ckpt")
        save_checkpoint(store, ckpt)
        capsys.readouterr()
        assert main(["eval", "--dataset", toy_dataset, "--checkpoint", ckpt,
                     "--protocol", "raw"]) == 0
        record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        expected = (np.log(g.n_entities) + 0.5772) / g.n_entities
        assert record["mrr"] < 10 * expected


class TestStatsCommand:
    def test_summary(self, toy_dataset, capsys):
        assert main(["stats", "--dataset", toy_dataset, "--summary"]) == 0
        out = capsys.readouterr().out
        assert "entities:   200" in out
        assert "relations:  3" in out

    def test_csv_outputs(self, tmp_path, toy_dataset):
        out = str(tmp_path / "stats")
        code = main(["stats", "--dataset", toy_dataset, "--samplers", "sr,rw",
                     "--batch-sizes", "32", "--num-batches", "5", "--out", out])
        assert code == 0
        sweep = open(os.path.join(out, "expected_degree.csv")).read().splitlines()
        assert sweep[0] == "policy,batch_size,expected_degree,std_error,num_batches"
        assert len(sweep) == 3
        dist = open(os.path.join(out, "degree_distributions.csv")).read().splitlines()
        assert dist[0] == "policy,batch_size,degree,probability"

    def test_single_batch(self, tmp_path, toy_dataset):
        out = str(tmp_path / "stats1")
        code = main(["stats", "--dataset", toy_dataset, "--samplers", "sr",
                     "--batch-sizes", "16", "--num-batches", "1", "--out", out])
        assert code == 0
        rows = open(os.path.join(out, "expected_degree.csv")).read().splitlines()
        assert rows[1].endswith(",1")


class TestVizCommand:
    def test_writes_dot(self, tmp_path, toy_dataset):
        out = str(tmp_path / "batch.dot")
        code = main(["viz", "--dataset", toy_dataset, "--sampler", "sr",
                     "--batch-size", "16", "--output", out])
        assert code == 0
        text = open(out).read()
        assert text.startswith("digraph")
        assert text.count("->") == 16

    def test_rw_batch_connected(self, tmp_path, toy_dataset):
        out = str(tmp_path / "walk.dot")
        code = main(["viz", "--dataset", toy_dataset, "--sampler", "rw",
                     "--batch-size", "16", "--output", out])
        assert code == 0

    def test_unwritable_output(self, tmp_path, toy_dataset):
        out = os.path.join(str(tmp_path), "missing-dir", "x.dot")
        code = main(["viz", "--dataset", toy_dataset, "--sampler", "sr",
                     "--batch-size", "4", "--output", out])
        assert code == 2
