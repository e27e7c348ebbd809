"""CLI subcommands on a miniature config: chaining, reports, error paths."""

import json

import numpy as np
import pytest

from icsreid.cli import main
from icsreid.dataset import DatasetLayout
from icsreid.memory import MemoryBank


@pytest.fixture
def tiny_config(tmp_path):
    cfg = {
        "seed": 3,
        "generator": {"num_persons": 10, "num_cameras": 2, "feature_dim": 10,
                      "latent_dim": 4, "noise_sigma": 0.1, "presence_prob": 1.0,
                      "images_min": 2, "images_max": 3, "seed": 3,
                      "camera_transform_scale": 0.3},
        "model": {"hidden_dim": 12, "embed_dim": 8},
        "sampler": {"ids_per_batch": 4, "instances_per_id": 2},
        "stages": {"intra_epochs": 3, "inter_epochs": 3},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run(args):
    return main([str(a) for a in args])


class TestPipeline:
    def test_full_chain(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        for cmd in ("generate", "train-intra", "associate", "train-inter", "evaluate"):
            assert run([cmd, "--config", tiny_config, "--out", out]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["model_file"] == "model_inter.ckpt"
        assert 0.0 <= report["mAP"] <= 1.0
        assert (out / "figures" / "cmc.png").exists()
        assert (out / "report.tsv").exists()

    def test_run_all_writes_report_and_figures(self, tiny_config, tmp_path):
        out = tmp_path / "all"
        assert run(["run-all", "--config", tiny_config, "--out", out]) == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report) >= {"config", "seed", "dataset", "association",
                               "intra_stage", "full", "mAP_intra_only", "mAP_full"}
        for name in ("loss_intra.png", "loss_inter.png", "cmc.png"):
            assert (out / "figures" / name).exists()
        assert (out / "loss_intra.tsv").exists()
        assert (out / "loss_inter.tsv").exists()

    def test_run_all_deterministic(self, tiny_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["run-all", "--config", tiny_config, "--out", out1]) == 0
        assert run(["run-all", "--config", tiny_config, "--out", out2]) == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_seed_override_changes_report(self, tiny_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["run-all", "--config", tiny_config, "--out", out1]) == 0
        assert run(["run-all", "--config", tiny_config, "--out", out2,
                    "--seed", "123"]) == 0
        r1 = json.loads((out1 / "report.json").read_text())
        r2 = json.loads((out2 / "report.json").read_text())
        assert r2["seed"] == 123
        assert r1["mAP_full"] != r2["mAP_full"]

    def test_ablate_on_tiny_config(self, tiny_config, tmp_path):
        out = tmp_path / "abl"
        assert run(["generate", "--config", tiny_config, "--out", out]) == 0
        assert run(["ablate", "--config", tiny_config, "--out", out]) == 0
        table = json.loads((out / "ablation.json").read_text())["variants"]
        assert set(table) == {"parametric", "camera_agnostic", "camera_specific",
                              "camera_specific_triplet", "camera_specific_quintuplet",
                              "full_two_stage", "supervised_upper_bound"}
        assert (out / "figures" / "ablation.png").exists()
        assert (out / "ablation.tsv").exists()

    def test_ablate_deterministic_under_identical_seed(self, tiny_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert run(["generate", "--config", tiny_config, "--out", out]) == 0
            assert run(["ablate", "--config", tiny_config, "--out", out]) == 0
        assert (out1 / "ablation.json").read_bytes() == (out2 / "ablation.json").read_bytes()


class TestErrors:
    def test_corrupted_config_no_partial_outputs(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"generator": {"num_persons": -3}}')
        out = tmp_path / "never"
        assert run(["run-all", "--config", cfg, "--out", out]) == 2
        assert not out.exists()

    def test_invalid_json_rejected(self, tmp_path):
        cfg = tmp_path / "mangled.json"
        cfg.write_text("{no")
        assert run(["generate", "--config", cfg, "--out", tmp_path / "x"]) == 2

    def test_missing_upstream_artifact(self, tiny_config, tmp_path):
        out = tmp_path / "empty"
        assert run(["train-intra", "--config", tiny_config, "--out", out]) == 3
        assert run(["associate", "--config", tiny_config, "--out", out]) == 3
        assert run(["train-inter", "--config", tiny_config, "--out", out]) == 3

    def test_single_camera_bank_associates_to_singletons(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        vectors = rng.standard_normal((5, 4))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        bank = MemoryBank(vectors, DatasetLayout((5,), (10,)))
        out = tmp_path / "solo"
        out.mkdir()
        bank.save(out / "bank.tsv")
        assert run(["associate", "--out", out]) == 0
        lines = (out / "pseudo_labels.tsv").read_text().splitlines()
        labels = [int(line.split("\t")[1]) for line in lines[1:]]
        assert labels == [1, 2, 3, 4, 5]
        assoc = json.loads((out / "association.json").read_text())
        assert assoc["num_edges"] == 0
        assert assoc["num_pseudo_classes"] == 5
