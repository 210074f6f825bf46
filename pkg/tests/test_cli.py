"""CLI pipeline tests: synth -> train -> eval reproducibility, fixtures, errors."""

import hashlib
import json
import os

import numpy as np
import pytest

from salgen import cli
from salgen import data as D


TINY_MODEL = {"image_size": 8, "patch_size": 1, "stage_channels": [4, 8, 16, 32],
              "depths": [1, 1, 1, 1], "num_heads": [1, 2, 4, 8], "window_size": 2,
              "latent_dim": 4, "cvae_hidden": 8}


def write_train_config(path, **kw):
    payload = {"head": "deterministic", "regime": "rgb_full", "epochs": 2,
               "batch_size": 2, "learning_rate": 1e-3, "seed": 1,
               "model": TINY_MODEL}
    payload.update(kw)
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return str(path)


def tree_hash(root):
    digest = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            full = os.path.join(dirpath, name)
            digest.update(name.encode())
            digest.update(open(full, "rb").read())
    return digest.hexdigest()


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "ds"
    rc = cli.main(["synth", "--out", str(out), "--seed", "7",
                   "--set", "count=4", "--set", "size=8",
                   "--set", "with_depth=true", "--set", "with_scribble=true"])
    assert rc == 0
    return out


class TestSynth:
    def test_writes_manifest_and_run_files(self, synth_dir):
        assert (synth_dir / "manifest.json").exists()
        assert (synth_dir / "run_manifest.json").exists()
        manifest = json.loads((synth_dir / "run_manifest.json").read_text())
        assert manifest["command"] == "synth" and manifest["seed"] == 7
        assert len(D.load_dataset(synth_dir / "manifest.json")) == 4

    def test_same_seed_same_bytes(self, tmp_path):
        for out in ("a", "b"):
            cli.main(["synth", "--out", str(tmp_path / out), "--seed", "3",
                      "--set", "count=2", "--set", "size=8"])
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")

    def test_unknown_option_rejected(self, tmp_path):
        rc = cli.main(["synth", "--out", str(tmp_path / "x"), "--set", "sizes=8"])
        assert rc == 2


class TestTrainEvalPipeline:
    def test_pipeline_reproducible(self, tmp_path, synth_dir):
        cfg = write_train_config(tmp_path / "cfg.json")
        data = str(synth_dir / "manifest.json")
        reports = []
        for run in ("r1", "r2"):
            out = tmp_path / run
            assert cli.main(["train", "--config", cfg, "--data", data,
                             "--out", str(out)]) == 0
            ev = tmp_path / f"{run}_eval"
            assert cli.main(["eval", "--config", str(out / "config.json"),
                             "--checkpoint", str(out / "checkpoint.bin"),
                             "--data", data, "--out", str(ev)]) == 0
            reports.append((ev / "metrics.jsonl").read_bytes())
        assert reports[0] == reports[1]

    def test_eval_rerun_byte_identical(self, tmp_path, synth_dir):
        cfg = write_train_config(tmp_path / "cfg.json")
        data = str(synth_dir / "manifest.json")
        out = tmp_path / "run"
        cli.main(["train", "--config", cfg, "--data", data, "--out", str(out)])
        blobs = []
        for ev in ("e1", "e2"):
            cli.main(["eval", "--config", str(out / "config.json"),
                      "--checkpoint", str(out / "checkpoint.bin"),
                      "--data", data, "--out", str(tmp_path / ev)])
            blobs.append((tmp_path / ev / "metrics.jsonl").read_bytes())
        assert blobs[0] == blobs[1]

    def test_commands_never_mutate_dataset(self, tmp_path, synth_dir):
        before = tree_hash(synth_dir)
        cfg = write_train_config(tmp_path / "cfg.json")
        data = str(synth_dir / "manifest.json")
        out = tmp_path / "run"
        cli.main(["train", "--config", cfg, "--data", data, "--out", str(out)])
        cli.main(["eval", "--config", str(out / "config.json"),
                  "--checkpoint", str(out / "checkpoint.bin"),
                  "--data", data, "--out", str(tmp_path / "ev")])
        cli.main(["analyze-contrast", "--data", data, "--out", str(tmp_path / "ct"),
                  "--set", "modality=both"])
        assert tree_hash(synth_dir) == before

    def test_invalid_config_key_rejected_before_side_effects(self, tmp_path, synth_dir):
        cfg = write_train_config(tmp_path / "cfg.json")
        out = tmp_path / "never"
        rc = cli.main(["train", "--config", cfg, "--data",
                       str(synth_dir / "manifest.json"), "--out", str(out),
                       "--set", "learning_rat=0.1"])
        assert rc == 2
        assert not out.exists()

    def test_resume_from_checkpoint(self, tmp_path, synth_dir):
        cfg = write_train_config(tmp_path / "cfg.json")
        data = str(synth_dir / "manifest.json")
        first = tmp_path / "first"
        cli.main(["train", "--config", cfg, "--data", data, "--out", str(first)])
        second = tmp_path / "second"
        rc = cli.main(["train", "--config", cfg, "--data", data, "--out", str(second),
                       "--init-checkpoint", str(first / "checkpoint.bin")])
        assert rc == 0


class TestPerfectFixture:
    def test_eval_identity_fixture_scores_zero_mae(self, tmp_path):
        # all-foreground dataset plus a head pinned at logit 40:
        # sigmoid(40) == 1.0 exactly in both precisions, so MAE is exactly 0
        samples = []
        rng = np.random.default_rng(0)
        for i in range(2):
            samples.append(D.Sample(image=np.rint(rng.random((8, 8, 3)) * 255) / 255,
                                    gt=np.ones((8, 8)), id=f"fix{i}"))
        manifest = D.save_dataset(tmp_path / "ds", samples)

        cfg = write_train_config(tmp_path / "cfg.json", epochs=1)
        out = tmp_path / "run"
        cli.main(["train", "--config", cfg, "--data", manifest, "--out", str(out)])

        from salgen.nets import load_checkpoint, save_checkpoint
        weights = load_checkpoint(out / "checkpoint.bin")
        weights["dec_sal.head.w"] = np.zeros_like(weights["dec_sal.head.w"])
        weights["dec_sal.head.b"] = np.full_like(weights["dec_sal.head.b"], 40.0)
        save_checkpoint(out / "fixture.bin", weights)

        ev = tmp_path / "ev"
        assert cli.main(["eval", "--config", str(out / "config.json"),
                         "--checkpoint", str(out / "fixture.bin"),
                         "--data", manifest, "--out", str(ev)]) == 0
        summary = json.loads(
            (ev / "metrics.jsonl").read_text().strip().splitlines()[-1])
        assert summary["mae"] == 0.0
        assert summary["s_alpha"] == 1.0 and summary["e_xi"] == 1.0


class TestUncertaintyCommand:
    def test_writes_mean_and_entropy_maps(self, tmp_path, synth_dir):
        cfg = write_train_config(tmp_path / "cfg.json", head="gan")
        data = str(synth_dir / "manifest.json")
        out = tmp_path / "run"
        cli.main(["train", "--config", cfg, "--data", data, "--out", str(out)])
        unc = tmp_path / "unc"
        rc = cli.main(["uncertainty", "--config", str(out / "config.json"),
                       "--checkpoint", str(out / "checkpoint.bin"),
                       "--data", data, "--out", str(unc), "--set", "n_samples=3"])
        assert rc == 0
        entropies = sorted(p.name for p in unc.glob("*_entropy.png"))
        means = sorted(p.name for p in unc.glob("*_mean.png"))
        assert len(entropies) == 4 and len(means) == 4


class TestSelftestCommand:
    def test_exit_zero_on_clean_tree(self):
        assert cli.main(["selftest"]) == 0
