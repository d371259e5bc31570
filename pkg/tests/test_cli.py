import subprocess
import sys

import numpy as np
import pytest

import move_vlt.trainer as trainer_mod
from move_vlt.cli import main
from move_vlt.dataset import DatasetManifest, parse_kv, read_features

SMALL = ["--classes", "5", "--nmax", "12", "--mu", "0.25", "--frames", "5", "--dim", "8",
         "--test-per-class", "3"]


def small_config(tmp_path, **extra):
    values = dict(epochs=2, lr_decay_epoch=1, clusters=3, proj_dim=4, heads=2, batch_size=8)
    values.update(extra)
    path = tmp_path / "cfg.txt"
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
    return str(path)


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", *SMALL, "--seed", "3", "--out", str(out)]) == 0
    return out


def test_gen_data_outputs(data_dir):
    manifest = DatasetManifest.read(data_dir / "manifest.txt")
    assert manifest.counts == [12, 8, 6, 4, 3]
    train = read_features(data_dir / "train.mvft")
    test = read_features(data_dir / "test.mvft")
    np.testing.assert_array_equal(train.class_counts(), manifest.counts)
    np.testing.assert_array_equal(test.class_counts(), 3)
    run = parse_kv((data_dir / "run.txt").read_text())
    assert run["command"] == "gen-data" and run["seed"] == "3" and run["sep"] == "2.5"


def test_gen_data_balanced_and_large_scale_counts(tmp_path):
    assert main(["gen-data", "--classes", "4", "--nmax", "6", "--mu", "1.0", "--frames", "2", "--dim", "2",
                 "--out", str(tmp_path / "a")]) == 0
    assert DatasetManifest.read(tmp_path / "a" / "manifest.txt").counts == [6, 6, 6, 6]
    assert main(["gen-data", "--classes", "200", "--nmax", "400", "--mu", "0.01", "--frames", "1",
                 "--dim", "2", "--test-per-class", "1", "--out", str(tmp_path / "b")]) == 0
    counts = DatasetManifest.read(tmp_path / "b" / "manifest.txt").counts
    assert counts[0] == 400 and counts[-1] == 4


def test_gen_data_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", *SMALL, "--seed", "9", "--out", str(tmp_path / name)]) == 0
    for f in ("train.mvft", "test.mvft", "manifest.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_bad_flags_exit_2(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["gen-data", "--classes", "x", "--out", str(tmp_path)])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["train", "--data", str(tmp_path), "--out", str(tmp_path), "--no-move", "--no-interpolation"])
    assert err.value.code == 2
    assert main(["gen-data", "--mu", "1.5", "--out", str(tmp_path / "x")]) == 2


def test_missing_data_exit_3(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3


def test_corrupt_data_exit_3(data_dir, tmp_path):
    (data_dir / "train.mvft").write_bytes(b"MVFT\x01")
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path / "o")]) == 3


def test_bad_config_exit_2(data_dir, tmp_path):
    cfg = small_config(tmp_path, bogus=1)
    assert main(["train", "--data", str(data_dir), "--config", cfg, "--out", str(tmp_path / "o")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_exit_4(data_dir, tmp_path, monkeypatch):
    original = trainer_mod.bce_with_logits
    monkeypatch.setattr(trainer_mod, "bce_with_logits", lambda l, t: original(l, t) * float("inf"))
    assert main(["train", "--data", str(data_dir), "--config", small_config(tmp_path),
                 "--out", str(tmp_path / "o")]) == 4


def test_train_is_reproducible_and_leaves_inputs(data_dir, tmp_path):
    before = {p.name: p.read_bytes() for p in data_dir.iterdir()}
    cfg = small_config(tmp_path)
    for name in ("r1", "r2"):
        assert main(["train", "--data", str(data_dir), "--config", cfg, "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "r1" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "r2" / "metrics.csv").read_bytes()
    assert len(a.decode().splitlines()) == 3
    assert {p.name: p.read_bytes() for p in data_dir.iterdir()} == before
    run = parse_kv((tmp_path / "r1" / "run.txt").read_text())
    assert run["epochs"] == "2" and run["alpha"] == "2.0" and run["move_enabled"] == "true"


def test_run_manifest_reproduces_run(data_dir, tmp_path):
    assert main(["train", "--data", str(data_dir), "--config", small_config(tmp_path), "--seed", "5",
                 "--no-interpolation", "--out", str(tmp_path / "r1")]) == 0
    # config.txt echoes the fully resolved config; it alone reproduces the run
    config_only = tmp_path / "again.txt"
    kv = parse_kv((tmp_path / "r1" / "config.txt").read_text())
    config_only.write_text("".join(f"{k}={v}\n" for k, v in kv.items() if k not in ("C", "S")))
    assert main(["train", "--data", str(data_dir), "--config", str(config_only),
                 "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1" / "metrics.csv").read_bytes() == (tmp_path / "r2" / "metrics.csv").read_bytes()
    assert kv["seed"] == "5" and kv["interpolation_enabled"] == "false"


def test_ablate_table(data_dir, tmp_path):
    cfg = small_config(tmp_path)
    assert main(["ablate", "--data", str(data_dir), "--config", cfg, "--out", str(tmp_path / "a1")]) == 0
    lines = (tmp_path / "a1" / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("row,extrapolation,interpolation,config_hash,status")
    assert [l.split(",")[:3] for l in lines[1:]] == [
        ["d", "false", "false"], ["e", "true", "false"], ["f", "false", "true"], ["g", "true", "true"],
    ]
    hashes = [l.split(",")[3] for l in lines[1:]]
    assert len(set(hashes)) == 4 and all(len(h) == 16 for h in hashes)
    assert all(l.split(",")[4] == "ok" for l in lines[1:])
    for row in "defg":
        assert (tmp_path / "a1" / f"row_{row}" / "model.movp").exists()
    assert main(["ablate", "--data", str(data_dir), "--config", cfg, "--out", str(tmp_path / "a2")]) == 0
    assert (tmp_path / "a1" / "ablation.csv").read_bytes() == (tmp_path / "a2" / "ablation.csv").read_bytes()


def test_ablate_parallel_matches_serial(data_dir, tmp_path, monkeypatch):
    cfg = small_config(tmp_path)
    assert main(["ablate", "--data", str(data_dir), "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    monkeypatch.setenv("MOVE_THREADS", "2")
    assert main(["ablate", "--data", str(data_dir), "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "s" / "ablation.csv").read_bytes() == (tmp_path / "p" / "ablation.csv").read_bytes()


def test_eval_and_diagnostics(data_dir, tmp_path):
    model = tmp_path / "m"
    assert main(["train", "--data", str(data_dir), "--config", small_config(tmp_path), "--out", str(model)]) == 0
    assert main(["eval", "--data", str(data_dir), "--model", str(model), "--out", str(tmp_path / "e")]) == 0
    metrics = (tmp_path / "e" / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "mAP_all,mAP_head,mAP_medium,mAP_tail,top1,top5"
    # evaluating the saved checkpoint matches the last logged epoch up to float32 storage
    logged = (model / "metrics.csv").read_text().splitlines()[-1].split(",")[3:]
    np.testing.assert_allclose([float(v) for v in metrics[1].split(",")], [float(v) for v in logged], atol=0.02)
    per_class = (tmp_path / "e" / "per_class.csv").read_text().splitlines()
    assert per_class[0] == "class,count,group,ap" and len(per_class) == 6

    assert main(["diag-attention", "--data", str(data_dir), "--model", str(model), "--limit", "2",
                 "--out", str(tmp_path / "da")]) == 0
    att = (tmp_path / "da" / "attention.csv").read_text().splitlines()
    assert att[0] == "video_id,frame,head,score" and len(att) == 1 + 2 * 2 * 5
    rho = (tmp_path / "da" / "assignments.csv").read_text().splitlines()
    assert rho[0] == "video_id,frame,cluster,rho" and len(rho) == 1 + 2 * 5 * 3
    masks = (tmp_path / "da" / "masks.csv").read_text().splitlines()
    assert masks[1].startswith("v000000,") and len(masks[1].split(",")[1]) == 5

    assert main(["diag-confidence", "--data", str(data_dir), "--model", str(model), "--draws", "20",
                 "--out", str(tmp_path / "dc")]) == 0
    conf = (tmp_path / "dc" / "confidence.csv").read_text().splitlines()
    assert conf[0] == "class,tau,conf_original,conf_interp,normalized_diff" and len(conf) == 6


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "move_vlt", "gen-data", *SMALL, "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "train" in proc.stdout
