import logging
import os

import numpy as np
import pytest

from frsnano.cli import main
from frsnano.config import SCHEMA, RunConfig
from frsnano.detector import FrsNano, load_model
from frsnano.metrics import parse_kv
from frsnano.verify import GradCase, gradcases
from frsnano.verify.suite import ORACLES

TINY_SETS = [
    "model.input_size=32", "model.widths=4,8,8", "data.size=32", "data.n_small=1",
    "data.n_occluded=0", "data.n_regular=1", "data.n_smoke=0", "train.batch_size=4",
]


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def sets(*extra):
    args = []
    for item in TINY_SETS + list(extra):
        args += ["--set", item]
    return args


def lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--seed", "5", "--out", str(root), *sets("data.count=20")]) == 0
    assert main(["split", str(root / "manifest.txt"), "--seed", "1", "--out", str(root)]) == 0
    return root


class TestSelftest:
    def test_passes_and_lists_each_op_once(self, capsys):
        rc, out, _ = run(capsys, "selftest", "--instances", "1")
        assert rc == 0
        ops = [ln.split()[1] for ln in out.splitlines() if ln.startswith(("PASS", "FAIL"))]
        assert sorted(ops) == sorted(list(gradcases.REGISTRY) + list(ORACLES))

    def test_wrong_vjp_fails_naming_op(self, capsys, monkeypatch):
        from frsnano.tensor import Tensor

        def bad_sigmoid(a):
            s = 1.0 / (1.0 + np.exp(-a.data))
            return Tensor(s, parents=(a,), vjp=lambda g: (g * s,))

        case = GradCase("bad_sigmoid", lambda rng: (bad_sigmoid, [rng.normal(size=3)]))
        monkeypatch.setitem(gradcases.REGISTRY, "bad_sigmoid", case)
        rc, out, err = run(capsys, "selftest", "--instances", "1")
        assert rc == 2
        assert "FAIL bad_sigmoid" in out and "first failing op bad_sigmoid" in err


class TestSynth:
    def test_empty(self, capsys, tmp_path):
        rc, _, _ = run(capsys, "synth", "--out", tmp_path, "--set", "data.count=0")
        assert rc == 0
        assert lines(tmp_path / "manifest.txt") == []
        assert (tmp_path / "config.txt").exists()

    def test_same_seed_same_bytes(self, capsys, tmp_path):
        for d in ("a", "b"):
            assert run(capsys, "synth", "--seed", 3, "--out", tmp_path / d, *sets("data.count=3"))[0] == 0
        files = sorted(os.path.relpath(os.path.join(dp, f), tmp_path / "a") for dp, _, fs in os.walk(tmp_path / "a") for f in fs)
        assert len(files) == 8
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_manifest_line_count(self, data_dir):
        assert len(lines(data_dir / "manifest.txt")) == 20
        assert len(os.listdir(data_dir / "images")) == 20

    def test_invalid_spec(self, capsys, tmp_path):
        assert run(capsys, "synth", "--out", tmp_path, "--set", "data.n_small=-1")[0] == 1


class TestSplitStats:
    def test_split_sizes(self, data_dir):
        sizes = [len(lines(data_dir / f"{n}.txt")) for n in ("train", "val", "test")]
        assert sizes == [16, 2, 2]

    def test_split_does_not_touch_input(self, capsys, data_dir, tmp_path):
        before = (data_dir / "manifest.txt").read_bytes()
        assert run(capsys, "split", data_dir / "manifest.txt", "--out", tmp_path)[0] == 0
        assert (data_dir / "manifest.txt").read_bytes() == before

    def test_stats(self, capsys, data_dir):
        rc, out, _ = run(capsys, "stats", data_dir / "manifest.txt")
        assert rc == 0
        assert "images 20" in out and "instances 40" in out

    def test_missing_manifest(self, capsys, tmp_path):
        assert run(capsys, "split", tmp_path / "nope.txt")[0] == 1


class TestTrain:
    def _train(self, capsys, data_dir, out, *extra):
        return run(
            capsys, "train", "--seed", 2, "--out", out,
            *sets(f"data.train={data_dir / 'train.txt'}", f"data.val={data_dir / 'val.txt'}",
                  "train.epochs=2", "model.use_mcea=true", "model.upsampler=dysample", *extra),
        )

    def test_deterministic_log_and_checkpoints(self, capsys, data_dir, tmp_path):
        for d in ("a", "b"):
            assert self._train(capsys, data_dir, tmp_path / d)[0] == 0
        log = lines(tmp_path / "a" / "loss_log.txt")
        assert len(log) == 2 and log[0].startswith("epoch=0 lr=0.01 loss=")
        for f in ("loss_log.txt", "last.ckpt", "best.ckpt", "config.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        cfg = RunConfig.load(str(tmp_path / "a" / "config.txt"))
        assert cfg["model.use_mcea"] is True and cfg["train.epochs"] == 2

    def test_interrupted_run_leaves_loadable_checkpoint(self, capsys, data_dir, tmp_path):
        assert self._train(capsys, data_dir, tmp_path, "train.max_steps=2")[0] == 0
        cfg = RunConfig.load(str(tmp_path / "config.txt"))
        load_model(str(tmp_path / "last.ckpt"), FrsNano(cfg.model()))

    def test_empty_branch_set_fails_before_work(self, capsys, data_dir, tmp_path):
        rc, _, err = self._train(capsys, data_dir, tmp_path / "x", "model.mcea_branches=")
        assert rc == 1 and "mcea_branches" in err
        assert not (tmp_path / "x").exists()

    def test_image_size_mismatch(self, capsys, data_dir, tmp_path):
        assert self._train(capsys, data_dir, tmp_path, "model.input_size=64")[0] == 1

    def test_overfit_preset(self, capsys, tmp_path):
        small = ["data.n_small=1", "data.n_occluded=0", "data.n_regular=1", "data.n_smoke=0"]
        args = [a for s in small + ["data.count=4"] for a in ("--set", s)]
        assert run(capsys, "synth", "--seed", 11, "--out", tmp_path / "d", *args)[0] == 0
        preset = tmp_path / "overfit.cfg"
        preset.write_text(
            "# sanity overfit: 4 images, full batch, constant rate\n"
            f"data.train = {tmp_path / 'd' / 'manifest.txt'}\n"
            "model.use_mcea = true\n"
            "train.epochs = 200\ntrain.batch_size = 4\ntrain.lrf = 1.0\n"
        )
        assert run(capsys, "train", "--config", preset, "--out", tmp_path / "run")[0] == 0
        losses = [float(ln.split("loss=")[1].split()[0]) for ln in lines(tmp_path / "run" / "loss_log.txt")]
        assert len(losses) == 200
        assert losses[-1] < 0.1 * losses[0]


class TestEval:
    def test_labels_preset_scores_one(self, capsys, data_dir, tmp_path):
        rc, out, _ = run(capsys, "eval", "--manifest", data_dir / "val.txt", "--out", tmp_path,
                         "--set", "eval.preset=labels")
        assert rc == 0
        kv = parse_kv((tmp_path / "report.txt").read_text())
        for m in ("mAP50", "mAP50-95", "precision", "recall"):
            assert kv[("all", m)] == 1.0
        assert "all" in out and (tmp_path / "report_table.txt").exists()

    def test_empty_set(self, capsys, tmp_path):
        (tmp_path / "empty.txt").write_text("")
        rc, _, err = run(capsys, "eval", "--manifest", tmp_path / "empty.txt", "--set", "eval.preset=labels")
        assert rc == 1 and "empty" in err

    def test_checkpoint_report_round_trip(self, capsys, data_dir, tmp_path):
        common = sets(f"data.train={data_dir / 'train.txt'}", "train.epochs=1")
        assert run(capsys, "train", "--out", tmp_path / "t", *common)[0] == 0
        for d in ("e1", "e2"):
            rc, _, _ = run(capsys, "eval", "--checkpoint", tmp_path / "t" / "last.ckpt",
                           "--manifest", data_dir / "val.txt", "--out", tmp_path / d, *common)
            assert rc == 0
        text = (tmp_path / "e1" / "report.txt").read_text()
        assert text == (tmp_path / "e2" / "report.txt").read_text()
        kv = parse_kv(text)
        assert 0.0 <= kv[("all", "mAP50")] <= 1.0
        assert any(metric == "AP95" for _, metric in kv)

    def test_mismatched_checkpoint(self, capsys, data_dir, tmp_path):
        assert run(capsys, "train", "--out", tmp_path, *sets(f"data.train={data_dir / 'train.txt'}", "train.max_steps=1"))[0] == 0
        rc, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "last.ckpt", "--manifest", data_dir / "val.txt",
                         *sets("model.use_mcea=true"))
        assert rc == 1 and "stage1.mcea.width.kernel" in err


class TestAblate:
    def _common(self, data_dir):
        return sets(f"data.train={data_dir / 'train.txt'}", f"data.val={data_dir / 'val.txt'}", "train.epochs=1")

    def test_table_and_baseline_matches_train(self, capsys, data_dir, tmp_path):
        rc, out, _ = run(capsys, "ablate", "--seeds", "0,1", "--out", tmp_path / "abl", *self._common(data_dir))
        assert rc == 0
        table = lines(tmp_path / "abl" / "ablation.txt")
        assert [row.split("\t")[0] for row in table[1:]] == ["baseline", "+MCEA", "+DySample", "+MCEA+DySample"]
        assert all(len(row.split("\t")) == 1 + 4 + 1 + 2 for row in table)
        assert table[1].split("\t")[5] == "+0.00000"
        baseline_s0 = next(ln for ln in out.splitlines() if ln.startswith("baseline seed=0"))

        common = self._common(data_dir) + ["--seed", "0"]
        assert run(capsys, "train", "--out", tmp_path / "t", *common)[0] == 0
        assert run(capsys, "eval", "--checkpoint", tmp_path / "t" / "last.ckpt", "--manifest", data_dir / "val.txt",
                   "--out", tmp_path / "e", *common)[0] == 0
        kv = parse_kv((tmp_path / "e" / "report.txt").read_text())
        assert baseline_s0 == f"baseline seed=0 mAP50={kv[('all', 'mAP50')]!r} mAP50-95={kv[('all', 'mAP50-95')]!r}"

    def test_single_seed_warns(self, capsys, caplog, data_dir, tmp_path):
        with caplog.at_level(logging.WARNING, logger="frsnano"):
            rc, _, _ = run(capsys, "ablate", "--seeds", "0", "--variants", "baseline", "--out", tmp_path,
                           *self._common(data_dir))
        assert rc == 0
        assert any("fewer than 2 seeds" in r.getMessage() for r in caplog.records)

    def test_unknown_variant(self, capsys, data_dir, tmp_path):
        assert run(capsys, "ablate", "--variants", "+Nope", "--out", tmp_path, *self._common(data_dir))[0] == 1


class TestConfig:
    def test_unknown_key_in_file(self, capsys, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("model.colour = red\n")
        rc, _, err = run(capsys, "synth", "--config", cfg, "--out", tmp_path)
        assert rc == 1 and "c.cfg:1" in err and "model.colour" in err

    def test_unknown_override(self, capsys):
        assert run(capsys, "synth", "--set", "nope.key=1")[0] == 1

    def test_bad_value(self, capsys):
        assert run(capsys, "synth", "--set", "train.epochs=many")[0] == 1

    def test_unknown_command(self, capsys):
        assert run(capsys, "frobnicate")[0] == 1

    def test_echo_round_trips(self):
        cfg = RunConfig.load(None, ["model.use_mcea=true", "train.lr0=0.02", "model.mcea_branches=width,channel"], 4)
        again = RunConfig()
        for line in cfg.to_text().splitlines()[1:]:
            key, value = (p.strip() for p in line.split("=", 1))
            again.values[key] = SCHEMA[key][0](value)
        assert again.values == cfg.values
