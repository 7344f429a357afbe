"""Config parsing, checkpoint format and the command-line workflow."""

import json
import struct

import numpy as np
import pytest

from stfm import checkpoint
from stfm.cli import main
from stfm.config import ConfigError, RunConfig, load, parse
from stfm.data import BOS, EOS
from stfm.training import Trainer, TrainingConfig
from stfm.workflow import batched_transfer, load_for_inference, prepare_data, train_run

from conftest import tiny_config
from test_training import toy_corpora

SMALL = """\
# tiny synthetic run
synthetic = true
synthetic_train = 40
synthetic_dev = 6
synthetic_test = 6
num_layers = 1
model_dim = 8
ff_dim = 16
max_len = 16
batch_size = 4
max_iters = 4
eval_every = 2
lm_order = 3
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL + f"out_dir = {tmp_path / 'run'}\n", encoding="utf-8")
    return path


class TestConfig:
    def test_parse_types_and_comments(self):
        cfg = parse("synthetic = yes\nmodel_dim = 32  # inline\nstyles = a, b\nlr = 0.01\n\nvariant = conditional\n")
        assert cfg.synthetic and cfg.model_dim == 32 and cfg.styles == ("a", "b")
        assert cfg.training.lr == 0.01 and cfg.training.variant == "conditional"

    @pytest.mark.parametrize(
        "text, msg",
        [
            ("synthetic = true\nmodel_dim = big\n", "model_dim: expected an integer"),
            ("synthetic = true\nbogus = 1\n", "unknown config key 'bogus'"),
            ("synthetic = true\nno equals sign\n", ":2: expected 'key = value'"),
            ("synthetic = true\nseed = 1\nseed = 2\n", "duplicate key 'seed'"),
            ("synthetic = maybe\n", "synthetic: expected a boolean"),
            ("model_dim = 8\n", "data_dir: required"),
            ("synthetic = true\nword_dropout = 1.5\n", "word_dropout"),
            ("synthetic = true\nvariant = binary\n", "variant"),
        ],
    )
    def test_field_level_errors(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse(text, "x.cfg")

    def test_dumps_round_trip(self):
        cfg = parse("synthetic = true\ndisable_cycle = true\nstyles = p,n\n")
        again = parse(cfg.dumps())
        assert again == cfg

    def test_replace_and_unknown(self):
        cfg = RunConfig(synthetic=True)
        assert cfg.replace(seed=3, model_dim=16).training.seed == 3
        with pytest.raises(ConfigError, match="unknown"):
            cfg.replace(nope=1)

    def test_style_ids_follow_declared_order(self):
        cfg = RunConfig(synthetic=True, styles=("neg", "pos"))
        assert (cfg.style_id("neg"), cfg.style_id("pos")) == (1, 2)
        with pytest.raises(ConfigError, match="unknown style"):
            cfg.style_id("neutral")

    def test_default_variant_is_multiclass(self):
        assert RunConfig(synthetic=True).training.variant == "multiclass"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load(tmp_path / "none.cfg")


class TestCheckpoint:
    def trainer(self):
        tr = Trainer(tiny_config(), TrainingConfig(batch_size=4), toy_corpora())
        tr.step()
        return tr

    def test_round_trip_is_lossless(self, tmp_path):
        tr = self.trainer()
        meta, tensors = checkpoint.trainer_state(tr)
        blob = checkpoint.encode(meta, tensors)
        meta2, tensors2 = checkpoint.decode(blob)
        assert checkpoint.encode(meta2, tensors2) == blob
        for k in tensors:
            assert tensors2[k].tobytes() == np.asarray(tensors[k], dtype="<f8").tobytes()

    def test_layout(self):
        blob = checkpoint.encode({"a": 1}, {"w": np.arange(6.0).reshape(2, 3)})
        assert blob[:4] == b"STFM" and struct.unpack("<I", blob[4:8])[0] == checkpoint.VERSION
        assert blob.endswith(np.arange(6.0).astype("<f8").tobytes())

    @pytest.mark.parametrize(
        "mutate, msg",
        [
            (lambda b: b"XXXX" + b[4:], "magic"),
            (lambda b: b[:4] + struct.pack("<I", 99) + b[8:], "version 99"),
            (lambda b: b[:-3], "truncated"),
            (lambda b: b + b"\0", "trailing"),
        ],
    )
    def test_rejects_corruption(self, mutate, msg):
        blob = checkpoint.encode({}, {"w": np.ones(3)})
        with pytest.raises(checkpoint.CheckpointError, match=msg):
            checkpoint.decode(mutate(blob))

    def test_resume_is_bitwise_faithful(self, tmp_path):
        a = self.trainer()
        checkpoint.save_trainer(tmp_path / "c.stfm", a)
        b, _ = checkpoint.load_trainer(tmp_path / "c.stfm", toy_corpora())
        for _ in range(2):
            ra, rb = a.step(), b.step()
            assert ra == rb
        for k in a.gen.params:
            np.testing.assert_array_equal(a.gen.params[k].data, b.gen.params[k].data)


class TestWorkflow:
    def test_threaded_transfer_matches_serial(self, monkeypatch):
        from stfm.generator import StyleTransformer

        gen = StyleTransformer(tiny_config(), 0)
        sents = [(BOS, *[4 + i % 4] * (1 + i % 5), EOS) for i in range(30)]
        targets = [1 + i % 2 for i in range(30)]
        monkeypatch.setenv("STFM_THREADS", "1")
        serial = batched_transfer(gen, sents, targets, batch_size=4)
        monkeypatch.setenv("STFM_THREADS", "3")
        assert batched_transfer(gen, sents, targets, batch_size=4) == serial
        assert serial == [gen.transfer_greedy([s], t)[0] for s, t in zip(sents, targets)]

    def test_bad_thread_count(self, monkeypatch):
        monkeypatch.setenv("STFM_THREADS", "zero")
        with pytest.raises(ConfigError, match="STFM_THREADS"):
            batched_transfer(None, [(BOS, EOS)], [1])

    def test_resume_reproduces_log(self, small_cfg, tmp_path):
        cfg = load(small_cfg)
        train_run(cfg, tmp_path / "a")
        full = (tmp_path / "a" / "log.jsonl").read_text()
        train_run(cfg.replace(max_iters=2), tmp_path / "b")
        train_run(cfg, tmp_path / "b", resume=tmp_path / "b" / "checkpoint.stfm")
        assert (tmp_path / "b" / "log.jsonl").read_text() == full
        a = checkpoint.read(tmp_path / "a" / "checkpoint.stfm")[1]
        b = checkpoint.read(tmp_path / "b" / "checkpoint.stfm")[1]
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        recs = [json.loads(x) for x in full.splitlines()]
        assert [r["iteration"] for r in recs] == [1, 2, 3, 4] and "dev_acc" in recs[1]


class TestCommands:
    def test_synth_train_transfer_eval(self, tmp_path, small_cfg, capsys):
        data = tmp_path / "data"
        assert main(["synth", "--out", str(data), "--train-size", "40", "--dev-size", "6", "--test-size", "6"]) == 0
        cfg_path = tmp_path / "files.cfg"
        cfg_path.write_text(
            SMALL.replace("synthetic = true", f"data_dir = {data}") + f"out_dir = {tmp_path / 'r'}\n", encoding="utf-8"
        )
        assert main(["train", "--config", str(cfg_path), "--seed", "1"]) == 0
        ckpt = tmp_path / "r" / "checkpoint.stfm"
        assert ckpt.exists() and (tmp_path / "r" / "best.stfm").exists()

        out = tmp_path / "out.txt"
        src = data / "positive.test.txt"
        assert main(["transfer", "--checkpoint", str(ckpt), "--input", str(src), "--style", "negative", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == len(src.read_text().splitlines())

        capsys.readouterr()
        assert main(["eval", "--config", str(cfg_path), "--checkpoint", str(ckpt), "--out", str(tmp_path / "r.json")]) == 0
        text = capsys.readouterr().out
        assert "accuracy=" in text and "self_bleu=" in text and "oracle_acc=" in text
        assert "perplexity" in json.loads((tmp_path / "r.json").read_text())

        # copied inputs score self-BLEU 100
        assert main(["eval", "--config", str(cfg_path), "--outputs", str(src), "--input", str(src), "--style", "negative"]) == 0
        assert "self_bleu=100.0000" in capsys.readouterr().out

        gen, vocab, styles, _ = load_for_inference(ckpt)
        assert styles == ["positive", "negative"] and len(vocab) == gen.cfg.vocab_size

    def test_ablate_rows(self, small_cfg, tmp_path, capsys):
        assert main(["ablate", "--config", str(small_cfg), "--iters", "2", "--rows", "full,disable_style", "--out", str(tmp_path / "abl")]) == 0
        table = (tmp_path / "abl" / "ablation.tsv").read_text().splitlines()
        assert table[0].startswith("row\taccuracy") and [r.split("\t")[0] for r in table[1:]] == ["full", "disable_style"]
        cfg = (tmp_path / "abl" / "disable_style" / "config.cfg").read_text()
        assert "disable_style = true" in cfg

    @pytest.mark.parametrize(
        "argv, code, msg",
        [
            (["train"], 2, "--config"),
            (["frobnicate"], 2, "invalid choice"),
            (["train", "--config", "/nonexistent.cfg"], 2, "cannot read config"),
            (["transfer", "--checkpoint", "/nonexistent.stfm", "--input", "x", "--style", "a", "--out", "y"], 2, "cannot read checkpoint"),
            (["synth", "--out", "/tmp/x", "--styles", "one"], 2, "--styles"),
        ],
    )
    def test_errors_are_single_line(self, argv, code, msg, capsys):
        assert main(argv) == code
        err = capsys.readouterr().err
        assert err.startswith("error: ") and msg in err and err.count("\n") == 1

    def test_bad_style_and_version_mismatch(self, tmp_path, small_cfg, capsys):
        cfg = load(small_cfg)
        train_run(cfg.replace(max_iters=2), tmp_path / "r")
        ckpt = tmp_path / "r" / "checkpoint.stfm"
        src = tmp_path / "in.txt"
        src.write_text("the pizza was good\n")
        assert main(["transfer", "--checkpoint", str(ckpt), "--input", str(src), "--style", "angry", "--out", str(tmp_path / "o")]) == 2
        assert "unknown style" in capsys.readouterr().err
        blob = bytearray(ckpt.read_bytes())
        blob[4:8] = struct.pack("<I", 7)
        ckpt.write_bytes(bytes(blob))
        assert main(["transfer", "--checkpoint", str(ckpt), "--input", str(src), "--style", "negative", "--out", str(tmp_path / "o")]) == 2
        assert "version 7" in capsys.readouterr().err

    def test_prepare_data_rejects_missing_dir(self):
        with pytest.raises(ConfigError, match="not a directory"):
            prepare_data(RunConfig(data_dir="/nonexistent/dir"))
