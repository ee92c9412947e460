import json

import numpy as np
import pytest

from sma.config import DESK, GRADCHECK, PAPER, Config, ConfigError, load_config
from sma.diagnostics import tiny_instance
from sma.features.synthetic import generate_dataset
from sma.model import CapacityError, SMAModel
from sma.numerics.container import ContainerError
from sma.training import (
    Trainer,
    checkpoint_bytes,
    content_hash,
    exact_match,
    load_checkpoint,
    read_loss_log,
    save_checkpoint,
    write_loss_log,
)
from sma.vocab import END, AnswerVocab, QuestionVocab, normalize, tokenize

SMALL = Config(d=8, k=2, heads=2, layers=1, L=4, n_max=8, m_max=8, batch_size=4, lr=1e-3)


class TestConfig:
    def test_presets(self):
        assert (DESK.d, DESK.layers, DESK.L, DESK.lr) == (64, 4, 12, 1e-4)
        assert (PAPER.d, PAPER.heads, PAPER.batch_size, PAPER.lr_milestones) == (768, 12, 96, (14000, 19000))
        assert (GRADCHECK.d, GRADCHECK.k, GRADCHECK.L, GRADCHECK.n_max, GRADCHECK.m_max) == (8, 2, 3, 3, 3)

    @pytest.mark.parametrize("bad", [{"d": 10, "heads": 4}, {"L": 0}, {"k": 0}, {"edge_roles": ("xx",)},
                                     {"lr": 0.0}, {"lr_milestones": (5, 2)}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            Config(**bad)

    def test_lr_schedule(self):
        cfg = Config(lr=1e-4, lr_milestones=(10, 20))
        assert cfg.lr_at(0) == 1e-4 and cfg.lr_at(9) == 1e-4
        assert cfg.lr_at(10) == pytest.approx(1e-5) and cfg.lr_at(25) == pytest.approx(1e-6)

    def test_json_round_trip(self, tmp_path):
        cfg = SMALL.with_(edge_roles=("oo", "tt"), lr_milestones=(3,))
        path = tmp_path / "c.json"
        path.write_text(cfg.to_json())
        assert load_config(path) == cfg

    def test_preset_key_and_env(self, tmp_path, monkeypatch):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"preset": "gradcheck", "seed": 4}))
        monkeypatch.setenv("SMA_CONFIG", str(path))
        assert load_config() == GRADCHECK.with_(seed=4)
        monkeypatch.delenv("SMA_CONFIG")
        assert load_config() == DESK
        assert load_config("paper") == PAPER

    @pytest.mark.parametrize("raw", ['{"bogus": 1}', '{"preset": "nope"}', "[1]", "{not json"])
    def test_bad_files(self, tmp_path, raw):
        path = tmp_path / "c.json"
        path.write_text(raw)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")


class TestVocab:
    def test_normalize_and_tokenize(self):
        assert normalize("  Hello   WORLD ") == "hello world"
        assert tokenize("What's on the sign?") == ["what's", "on", "the", "sign"]

    def test_question_vocab(self):
        v = QuestionVocab(["<pad>", "<unk>", "what", "sign"])
        assert v.encode("What sign zebra", t_max=5) == [2, 3, 1]
        assert v.encode("what sign what", t_max=2) == [2, 3]
        with pytest.raises(ValueError):
            v.encode("?!", t_max=3)
        with pytest.raises(ValueError):
            QuestionVocab(["what", "<pad>"])

    def test_answer_vocab_end_appended(self):
        v = AnswerVocab(["Yes", "no"])
        assert v.words == ["yes", "no", END] and v.end_id == 2
        assert v.lookup("YES") == 0 and v.lookup("maybe") is None
        with pytest.raises(ValueError):
            AnswerVocab(["yes", "YES"])

    def test_bundled_defaults(self):
        assert AnswerVocab.default().end_id == 0
        assert QuestionVocab.default().tokens[:2] == ["<pad>", "<unk>"]


class TestModelData:
    def test_capacity(self):
        model = SMAModel(SMALL.with_(n_max=2))
        with pytest.raises(CapacityError):
            model.prepare(tiny_instance(0, n=3, m=2))

    def test_batch_padding(self):
        model = SMAModel(SMALL)
        batch = model.batch([tiny_instance(0, n=3, m=3), tiny_instance(1, n=1, m=2)])
        V = len(model.avocab)
        assert batch.graph.obj_mask.tolist() == [[True] * 3, [True, False, False]]
        assert batch.col_mask[1, V:].tolist() == [True, True, False]
        assert batch.y.shape == (2, SMALL.L, V + 3)


class TestTraining:
    def test_batches_deterministic(self):
        model = SMAModel(SMALL)
        items = [model.prepare(i) for i in generate_dataset("to", 10, seed=0)]
        ids = []
        for _ in range(2):
            stream = Trainer(model).batches(items, seed=3)
            ids.append([[p.instance.id for p in next(stream).items] for _ in range(5)])
        assert ids[0] == ids[1]
        # one epoch covers distinct instances
        assert len({i for b in ids[0][:2] for i in b}) == 8

    def test_fit_reduces_loss_and_stops_early(self):
        data = generate_dataset("to", 8, seed=1)
        log = Trainer(SMAModel(SMALL.with_(batch_size=8))).fit(data, steps=30)
        assert len(log) == 30 and log[-1].loss < log[0].loss
        short = Trainer(SMAModel(SMALL)).fit(data, steps=30, on_step=lambda r: r.step == 4)
        assert len(short) == 4

    def test_zero_steps(self):
        assert Trainer(SMAModel(SMALL)).fit(generate_dataset("to", 2, seed=0), steps=0) == []

    def test_loss_log_round_trip(self, tmp_path):
        log = Trainer(SMAModel(SMALL)).fit(generate_dataset("tt", 4, seed=0), steps=3)
        write_loss_log(tmp_path / "l.tsv", log)
        back = read_loss_log(tmp_path / "l.tsv")
        assert [r.step for r in back] == [1, 2, 3]
        assert np.allclose([r.loss for r in back], [r.loss for r in log], rtol=1e-9)
        write_loss_log(tmp_path / "e.tsv", [])
        assert (tmp_path / "e.tsv").read_text() == "step\tloss\tlr\n"

    def test_exact_match_range(self):
        data = generate_dataset("ot", 4, seed=0)
        assert 0.0 <= exact_match(SMAModel(SMALL), data) <= 1.0


class TestCheckpoint:
    def test_save_load_save_same_hash(self, tmp_path):
        trainer = Trainer(SMAModel(SMALL))
        trainer.fit(generate_dataset("to", 4, seed=0), steps=2)
        h1 = save_checkpoint(tmp_path / "a.ckpt", trainer)
        assert h1 == content_hash(tmp_path / "a.ckpt")
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.step == 2 and back.opt.t == trainer.opt.t
        assert save_checkpoint(tmp_path / "b.ckpt", back) == h1

    @pytest.mark.parametrize("batch_size", [4, 3])
    def test_resume_matches_uninterrupted(self, tmp_path, batch_size):
        data = generate_dataset("to", 7, seed=0)
        cfg = SMALL.with_(batch_size=batch_size)
        straight = Trainer(SMAModel(cfg))
        straight.fit(data, steps=5)
        first = Trainer(SMAModel(cfg))
        first.fit(data, steps=3)
        save_checkpoint(tmp_path / "mid.ckpt", first)
        resumed = load_checkpoint(tmp_path / "mid.ckpt")
        resumed.fit(data, steps=2)
        for name, p in straight.model.params.items():
            assert np.array_equal(p.data, resumed.model.params[name].data)

    def test_identical_runs_identical_hash(self):
        data = generate_dataset("tt", 4, seed=2)
        blobs = []
        for _ in range(2):
            t = Trainer(SMAModel(SMALL))
            t.fit(data, steps=3)
            blobs.append(checkpoint_bytes(t))
        assert blobs[0] == blobs[1]

    def test_rejects_other_containers(self, tmp_path):
        from sma.numerics.container import save

        save(tmp_path / "x.bin", {"a": np.zeros(2)}, {"kind": "other"})
        with pytest.raises(ContainerError):
            load_checkpoint(tmp_path / "x.bin")
        (tmp_path / "junk.bin").write_bytes(b"nope")
        with pytest.raises(ContainerError):
            load_checkpoint(tmp_path / "junk.bin")
