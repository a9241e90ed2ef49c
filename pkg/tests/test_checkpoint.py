"""Checkpoint binary format: round trips and corruption handling."""

import struct

import numpy as np
import pytest

from synfield.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from synfield.errors import CheckpointFormatError
from synfield.optim import AdamState, TrainConfig, adam_step, train
from synfield import data as datalib


def fresh(cfg=None):
    cfg = cfg or TrainConfig(mode="static3d", channels=2, initial_res=8,
                             final_res=8, width=16, total_iters=10,
                             batch_size=32, n_samples=4, dtype="float32")
    model = cfg.build_model()
    adam = AdamState.init(model.parameters())
    return model, adam, cfg


class TestRoundTrip:
    def test_fresh_model_bit_identical(self, tmp_path):
        model, adam, cfg = fresh()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, adam, 0, cfg)
        ck = load_checkpoint(path)
        assert ck.iteration == 0
        for name, p in model.parameters().items():
            assert np.array_equal(ck.model.parameters()[name], p), name
            assert ck.model.parameters()[name].dtype == p.dtype
        assert ck.config.to_dict() == cfg.to_dict()

    def test_adam_state_round_trip(self, tmp_path):
        model, adam, cfg = fresh()
        params = model.parameters()
        grads = {k: np.ones_like(v) for k, v in params.items()}
        adam_step(params, grads, adam, 0.02, 0.001)
        save_checkpoint(tmp_path / "m.ckpt", model, adam, 3, cfg)
        ck = load_checkpoint(tmp_path / "m.ckpt")
        for name in params:
            assert np.array_equal(ck.adam.m[name], adam.m[name])
            assert np.array_equal(ck.adam.v[name], adam.v[name])
            assert ck.adam.steps[name] == adam.steps[name]

    def test_dynamic_mode_round_trip(self, tmp_path):
        cfg = TrainConfig(mode="dynamic4d", channels=2, initial_res=8,
                          final_res=8, time_res=5, width=16, dtype="float32")
        model = cfg.build_model()
        save_checkpoint(tmp_path / "m.ckpt", model, None, 7, cfg)
        ck = load_checkpoint(tmp_path / "m.ckpt")
        assert ck.model.mode == "dynamic4d"
        assert ck.model.planes.time_res == 5
        assert ck.adam is None

    def test_large_seed_survives(self, tmp_path):
        # integers beyond float32 exactness must round-trip via the meta record
        model, adam, cfg = fresh(TrainConfig(channels=2, initial_res=8,
                                             final_res=8, width=16,
                                             seed=19870929, dtype="float32"))
        save_checkpoint(tmp_path / "m.ckpt", model, adam, 1, cfg)
        assert load_checkpoint(tmp_path / "m.ckpt").config.seed == 19870929


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "m.ckpt"
        p.write_bytes(MAGIC + struct.pack("<I", 999))
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(p)

    def test_truncation_reports_offset(self, tmp_path):
        model, adam, cfg = fresh()
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model, adam, 0, cfg)
        data = p.read_bytes()
        p.write_bytes(data[:len(data) // 2])
        with pytest.raises(CheckpointFormatError, match="offset") as e:
            load_checkpoint(p)
        assert e.value.offset is not None

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_truncated_leaves_no_partial_model(self, tmp_path):
        model, adam, cfg = fresh()
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model, adam, 0, cfg)
        p.write_bytes(p.read_bytes()[:40])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(p)


class TestResume:
    def test_resume_matches_uninterrupted(self, tmp_path):
        ds = datalib.make_scene_dataset(datalib.three_sphere_scene(), 2,
                                        size=12, n_samples=48)
        cfg = TrainConfig(mode="static3d", channels=2, initial_res=8,
                          final_res=10, width=16, total_iters=24, batch_size=32,
                          n_samples=6, upsample_steps=[(12, 10)],
                          eval_every=6, log_every=6, seed=3, dtype="float32")

        # uninterrupted run
        m_full, _, h_full = train(cfg.build_model(), ds, cfg, eval_view=ds.view(0))

        # interrupted at 12, checkpointed, resumed
        m_half, adam, h1 = train(cfg.build_model(), ds, cfg, eval_view=ds.view(0),
                                 stop_iter=12)
        save_checkpoint(tmp_path / "m.ckpt", m_half, adam, 12, cfg)
        ck = load_checkpoint(tmp_path / "m.ckpt")
        m_res, _, h2 = train(ck.model, ds, ck.config, eval_view=ds.view(0),
                             adam=ck.adam, start_iter=ck.iteration)

        for name, p in m_full.parameters().items():
            assert np.array_equal(p, m_res.parameters()[name]), name
        # the resumed log continues exactly where the uninterrupted one was
        merged = h1 + h2
        assert merged == h_full
