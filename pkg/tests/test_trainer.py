import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hran.autodiff import DimensionError, Tape, l1_loss
from hran.checkpoint import (
    CheckpointError,
    ChecksumError,
    NameMismatchError,
    OptimState,
    VersionError,
    dumps_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
)
from hran.config import DegradationSpec, ModelConfig, RunConfig, TrainConfig
from hran.data import SRDataset
from hran.model import HRAN
from hran.trainer import TrainingDiverged, adam_step, format_log_line, lr_at, train

TINY = ModelConfig(num_rafgs=1, blocks_per_rafg=2, channels=8, scale=2)


def small_dataset(seed=0, n=2, size=24):
    r = np.random.default_rng(seed)
    base = np.linspace(0, 255, size)
    imgs = []
    for _ in range(n):
        img = np.stack([np.add.outer(base * r.uniform(0.2, 1), base * r.uniform(0.2, 1)) / 2] * 3, axis=2)
        img += r.normal(scale=10, size=img.shape)
        imgs.append(np.clip(img, 0, 255).astype(np.uint8))
    return SRDataset.from_images(imgs, DegradationSpec("BI", 2))


def cfg(**kw):
    base = dict(total_iters=10, seed=7, batch_size=2, patch_size=6, log_every=1)
    base.update(kw)
    return TrainConfig(**base)


class TestL1:
    def test_example(self):
        sr = np.array([1.0, 2.0]).reshape(1, 1, 1, 2)
        hr = np.array([0.0, 4.0]).reshape(1, 1, 1, 2)
        assert l1_loss(sr, hr).item() == 1.5

    def test_zero(self, rng):
        x = rng.normal(size=(1, 3, 4, 4))
        assert l1_loss(x, x).item() == 0.0

    def test_subgradient(self):
        tape = Tape()
        sr = tape.watch(np.array([1.0, 2.0, 3.0, 3.0]).reshape(1, 1, 2, 2), "sr")
        hr = np.array([0.0, 4.0, 3.0, 5.0]).reshape(1, 1, 2, 2)
        g = tape.backward(l1_loss(sr, hr))["sr"]
        np.testing.assert_array_equal(g.ravel(), [0.25, -0.25, 0.0, -0.25])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            l1_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


class TestAdam:
    def test_first_step(self):
        params = {"p": np.zeros(1)}
        state = OptimState.zeros_like(params)
        adam_step(params, {"p": np.ones(1)}, state, 1e-3)
        # m_hat = g and v_hat = g^2, so the step is lr * 1 / (1 + eps)
        assert params["p"][0] == -1e-3 / (1 + 1e-8)
        assert params["p"][0] == pytest.approx(-9.99999995e-4, rel=1e-8)
        assert state.t == 1

    def test_matches_reference_loop(self, rng):
        p0 = rng.normal(size=5)
        gs = [rng.normal(size=5) for _ in range(4)]
        params, state = {"p": p0.copy()}, OptimState.zeros_like({"p": p0})
        for g in gs:
            adam_step(params, {"p": g}, state, 1e-2)
        p, m, v = p0.copy(), np.zeros(5), np.zeros(5)
        for t, g in enumerate(gs, 1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p = p - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(params["p"], p, rtol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_zero_gradient_is_identity(self, seed, steps):
        p0 = np.random.default_rng(seed).normal(size=(3, 2)).astype(np.float32)
        params, state = {"p": p0.copy()}, OptimState.zeros_like({"p": p0})
        for _ in range(steps):
            adam_step(params, {"p": np.zeros_like(p0)}, state, 1e-3)
        assert params["p"].tobytes() == p0.tobytes()
        assert state.t == steps

    def test_non_finite_gradient_names_parameter(self):
        params = {"head.conv0.v": np.zeros(2)}
        with pytest.raises(FloatingPointError, match="head.conv0.v"):
            adam_step(params, {"head.conv0.v": np.array([1.0, np.nan])}, OptimState.zeros_like(params), 1e-3)


class TestSchedule:
    @pytest.mark.parametrize("it,lr", [(0, 1e-3), (199_999, 1e-3), (200_000, 5e-4), (399_999, 5e-4),
                                       (400_000, 2.5e-4)])
    def test_boundaries(self, it, lr):
        assert lr_at(it, cfg()) == lr

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**7), st.integers(0, 10**6))
    def test_non_increasing_piecewise(self, a, d):
        c = cfg()
        assert lr_at(a + d, c) <= lr_at(a, c)
        if (a // c.halve_every) == ((a + d) // c.halve_every):
            assert lr_at(a + d, c) == lr_at(a, c)

    def test_negative(self):
        with pytest.raises(ValueError):
            lr_at(-1, cfg())

    def test_logged_lr_at_boundary(self):
        model = HRAN(TINY)
        _, res = train(model, small_dataset(), cfg(total_iters=6, halve_every=3))
        lrs = [float(line.split("\t")[1]) for line in res.log_lines]
        assert lrs == [1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4]


class TestCheckpoint:
    def test_roundtrip_bytes(self, tmp_path):
        model = HRAN(TINY, seed=2)
        save_checkpoint(tmp_path / "a.ckpt", model)
        loaded, optim, run = load_checkpoint(tmp_path / "a.ckpt")
        assert optim is None and run.model == TINY
        save_checkpoint(tmp_path / "b.ckpt", loaded)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert all(loaded.params[k].tobytes() == model.params[k].tobytes() for k in model.params)

    def test_roundtrip_with_optimizer_and_train_config(self):
        model = HRAN(TINY)
        optim = OptimState.zeros_like(model.params)
        optim.t = 12
        optim.m["head.conv0.g"][:] = 0.5
        run = RunConfig(TINY, cfg(), DegradationSpec("BI", 2))
        data = dumps_checkpoint(model, optim, run)
        m2, o2, r2 = loads_checkpoint(data)
        assert r2 == run and o2.t == 12 and np.all(o2.m["head.conv0.g"] == 0.5)
        assert dumps_checkpoint(m2, o2, r2) == data

    def test_header(self):
        data = dumps_checkpoint(HRAN(TINY))
        assert data[:4] == b"HRN1"
        assert b"channels = 8" in data

    @pytest.mark.parametrize("cut", [1, 5, 100, 2000])
    def test_truncated(self, cut):
        data = dumps_checkpoint(HRAN(TINY))
        with pytest.raises(ChecksumError):
            loads_checkpoint(data[:-cut])

    def test_flipped_byte(self):
        data = bytearray(dumps_checkpoint(HRAN(TINY)))
        data[len(data) // 2] ^= 0xFF
        with pytest.raises(ChecksumError):
            loads_checkpoint(bytes(data))

    def _recrc(self, body):
        import struct
        import zlib

        return body + struct.pack("<I", zlib.crc32(body))

    def test_version(self):
        data = bytearray(dumps_checkpoint(HRAN(TINY))[:-4])
        data[4:8] = (99).to_bytes(4, "little")
        with pytest.raises(VersionError, match="99"):
            loads_checkpoint(self._recrc(bytes(data)))

    def test_name_mismatch(self):
        data = dumps_checkpoint(HRAN(TINY))[:-4]
        renamed = data.replace(b"head.conv0.v", b"head.convX.v")
        with pytest.raises(NameMismatchError):
            loads_checkpoint(self._recrc(renamed))

    def test_config_mismatch(self):
        data = dumps_checkpoint(HRAN(TINY))[:-4]
        with pytest.raises(NameMismatchError):
            loads_checkpoint(self._recrc(data.replace(b"channels = 8", b"channels = 4")))

    def test_bad_magic_and_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="magic"):
            loads_checkpoint(b"PNG\x00" + bytes(20))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.ckpt")


class TestTrain:
    def test_deterministic_losses(self):
        runs = [train(HRAN(TINY, seed=1), small_dataset(), cfg())[1] for _ in range(2)]
        assert runs[0].log_lines == runs[1].log_lines
        assert len(runs[0].losses) == 10

    def test_seed_matters(self):
        a = train(HRAN(TINY, seed=1), small_dataset(), cfg(total_iters=3))[1].losses
        b = train(HRAN(TINY, seed=1), small_dataset(), cfg(total_iters=3, seed=8))[1].losses
        assert a != b

    def test_resume_is_bit_exact(self, tmp_path):
        n, k = 6, 5
        config = cfg(total_iters=n + k, checkpoint_every=n)
        full_model = HRAN(TINY, seed=1)
        _, full = train(full_model, small_dataset(), config)

        first = HRAN(TINY, seed=1)
        _, part1 = train(first, small_dataset(), config, out_dir=tmp_path, until=n)
        model, optim, run = load_checkpoint(tmp_path / f"iter_{n:08d}.ckpt")
        assert optim.t == n and run.train == config
        _, part2 = train(model, small_dataset(), run.train, optim=optim)
        assert part1.losses + part2.losses == full.losses
        assert all(model.params[p].tobytes() == full_model.params[p].tobytes() for p in model.params)

    def test_outputs_written(self, tmp_path):
        _, res = train(HRAN(TINY), small_dataset(), cfg(total_iters=4, checkpoint_every=2, log_every=2),
                       out_dir=tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["iter_00000002.ckpt", "iter_00000004.ckpt",
                                                               "last.ckpt", "train.log"]
        assert (tmp_path / "train.log").read_text().splitlines() == res.log_lines

    def test_log_format(self):
        assert format_log_line(3, 0.001, 0.25) == "3\t0.001\t0.25"
        assert format_log_line(3, 0.001, 0.25, 31.123456) == "3\t0.001\t0.25\t31.1235"

    def test_validation_logged(self):
        ds = small_dataset()
        _, res = train(HRAN(TINY), ds, cfg(total_iters=4, val_every=2, log_every=100),
                       val_pairs=[(ds.lr[0], ds.hr[0])])
        assert [s for s, _ in res.val_psnr] == [2, 4]
        assert all(len(line.split("\t")) == 4 for line in res.log_lines)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nan_aborts_with_dump(self, tmp_path):
        model = HRAN(TINY)
        model.params["head.conv0.g"][:] = np.float32(3e38)
        with pytest.raises(TrainingDiverged) as info:
            train(model, small_dataset(), cfg(), out_dir=tmp_path)
        assert info.value.checkpoint == tmp_path / "iter_00000000.ckpt.nan"
        assert info.value.checkpoint.exists()

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(HRAN(TINY), SRDataset([], []), cfg())

    def test_overfit_one_image(self):
        ds = small_dataset(n=1, size=32)
        model = HRAN(ModelConfig(num_rafgs=1, blocks_per_rafg=2, channels=16, scale=2))
        _, res = train(model, ds, cfg(total_iters=200, batch_size=1, patch_size=16, log_every=50))
        assert res.losses[-1] < res.losses[9]
        assert math.isfinite(res.losses[-1])
