"""Runnable acceptance suite; a PASS/FAIL line per criterion is printed at the end of the session."""

import math
import time

import numpy as np
import pytest
from skimage import data as skdata

from hran.autodiff import Tensor, finite_diff_check, mul, sum_all
from hran.checkpoint import load_checkpoint, save_checkpoint
from hran.cli import main, run_gradcheck
from hran.config import DegradationSpec, ModelConfig, TrainConfig
from hran.data import SRDataset, bicubic_upscale, cubic_kernel, degrade, mod_crop, read_png, write_png
from hran.layers import CA, ECA, LCA, PA, Bank, Conv, ResidualBlock, Upsampler
from hran.metrics import EvalProtocol, psnr_y, ssim_y
from hran.model import HRAN, RAFG, build_variant, count_params
from hran.trainer import lr_at, super_resolve, train

import oracles

TINY_E2E = ModelConfig(num_rafgs=1, blocks_per_rafg=1, channels=2, scale=2)
DESK = ModelConfig(num_rafgs=1, blocks_per_rafg=2, channels=16, scale=2)


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def f64(p):
    return {k: Tensor(np.asarray(v, dtype=np.float64)) for k, v in p.items()}


def layer_check(layer, rng, x_shape, call=None):
    params = {k: rng.normal(size=s) for k, s in layer.param_shapes().items()}
    params["x"] = rng.normal(size=x_shape)
    call = call or (lambda p: layer(p, p["x"]))
    r = rng.normal(size=call(f64(params)).shape)
    return finite_diff_check(lambda p: sum_all(mul(call(p), r)), params)


def desk_corpus():
    names = ["astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry"]
    train_hr = [np.ascontiguousarray(getattr(skdata, n)()[:192, :192]) for n in names]
    held_out = np.ascontiguousarray(skdata.astronaut()[256:384, 256:384])
    return train_hr, held_out


@criterion(1, "gradient correctness: every layer kind and the tiny end-to-end model")
def test_c1_gradients():
    rng = np.random.default_rng(1234)
    start = time.perf_counter()
    bank = Bank("b", 2, 3, attention=LCA("b.lca", 3))
    rafg = RAFG("rafg0", ModelConfig(num_rafgs=1, blocks_per_rafg=2, channels=4))
    checks = {
        "conv3_wn": layer_check(Conv("c", 3, 4, 3), rng, (2, 3, 4, 5)),
        "conv1_plain": layer_check(Conv("c", 3, 4, 1, weight_norm=False), rng, (2, 3, 4, 5)),
        "lca": layer_check(LCA("a", 4), rng, (2, 4, 3, 3)),
        "ca": layer_check(CA("a", 4, 2), rng, (2, 4, 3, 3)),
        "eca": layer_check(ECA("e", 5, 3), rng, (2, 5, 3, 3)),
        "pa": layer_check(PA("p", 3), rng, (2, 3, 3, 3)),
        "residual_block": layer_check(ResidualBlock("rb", 3, attention=LCA("rb.a", 3)), rng, (1, 3, 4, 4)),
        "bank": layer_check(bank, rng, (2, 3, 3, 3), call=lambda p: bank(p, [p["x"], mul(p["x"], p["x"])])),
        "upsampler": layer_check(Upsampler("head", 4, 2), rng, (1, 4, 3, 3)),
        "rafg": layer_check(rafg, rng, (1, 4, 3, 3), call=lambda p: rafg(p, p["x"]).out),
        "hran_tiny": run_gradcheck(TINY_E2E),
    }
    elapsed = time.perf_counter() - start
    failed = {k: str(r) for k, r in checks.items() if not (r.passed and r.max_rel_error < 1e-4)}
    assert not failed, failed
    assert elapsed < 60, f"gradient checks took {elapsed:.1f}s"


@criterion(2, "LCA closed-form example")
def test_c2_lca_closed_form():
    u = np.zeros((1, 2, 2, 2))
    u[0, 0], u[0, 1] = 2.0, -2.0
    out = LCA("a", 2)(f64({"a.w": np.eye(2)}), u).data
    alpha = out[0, :, 0, 0] / u[0, :, 0, 0]
    np.testing.assert_allclose(alpha, [0.88079708, 0.11920292], atol=1e-7)


@criterion(3, "tiny forward equals a straight-line reimplementation over 20 draws")
def test_c3_oracle_equivalence():
    model = HRAN(TINY_E2E)
    for draw in range(20):
        r = np.random.default_rng(draw)
        p = {k: r.normal(scale=0.5, size=v.shape) for k, v in model.params.items()}
        x = r.uniform(size=(2, 3, 4, 5))
        got = model.forward(x, f64(p)).data
        np.testing.assert_allclose(got, oracles.hran_tiny_straight_line(p, x, 2), rtol=1e-6, atol=1e-12)


@criterion(4, "PSNR/SSIM match brute force; uniform difference of one level is 48.1308 dB")
def test_c4_metrics():
    r = np.random.default_rng(4)
    for i in range(20):
        a = r.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        b = np.clip(a.astype(int) + r.integers(-20, 21, size=a.shape), 0, 255).astype(np.uint8)
        shave = i % 4
        protocol = EvalProtocol(shave=shave)
        assert abs(psnr_y(a, b, protocol) - oracles.psnr_bruteforce(a, b, shave)) < 1e-6
        assert abs(ssim_y(a, b, protocol) - oracles.ssim_bruteforce(a, b, shave)) < 1e-6
    y = np.full((16, 16), 100.0)  # luma planes, so Y differs by exactly one level
    assert abs(psnr_y(y, y + 1, EvalProtocol(shave=0)) - 48.1308) <= 1e-4


@criterion(5, "cubic weights at offset 0.5 and constant images under every degradation")
def test_c5_resampler():
    w = cubic_kernel(np.array([1.5, 0.5, -0.5, -1.5]))
    assert w.tolist() == [-0.0625, 0.5625, 0.5625, -0.0625]
    specs = [DegradationSpec("BI", s) for s in (2, 3, 4)] + [DegradationSpec("BD", 3)]
    for level in (0, 1, 77, 128, 254, 255):
        img = np.full((36, 36, 3), level, np.uint8)
        for spec in specs:
            lr = degrade(img, spec)
            assert np.all(lr == level), (level, spec)
            assert np.all(bicubic_upscale(lr, spec.scale) == level)


@criterion(6, "parameter-count orderings and the default budget")
def test_c6_param_orderings():
    for c in (16, 32, 64):
        base = ModelConfig(channels=c)
        n = lambda **kw: count_params(build_variant(base.replace(**kw))).total  # noqa: E731
        lca = n()
        assert lca > n(placement="in_place")
        assert lca > n(banks=False, attention="none")
        assert lca > n(attention="ca", ca_reduction=16)
    total = count_params(HRAN(ModelConfig())).total
    assert 750_000 <= total <= 1_050_000, total


@criterion(7, "desk-scale learning beats bicubic by 0.3 dB and overfits one image")
def test_c7_desk_learning():
    train_hr, held_out = desk_corpus()
    spec = DegradationSpec("BI", 2)
    model = HRAN(DESK, seed=0)
    cfg = TrainConfig(total_iters=1000, seed=0, batch_size=8, patch_size=24, log_every=100)
    _, res = train(model, SRDataset.from_images(train_hr, spec), cfg)
    assert all(math.isfinite(v) for v in res.losses)

    hr = mod_crop(held_out, 2)
    lr = degrade(hr, spec)
    protocol = EvalProtocol.for_scale(2)
    model_db = psnr_y(super_resolve(model, lr), hr, protocol)
    bicubic_db = psnr_y(bicubic_upscale(lr, 2), hr, protocol)
    print(f"held-out Y-PSNR: model {model_db:.3f} dB, bicubic {bicubic_db:.3f} dB")
    assert model_db - bicubic_db >= 0.3

    one = SRDataset.from_images([np.ascontiguousarray(skdata.astronaut()[100:132, 180:212])], spec)
    _, fit = train(HRAN(DESK, seed=0), one, TrainConfig(total_iters=300, seed=0, batch_size=1, patch_size=16,
                                                        log_every=100))
    ratio = np.mean(fit.losses[-10:]) / fit.losses[9]
    print(f"overfit L1 ratio vs iteration 10: {ratio:.3f}")
    assert ratio < 0.3


@criterion(8, "determinism, bit-exact resume and byte-identical sr output")
def test_c8_determinism(tmp_path):
    train_hr, _ = desk_corpus()
    ds = SRDataset.from_images([im[:48, :48] for im in train_hr], DegradationSpec("BI", 2))
    cfg = TrainConfig(total_iters=10, seed=3, batch_size=2, patch_size=8, log_every=1, checkpoint_every=4)
    logs = [train(HRAN(TINY_E2E.replace(channels=8)), ds, cfg)[1].log_lines for _ in range(2)]
    assert logs[0] == logs[1] and len(logs[0]) == 10

    full = HRAN(TINY_E2E.replace(channels=8))
    train(full, ds, cfg)
    part = HRAN(TINY_E2E.replace(channels=8))
    train(part, ds, cfg, out_dir=tmp_path, until=4)
    model, optim, run = load_checkpoint(tmp_path / "iter_00000004.ckpt")
    train(model, ds, run.train, optim=optim)
    assert all(model.params[k].tobytes() == full.params[k].tobytes() for k in full.params)

    save_checkpoint(tmp_path / "m.ckpt", full)
    write_png(tmp_path / "in.png", train_hr[0][:24, :32])
    for name in ("a.png", "b.png"):
        assert main(["sr", "--ckpt", str(tmp_path / "m.ckpt"), "--in", str(tmp_path / "in.png"),
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert read_png(tmp_path / "a.png").shape == (48, 64, 3)


@criterion(9, "learning-rate halving at iteration 200000")
def test_c9_schedule():
    cfg = TrainConfig(total_iters=1, seed=0)
    assert lr_at(199_999, cfg) == 1e-3
    assert lr_at(200_000, cfg) == 5e-4


@criterion(10, "ablation variants build, gradient-check and train")
@pytest.mark.parametrize("variant", [dict(banks=False), dict(placement="in_place")])
def test_c10_ablation_wiring(variant):
    cfg = DESK.replace(**variant)
    model = build_variant(cfg)
    assert count_params(model).total > 0
    report = run_gradcheck(cfg)
    assert report.passed, str(report)
    train_hr, _ = desk_corpus()
    ds = SRDataset.from_images([im[:96, :96] for im in train_hr], DegradationSpec("BI", 2))
    _, res = train(model, ds, TrainConfig(total_iters=30, seed=0, batch_size=4, patch_size=16, log_every=10))
    assert all(math.isfinite(v) for v in res.losses)
    assert np.mean(res.losses[-5:]) < np.mean(res.losses[:5])
