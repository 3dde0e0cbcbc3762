import math

import numpy as np
import pytest

import djscc


def test_synth_and_metrics():
    x = djscc.synth_dataset(2, 32, 5)
    assert x.shape == (2, 3, 32, 32)
    assert 0.0 <= x.min() and x.max() <= 1.0
    assert np.array_equal(x, djscc.synth_dataset(2, 32, 5))
    img = x[0]
    assert djscc.psnr(img, np.clip(img + 0.1, None, 10)) == pytest.approx(20.0)
    assert abs(djscc.ms_ssim(img, img) - 1.0) < 1e-9
    noisy = img + 0.05 * np.random.default_rng(0).standard_normal(img.shape)
    assert djscc.ms_ssim(img, noisy) < 1.0


def test_channel_helpers():
    assert djscc.snr_to_sigma(10.0) == pytest.approx(math.sqrt(0.1))
    z = djscc.power_normalize(np.random.default_rng(1).standard_normal(48))
    assert (z**2).mean() == pytest.approx(1.0, abs=1e-12)
    y = djscc.awgn(np.zeros((1, 200000)), 10.0, 3)
    assert y.var() == pytest.approx(0.1, rel=0.02)


def test_models():
    enc = djscc.build_encoder(size=16, hidden1=4, hidden2=6, seed=1)
    assert enc.latent_size == 48
    dec = djscc.build_user_decoder(enc, "resnet", seed=2)
    x = djscc.synth_dataset(2, 16, 3)
    z = enc.encode(x, 7.0)
    assert z.shape[0] == 2
    out = dec.decode(z, 7.0)
    assert out.shape == x.shape
    with pytest.raises(djscc.ConfigError):
        djscc.build_user_decoder(enc, "unet")
    with pytest.raises(djscc.ShapeError):
        enc.encode(djscc.synth_dataset(1, 32, 0), 1.0)


def test_config_text():
    text = djscc.default_config()
    assert "[train]" in text and "lr = 5e-04" in text
    assert djscc.normalize_config(text) == text
    assert "batch_size = 8" in djscc.normalize_config("", ["train.batch_size=8"])
    with pytest.raises(djscc.ConfigError) as err:
        djscc.normalize_config("[train]\nlr = x\nbatch_size = y\n")
    assert "lr" in str(err.value) and "batch_size" in str(err.value)


def test_train_evaluate_compare(tmp_path, tiny):
    runs = []
    for sched in ("two_stage", "simultaneous"):
        run = djscc.train("", tiny + [f"train.schedule={sched}", f"output.dir={tmp_path / sched}"])
        rows = djscc.evaluate(run)
        assert len(rows) == 20
        assert {r["decoder"] for r in rows} == {"attention", "conv", "resnet", "vgg"}
        assert all(math.isfinite(r["psnr_db"]) for r in rows)
        runs.append(run)
    assert djscc.compare(runs, tmp_path / "cmp") == ["two_stage", "simultaneous"]
    assert (tmp_path / "cmp" / "compare_psnr.csv").exists()
    enc = djscc.load_checkpoint(runs[0] / "checkpoints" / "encoder.ckpt")
    assert enc.frozen and enc.label == "encoder"


def test_forgetting(tmp_path, tiny):
    run = djscc.train("", tiny + ["train.schedule=iterative", f"output.dir={tmp_path / 'it'}"])
    rep = djscc.forgetting(run)
    assert len(rep) == 16
    assert ("conv", "After-3") in rep
