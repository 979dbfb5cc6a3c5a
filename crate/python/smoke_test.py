"""Smoke test for the `lft` extension module.

Build and install first, e.g.

    (cd crates/py && maturin build --release -o dist) && pip install crates/py/dist/lft-*.whl
"""

import math
import tempfile
from pathlib import Path

import lft


def main():
    hr = lft.synth_lf(1, 2, 64, 64, 0.5)
    assert hr.shape == [2, 2, 1, 64, 64]
    assert hr.angular == 2

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "scene.lf"
        hr.save(str(path))
        once = lft.LightField.load(str(path))
        once.save(str(path))
        assert lft.LightField.load(str(path)) == once

    pairs = lft.degrade(hr, 2)
    assert len(pairs) == 1
    lr, hr_patch = pairs[0]
    assert lr.shape == [2, 2, 1, 32, 32]

    bic = lft.bicubic_upsample(lr, 2)
    base = lft.psnr(bic, hr_patch)
    assert 20.0 < base < 100.0

    cfg = lft.ModelConfig.tiny(2)
    assert cfg.to_dict()["channels"] == "8"
    params = lft.ModelParams.xavier(cfg, 0)
    assert params.num_scalars() == cfg.num_params()

    tc = lft.TrainConfig(2, lr0=4e-3, batch_size=1, max_steps=30)
    assert math.isclose(lft.TrainConfig(2).lr_at(15), 1e-4)
    trained, losses = lft.train_model(cfg, tc, [("scene", hr)], params)
    assert len(losses) == 30
    assert losses[-1] < losses[0]

    sr = lft.forward(lr, trained, cfg)
    assert sr.shape == hr_patch.shape
    assert 0.0 <= min(sr.data()) and max(sr.data()) <= 1.0

    report = lft.evaluate(trained, cfg, [("scene", hr)])
    assert len(report) == 4
    assert len(report.rows()) == 4
    bicubic = lft.evaluate_bicubic([("scene", hr)], 2)
    assert report.to_csv().startswith("scene,u,v,psnr,ssim")

    ratios = lft.local_angular_attention(trained, cfg, lr.crop(0, 0, 8, 8))
    assert len(ratios) == 16
    assert all(0.0 <= r <= 1.0 for r in ratios)

    shape, _ = lft.epi(hr, "horizontal", 10)
    assert shape == [2, 64]

    try:
        lft.ModelConfig(scale=3).validate()
    except ValueError:
        pass
    else:
        raise AssertionError("scale 3 accepted")

    print(
        f"ok: bicubic {bicubic.mean_psnr:.2f} dB, "
        f"trained 30 steps {report.mean_psnr:.2f} dB, final loss {losses[-1]:.4f}"
    )


if __name__ == "__main__":
    main()
