"""Smoke test for the Python bindings.

Build and install first:

    cd crates/python && maturin develop --release

then run ``python python/smoke_test.py``.
"""

import json
import math
import tempfile
from pathlib import Path

import alphagan_py as ag


def check_images(tmp: Path) -> None:
    s = ag.TrainingSample.synthetic(seed=1, size=64)
    alpha, fg, bg = s.alpha, s.foreground, s.background
    rebuilt = ag.composite(fg, bg, alpha)
    worst = max(abs(a - b) for a, b in zip(rebuilt.data(), s.composite.data()))
    assert worst <= 1e-6, worst

    trimap = ag.synthesize_trimap(alpha, 5)
    assert set(trimap.values()) <= {0, 128, 255}
    assert trimap.unknown_count() > 0

    alpha.save(tmp / "alpha.png")
    back = ag.AlphaMatte.load(tmp / "alpha.png")
    assert (back.height, back.width) == (64, 64)
    assert max(abs(a - b) for a, b in zip(back.data(), alpha.data())) <= 1.0 / 65535

    try:
        ag.Trimap(1, 2, [0, 60])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid trimap value accepted")
    try:
        ag.AlphaMatte.load(tmp / "missing.png")
    except OSError:
        pass
    else:
        raise AssertionError("missing file accepted")


def check_metrics(tmp: Path) -> None:
    s = ag.TrainingSample.synthetic(seed=2, size=48)
    gt, trimap = s.alpha, s.trimap
    for fn in (ag.sad, ag.mse, ag.gradient_error, ag.connectivity_error):
        assert fn(gt, gt, trimap) == 0.0, fn.__name__
    shifted = ag.AlphaMatte(48, 48, [min(1.0, v + 0.1) for v in gt.data()])
    assert ag.sad(shifted, gt, trimap) > 0.0
    assert ag.mse(shifted, gt, trimap) > 0.0

    for sub in ("pred", "gt", "trimap"):
        (tmp / sub).mkdir()
    shifted.save(tmp / "pred" / "a.png")
    gt.save(tmp / "gt" / "a.png")
    trimap.save(tmp / "trimap" / "a.png")
    report = ag.evaluate_dirs(tmp / "pred", tmp / "gt", tmp / "trimap", scale="benchmark")
    assert [r["name"] for r in report["images"]] == ["a"]
    assert report["params"]["scale"] == "benchmark"


def check_training(tmp: Path) -> None:
    cfg = ag.default_config()
    cfg["generator"]["width_multiplier"] = 0.0625
    cfg["discriminator"]["base_width"] = 8
    cfg["train"]["batch_size"] = 2
    cfg["train"]["seed"] = 5
    trainer = ag.Trainer(json.dumps(cfg))
    batch = [ag.TrainingSample.synthetic(seed=i, size=96) for i in range(2)]
    first = trainer.train_step(batch)
    assert set(first) == {"l_alpha", "l_comp", "l_gan_g", "l_gan_d", "total_g"}
    assert all(math.isfinite(v) for v in first.values())
    trainer.train_step(batch)
    assert trainer.step == 2

    trainer.save(tmp / "ckpt")
    resumed = ag.Trainer.resume(tmp / "ckpt")
    assert resumed.step == 2
    assert resumed.config()["generator"]["width_multiplier"] == 0.0625
    assert resumed.train_step(batch) == trainer.train_step(batch)

    s = batch[0]
    pred = trainer.predict(s.composite, s.trimap)
    assert (pred.height, pred.width) == (96, 96)
    values = pred.data()
    assert all(0.0 <= v <= 1.0 for v in values)
    for v, t in zip(values, s.trimap.values()):
        if t == 255:
            assert v == 1.0
        elif t == 0:
            assert v == 0.0


def main() -> None:
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d)
        for name, check in (("images", check_images), ("metrics", check_metrics), ("training", check_training)):
            sub = tmp / name
            sub.mkdir()
            check(sub)
            print(f"{name}: ok")
    print("smoke test passed")


if __name__ == "__main__":
    main()
