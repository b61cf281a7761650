"""Smoke test for the `ptgan` extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke_test.py`.
"""

import json
import math
import os
import sys
import tempfile

import ptgan


def keypoint_doc(x, y, h=256, w=128):
    triples = []
    for j in range(25):
        triples += [x + j, y + j, 0.9]
    return json.dumps({"pose_keypoints_2d": triples, "image_height": h, "image_width": w})


def main():
    assert ptgan.lr_schedule(0) == 2e-4
    assert ptgan.lr_schedule(20) == 2e-5
    assert ptgan.lr_schedule(45) == 2e-6

    a = ptgan.normalize_pose(keypoint_doc(10.0, 20.0))
    b = ptgan.normalize_pose(keypoint_doc(30.0, 20.0))
    assert len(a) == 75
    assert ptgan.pose_distance(a, a) == 0.0
    assert ptgan.pose_distance(a, b) > 0.0

    h = w = 24
    img = [((i * 37) % 101) / 100.0 for i in range(h * w * 3)]
    assert abs(ptgan.ssim(img, img, h, w) - 1.0) < 1e-6

    rows = [[1.0 if j == i % 7 else 0.0 for j in range(7)] for i in range(70)]
    mean, _ = ptgan.inception_score(rows, 1)
    assert abs(mean - 7.0) < 1e-3

    aug = ptgan.Augmenter("image_size = 32\ndistortion_magnitude = 1.0\n")
    out = aug.apply(img, h, w, 3)
    assert len(out) == 32 * 32 * 3
    assert out == aug.apply(img, h, w, 3)
    assert all(0.0 <= v <= 1.0 for v in out)

    try:
        ptgan.normalize_pose(json.dumps({"pose_keypoints_2d": [0.0] * 54, "image_height": 4, "image_width": 4}))
    except ValueError:
        pass
    else:
        raise AssertionError("18 joints accepted")

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data")
        assert ptgan.synth_data(data, identities=2, per_identity=3, size=32) == 6
        pairs = ptgan.build_pairs(os.path.join(data, "manifest.tsv"))
        assert len(pairs) == 2 * 3 * 2

        config = os.path.join(os.path.dirname(__file__), "..", "configs", "miniature.toml")
        run = os.path.join(tmp, "run")
        code = ptgan.run_cli([
            "train", "--config", config,
            "--set", f"paths.data_dir={data}",
            "--set", f"paths.out_dir={run}",
            "--set", "trainer.max_steps=2",
        ])
        assert code == 0, code
        gen = ptgan.Generator.load(os.path.join(run, "checkpoints", "latest.safetensors"))
        assert gen.output_size == 32
        y = gen.generate(img, h, w, b)
        assert len(y) == 32 * 32 * 3
        assert all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in y)

    assert ptgan.run_cli(["--bogus"]) == 2
    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
