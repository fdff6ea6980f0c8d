"""Smoke test for the Python bindings.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import json
import math
import struct
import tempfile
from pathlib import Path

import sparse_nerf_py as sn


def main():
    slots = sn.mask_at(0, 10, 100)
    assert slots[:3] == [1.0, 1.0, 1.0] and not any(slots[3:])
    assert sn.mask_at(100, 10, 100) == [1.0] * 13

    w, h = 8, 6
    gt = [0.25] * (w * h * 3)
    pred = [v + 0.1 for v in gt]
    assert abs(sn.psnr(pred, gt, w, h) - 20.0) < 1e-9
    assert sn.masked_psnr(pred, gt, [True] * (w * h), w, h) == sn.psnr(pred, gt, w, h)
    assert abs(sn.masked_ssim(gt, gt, w, h) - 1.0) < 1e-12
    as_f32 = [struct.unpack("f", struct.pack("f", v))[0] for v in pred]
    assert sn.pixel_weighted([pred, gt], [1.0, 0.0], w, h) == as_f32

    scene = sn.Scene.synthetic(0)
    print(scene)
    cfg = json.loads(sn.default_config("freq_occ"))
    cfg.update(iterations=50, batch_size=32, log_every=10)
    cfg["field"].update(width=16, bottleneck=16)
    cfg["sampling"].update(n_coarse=16, n_fine=8)
    model, log = sn.train(scene, json.dumps(cfg))
    assert log.startswith("step,term,weight,value")
    assert model.method == "freq_occ"

    with tempfile.TemporaryDirectory() as tmp:
        scene.save(Path(tmp) / "scene")
        reloaded = sn.Scene.load(Path(tmp) / "scene")
        assert reloaded.target_names == scene.target_names
        model.save(Path(tmp) / "model")
        again = sn.Model.load(Path(tmp) / "model")
        a = model.score(scene)
        b = again.score(reloaded)
        assert a == b, (a, b)

    name, width, height, rgb = model.render_targets(scene)[0]
    assert len(rgb) == width * height * 3 and all(0.0 <= v <= 1.0 for v in rgb)
    for view, p, pm, sm in a:
        assert math.isfinite(p) and math.isfinite(pm) and -1.0 <= sm <= 1.0
        print(f"{view}: psnr {p:.2f} psnr_m {pm:.2f} ssim_m {sm:.3f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
