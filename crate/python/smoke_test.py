"""Smoke test for the proxycull extension module.

Build and run:
    PYO3_BUILD_EXTENSION_MODULE=1 cargo build --release -p proxycull-py --features extension-module
    cp target/release/libproxycull.so python/proxycull.so
    python3 python/smoke_test.py
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import proxycull as pc


def main():
    sphere = pc.Mesh.icosphere(3)
    assert sphere.face_count == 1280
    small, cost = sphere.simplify(128)
    assert small.face_count <= 128 and small.is_manifold() and cost >= 0.0
    print("simplify:", sphere, "->", small)

    cam = pc.Camera.look_at((0.0, -4.0, 0.0), (0.0, 0.0, 0.0), 64, 48, fov_y_deg=50.0)
    depth = pc.rasterize(sphere, cam)
    values = np.frombuffer(depth.to_bytes(), "<f4").reshape(depth.height, depth.width)
    assert depth.covered_pixels() == int((values < 1.0).sum()) > 0
    centre = cam.linearize(float(values[24, 32]))
    assert abs(centre - 3.0) < 0.05, centre
    print("rasterize: %d covered pixels, centre depth %.3f" % (depth.covered_pixels(), centre))

    verdicts = list(pc.cull([(0.0, 0.0, 0.0), (0.0, -2.0, 0.0), (0.0, -5.0, 0.0)], cam, depth, gamma=0.1))
    assert verdicts == [3, 0, 1], verdicts
    print("cull:", verdicts)

    scene = pc.Scene.synthetic(seed=7, anchors=20000, width=320, height=240)
    frame = scene.run(0)
    counts = frame.counts()
    assert sum(counts.values()) == len(scene.anchors) == len(frame.verdicts)
    print("pipeline:", counts)

    report = scene.oracle(1)
    assert report["passed"], report
    print("oracle:", [(c["name"], c["status"]) for c in report["checks"]])

    rng = np.random.default_rng(0)
    error = rng.random((240, 320), dtype=np.float32) * 0.1
    error[64:96, 128:160] = 5.0
    flags = pc.select(error.ravel().tolist(), 320, 240, patch_size=16)
    assert sum(flags) == 4, sum(flags)
    points, rejected = scene.densify_plan([(0, error.ravel().tolist())])
    print("densify: %d selected patches, %d planned anchors, %d rejected" % (sum(flags), len(points), rejected))

    with tempfile.TemporaryDirectory() as tmp:
        manifest = scene.save(tmp)
        again = pc.Scene.load(manifest, {"gamma": 0.6})
        assert again.config()["gamma"] == 0.6 and again.cluster_count == scene.cluster_count
    try:
        pc.Scene.load("/nonexistent/scene.json")
    except OSError as e:
        print("expected error:", e)
    else:
        raise AssertionError("missing manifest loaded")
    print("ok")


if __name__ == "__main__":
    main()
