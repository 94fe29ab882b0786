"""Smoke test for the reloc_py extension: poses, overlap, and a tiny pipeline run."""

import json
import math
import tempfile
from pathlib import Path

import reloc_py as rp


def check_poses():
    db = rp.Pose([0.5, -1.0, 2.0], [math.cos(0.3), 0.0, math.sin(0.3), 0.0])
    query = rp.Pose([0.1, 0.2, 0.3], [math.cos(0.6), math.sin(0.6), 0.0, 0.0])
    dt, dq = rp.relative_pose(db, query)
    back = rp.compose_absolute(db, dt, dq)
    assert back.translation_error(query) < 1e-9
    assert back.rotation_error_degrees(query) < 1e-6
    half = [math.cos(math.pi / 4), 0.0, math.sin(math.pi / 4), 0.0]
    assert abs(rp.angular_distance([1, 0, 0, 0], half) - 0.5) < 1e-12


def check_overlap():
    # 100 x 100 camera facing a wall 2 m away, second camera 1 m behind.
    k = (100.0, 100.0, 50.0, 50.0, 100, 100)
    wall = [2.0] * (100 * 100)
    a = rp.Pose()
    assert rp.frustum_overlap(wall, k, a, a, stride=1) == 1.0
    shifted = rp.Pose([1.0, 0.0, 0.0])
    assert rp.frustum_overlap(wall, k, a, shifted, stride=1) == 0.5


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        scene, mined = root / "scene", root / "mined"
        assert rp.synth(str(scene), seed=1, frames=40, queries=5) == 45
        frames, pairs, quads = rp.mine(str(scene), str(mined), seed=1)
        assert frames == 40 and pairs > 0 and quads > 0

        pre = root / "pre.rfck"
        curve = rp.train(str(scene), str(mined / "pairs.jsonl"), str(pre), "pretrain", epochs=2, seed=1)
        assert len(curve) == 2
        ft = root / "ft.rfck"
        rp.train(str(scene), str(mined / "quadruplets.jsonl"), str(ft), "finetune",
                 variant="PL+PA+H", init=str(pre), epochs=1, seed=1)
        try:
            rp.train(str(scene), str(mined / "quadruplets.jsonl"), str(ft), "finetune", variant="PL+XX")
        except ValueError as e:
            assert "PL+XX" in str(e)
        else:
            raise AssertionError("unknown variant accepted")

        assert rp.build_index(str(scene), str(ft), str(root / "index.rfix")) == 40
        index = rp.Index.load(str(root / "index.rfix"))
        model = rp.Model.load(str(ft))
        assert len(index) == 40 and index.dim == 64
        assert model.distilled_model_params() < model.full_model_params()

        features = [float(x) for x in (scene / "seq-02" / "frame-000000.feature.txt").read_text().split()]
        pose, neighbor, _ = model.localize(index, features)
        hits = index.query(model.encode(features), k=3)
        assert hits[0][0] == neighbor and len(hits) == 3

        report = json.loads(rp.evaluate(str(scene), str(ft), str(root / "index.rfix"), str(root / "eval")))
        assert report["scenes"][0]["queries"] == 5
    assert len(rp.VARIANTS) == 11


if __name__ == "__main__":
    check_poses()
    check_overlap()
    check_pipeline()
    print("smoke test passed")
