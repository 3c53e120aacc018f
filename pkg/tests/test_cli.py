import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from brrp.cli import main
from brrp.geometry import SceneRecord, TriangleMesh
from brrp.mesh_io import save_mesh_ply
from brrp.scene_io import load_scene, save_scene

FAST = [
    "--svgd.iterations", "60",
    "--mesh.resolution", "24",
    "--reg.hypotheses", "4000",
]


def run(argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Full CLI flow once: gen-scenes -> build-prior -> reconstruct."""
    ws = tmp_path_factory.mktemp("cli")
    assert run(["gen-scenes", "--out", ws / "scenes", "--count", "2",
                "--max-objects", "2", "--seed", "4"]) == 0
    assert run(["build-prior", "--meshes", ws / "scenes" / "meshes",
                "--descriptions", ws / "scenes" / "descriptions.json",
                "--out", ws / "db", "--samples", "600"]) == 0
    assert run(["reconstruct", "--scene", ws / "scenes" / "scene_000",
                "--db", ws / "db", "--out", ws / "recon", "--oracle",
                "--seed", "7", *FAST]) == 0
    return ws


class TestGenScenes:
    def test_scene_directories_written(self, workspace):
        scenes = workspace / "scenes"
        for name in ("scene_000", "scene_001"):
            for fname in ("rgb.png", "depth.png", "seg.png", "camera.json", "gt.json"):
                assert (scenes / name / fname).exists()
        summary = json.loads((scenes / "gen_summary.json").read_text())
        assert [s["scene"] for s in summary] == ["scene_000", "scene_001"]
        assert all(s["placed"] >= 1 for s in summary)
        assert (scenes / "config-echo.json").exists()

    def test_default_pool_exported(self, workspace):
        meshes = workspace / "scenes" / "meshes"
        assert sorted(p.stem for p in meshes.glob("*.ply")) == [
            "ball", "box", "can", "capsule", "cone", "slab",
        ]
        table = json.loads((workspace / "scenes" / "descriptions.json").read_text())
        assert set(table) == {"ball", "box", "can", "capsule", "cone", "slab"}

    def test_scenes_round_trip(self, workspace):
        scene = load_scene(workspace / "scenes" / "scene_000")
        assert scene.ground_truth is not None
        assert scene.object_labels() == list(range(1, len(scene.ground_truth) + 1))


class TestBuildPrior:
    def test_database_layout(self, workspace, capsys):
        db_dir = workspace / "db"
        manifest = json.loads((db_dir / "manifest.json").read_text())
        assert len(manifest["classes"]) == 6
        assert (db_dir / "class_0000.bin").exists()

    def test_partial_success_keeps_going(self, tmp_path, capsys):
        mesh_dir = tmp_path / "meshes"
        mesh_dir.mkdir()
        from brrp.primitives import box, icosphere

        save_mesh_ply(mesh_dir / "a.ply", box((0.1, 0.1, 0.1)))
        save_mesh_ply(mesh_dir / "b.ply", icosphere(0.05, 1))
        open_mesh = TriangleMesh(
            np.array([[0.0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]]), np.array([[0, 1, 2]])
        )
        save_mesh_ply(mesh_dir / "open.ply", open_mesh)
        (tmp_path / "desc.json").write_text(
            json.dumps({"a": "a box", "b": "a ball", "open": "broken"})
        )
        code = run(["build-prior", "--meshes", mesh_dir, "--descriptions",
                    tmp_path / "desc.json", "--out", tmp_path / "db",
                    "--samples", "200"])
        out = capsys.readouterr().out
        assert code == 0
        assert "rejected 1 mesh(es): open" in out
        assert "wrote 2 classes" in out

    def test_empty_mesh_dir_exits_2(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        (tmp_path / "d.json").write_text("{}")
        code = run(["build-prior", "--meshes", empty, "--descriptions",
                    tmp_path / "d.json", "--out", tmp_path / "db"])
        assert code == 2
        assert "no .ply/.obj meshes" in capsys.readouterr().err

    def test_missing_description_exits_2(self, tmp_path, capsys):
        from brrp.primitives import box

        mesh_dir = tmp_path / "meshes"
        mesh_dir.mkdir()
        save_mesh_ply(mesh_dir / "a.ply", box((0.1, 0.1, 0.1)))
        (tmp_path / "d.json").write_text("{}")
        code = run(["build-prior", "--meshes", mesh_dir, "--descriptions",
                    tmp_path / "d.json", "--out", tmp_path / "db"])
        assert code == 2
        assert "no entry for mesh 'a'" in capsys.readouterr().err


class TestReconstruct:
    def test_artifacts_written(self, workspace):
        recon = workspace / "recon"
        summary = json.loads((recon / "summary.json").read_text())
        assert summary["seed"] == 7
        assert len(summary["objects"]) >= 1
        for label in summary["objects"]:
            stem = f"object_{int(label):03d}"
            assert (recon / f"{stem}_occupancy.f32").exists()
            assert (recon / f"{stem}_uncertainty.f32").exists()
            assert (recon / f"{stem}_particles.bin").exists()
            assert (recon / f"{stem}_grid.json").exists()
            if not summary["objects"][label]["empty_mesh"]:
                assert (recon / f"{stem}.ply").exists()
        assert json.loads((recon / "errors.json").read_text()) == {}

    def test_fixed_seed_runs_are_byte_identical(self, workspace, tmp_path):
        out = tmp_path / "repeat"
        argv = ["reconstruct", "--scene", workspace / "scenes" / "scene_000",
                "--db", workspace / "db", "--out", out, "--oracle",
                "--seed", "7", *FAST]
        assert run(argv) == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        shutil.rmtree(out)
        assert run(argv) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second

    def test_probs_file_backend(self, workspace, tmp_path):
        scene = load_scene(workspace / "scenes" / "scene_000")
        onehot = [1.0] + [0.0] * 5
        probs = {str(l): onehot for l in scene.object_labels()}
        probs_file = tmp_path / "probs.json"
        probs_file.write_text(json.dumps(probs))
        out = tmp_path / "out"
        assert run(["reconstruct", "--scene", workspace / "scenes" / "scene_000",
                    "--db", workspace / "db", "--out", out,
                    "--probs", probs_file, *FAST]) == 0
        summary = json.loads((out / "summary.json").read_text())
        for obj in summary["objects"].values():
            best = max(obj["retrieved"], key=lambda e: e["weight"])
            assert best["class_id"] == 0

    def test_missing_camera_json_exits_2(self, workspace, tmp_path, capsys):
        broken = tmp_path / "scene"
        shutil.copytree(workspace / "scenes" / "scene_000", broken)
        (broken / "camera.json").unlink()
        code = run(["reconstruct", "--scene", broken, "--db", workspace / "db",
                    "--out", tmp_path / "out"])
        assert code == 2
        assert "camera.json" in capsys.readouterr().err

    def test_wrong_length_probs_exits_2(self, workspace, tmp_path, capsys):
        probs_file = tmp_path / "probs.json"
        probs_file.write_text(json.dumps({"1": [0.5, 0.5]}))
        code = run(["reconstruct", "--scene", workspace / "scenes" / "scene_000",
                    "--db", workspace / "db", "--out", tmp_path / "out",
                    "--probs", probs_file])
        assert code == 2
        assert "2 values but the database defines 6 classes" in capsys.readouterr().err

    def test_corrupted_database_exits_4(self, workspace, tmp_path, capsys):
        db_copy = tmp_path / "db"
        shutil.copytree(workspace / "db", db_copy)
        victim = db_copy / "class_0000.bin"
        raw = bytearray(victim.read_bytes())
        raw[100] ^= 0xFF
        victim.write_bytes(bytes(raw))
        code = run(["reconstruct", "--scene", workspace / "scenes" / "scene_000",
                    "--db", db_copy, "--out", tmp_path / "out", "--oracle"])
        assert code == 4
        assert "corrupted database" in capsys.readouterr().err

    def test_every_object_failing_exits_3(self, workspace, tmp_path):
        scene = load_scene(workspace / "scenes" / "scene_000")
        seg = np.array(scene.segmentation)
        for label in scene.object_labels():
            where = np.argwhere(seg == label)
            seg[seg == label] = 0
            seg[where[:4, 0], where[:4, 1]] = label
        crippled = SceneRecord(
            rgb=scene.rgb,
            depth=scene.depth,
            segmentation=seg,
            intrinsics=scene.intrinsics,
            ground_truth=scene.ground_truth,
        )
        scene_dir = tmp_path / "scene"
        save_scene(scene_dir, crippled)
        out = tmp_path / "out"
        code = run(["reconstruct", "--scene", scene_dir, "--db", workspace / "db",
                    "--out", out, "--oracle", *FAST])
        assert code == 3
        errors = json.loads((out / "errors.json").read_text())
        assert set(errors) == {str(l) for l in scene.object_labels()}

    def test_unknown_flag_exits_2(self, workspace, tmp_path):
        assert run(["reconstruct", "--scene", workspace / "scenes" / "scene_000",
                    "--db", workspace / "db", "--out", tmp_path / "o",
                    "--no-such-flag"]) == 2

    def test_bad_override_value_exits_2(self, workspace, tmp_path, capsys):
        code = run(["reconstruct", "--scene", workspace / "scenes" / "scene_000",
                    "--db", workspace / "db", "--out", tmp_path / "o",
                    "--svgd.particles", "0"])
        assert code == 2
        assert "invalid override" in capsys.readouterr().err

    def test_threads_zero_exits_2(self, workspace, tmp_path, capsys):
        code = run(["reconstruct", "--scene", workspace / "scenes" / "scene_000",
                    "--db", workspace / "db", "--out", tmp_path / "o",
                    "--threads", "0"])
        assert code == 2
        assert "--threads" in capsys.readouterr().err


@pytest.fixture(scope="module")
def eval_dir(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    assert run(["eval", "--scenes", workspace / "scenes", "--db",
                workspace / "db", "--out", out, "--oracle", *FAST]) == 0
    return out


class TestEval:
    def test_csv_has_one_group_per_scene_and_method(self, eval_dir):
        with open(eval_dir / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["scene_id"] for r in rows} == {"scene_000", "scene_001"}
        assert {r["method"] for r in rows} == {"brrp", "no_prior"}
        assert all(r["shifted"] == "false" for r in rows)
        assert all(0.0 <= float(r["iou"]) <= 1.0 for r in rows)

    def test_json_report_structure(self, eval_dir):
        report = json.loads((eval_dir / "results.json").read_text())
        assert set(report["aggregates"]) == {"brrp", "no_prior"}
        for agg in report["aggregates"].values():
            assert agg["n_objects"] >= 1
        assert "paired_sign_test" in report
        assert report["shift_dx"] == 0
        assert report["config"]["svgd"]["n_iterations"] == 60

    def test_shift_seg_marks_rows(self, workspace, tmp_path, capsys):
        out = tmp_path / "shifted"
        assert run(["eval", "--scenes", workspace / "scenes", "--db",
                    workspace / "db", "--out", out, "--oracle",
                    "--shift-seg", "2", *FAST]) == 0
        with open(out / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and all(r["shifted"] == "true" for r in rows)
        report = json.loads((out / "results.json").read_text())
        assert report["shift_dx"] == 2

    def test_missing_scene_dir_exits_2(self, workspace, tmp_path, capsys):
        assert run(["eval", "--scenes", tmp_path / "nope", "--db",
                    workspace / "db", "--out", tmp_path / "out"]) == 2
        assert "scene directory not found" in capsys.readouterr().err
