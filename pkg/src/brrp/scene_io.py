"""Scene directory I/O.

Layout (one directory per scene):
    rgb.png      8-bit RGB
    depth.png    16-bit grayscale, millimeters (0 = invalid)
    seg.png      16-bit grayscale, instance label ids (0 = background)
    camera.json  {"fx", "fy", "cx", "cy", "width", "height"}
    gt.json      optional list of {"mesh_id", "rotation" (row-major 9),
                 "translation" (3), "scale"}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import SceneFormatError
from .geometry import (
    CameraIntrinsics,
    GroundTruthObject,
    SceneRecord,
    SimilarityTransform,
)


def save_scene(path: str | Path, scene: SceneRecord) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(scene.rgb), mode="RGB").save(path / "rgb.png")
    depth_mm = np.round(scene.depth * 1000.0).astype(np.uint16)
    _save_u16(path / "depth.png", depth_mm)
    _save_u16(path / "seg.png", scene.segmentation.astype(np.uint16))
    cam = scene.intrinsics
    (path / "camera.json").write_text(
        json.dumps(
            {
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "width": cam.width,
                "height": cam.height,
            },
            indent=2,
            sort_keys=True,
        )
    )
    if scene.ground_truth is not None:
        entries = [
            {
                "mesh_id": g.mesh_id,
                "rotation": [float(x) for x in g.transform.rotation.reshape(-1)],
                "translation": [float(x) for x in g.transform.translation],
                "scale": g.transform.scale,
            }
            for g in scene.ground_truth
        ]
        (path / "gt.json").write_text(json.dumps(entries, indent=2))


def load_scene(path: str | Path) -> SceneRecord:
    path = Path(path)
    cam_file = path / "camera.json"
    for required in ("rgb.png", "depth.png", "seg.png", "camera.json"):
        if not (path / required).exists():
            raise SceneFormatError(f"missing {path / required}")
    try:
        cam_raw = json.loads(cam_file.read_text())
        intr = CameraIntrinsics(
            fx=float(cam_raw["fx"]),
            fy=float(cam_raw["fy"]),
            cx=float(cam_raw["cx"]),
            cy=float(cam_raw["cy"]),
            width=int(cam_raw["width"]),
            height=int(cam_raw["height"]),
        )
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise SceneFormatError(f"bad camera.json in {path}: {e}") from e

    rgb = np.asarray(Image.open(path / "rgb.png").convert("RGB"), dtype=np.uint8)
    depth = _load_u16(path / "depth.png").astype(np.float64) / 1000.0
    seg = _load_u16(path / "seg.png").astype(np.int32)

    gt = None
    gt_file = path / "gt.json"
    if gt_file.exists():
        try:
            entries = json.loads(gt_file.read_text())
            gt = tuple(
                GroundTruthObject(
                    mesh_id=str(e["mesh_id"]),
                    transform=SimilarityTransform(
                        rotation=np.asarray(e["rotation"], dtype=np.float64).reshape(3, 3),
                        translation=np.asarray(e["translation"], dtype=np.float64),
                        scale=float(e["scale"]),
                    ),
                )
                for e in entries
            )
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise SceneFormatError(f"bad gt.json in {path}: {e}") from e

    try:
        return SceneRecord(rgb=rgb, depth=depth, segmentation=seg, intrinsics=intr, ground_truth=gt)
    except ValueError as e:
        raise SceneFormatError(f"inconsistent scene files in {path}: {e}") from e


def _save_u16(path: Path, arr: np.ndarray) -> None:
    if arr.dtype != np.uint16:
        if arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max:
            raise ValueError("array does not fit in uint16")
        arr = arr.astype(np.uint16)
    Image.fromarray(arr).save(path)


def _load_u16(path: Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise SceneFormatError(f"{path} is not a 16-bit grayscale image")
    return arr.astype(np.uint16)
