"""Offline prior database: labeled sample clouds around watertight meshes.

Each class stores Q labeled points (inside/outside the mesh), a surface
registration cloud with normals, and a text description. Meshes are
re-centered at their bounding-box center; real-world scale is preserved,
pose and scale at inference time come from registration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatabaseError, DatabaseIntegrityError
from .geometry import PointCloud, TriangleMesh
from .meshops import (
    ensure_watertight,
    farthest_point_sample,
    interpolated_normals,
    point_in_mesh,
    surface_sample,
)

FORMAT_MAGIC = b"BRRP"
FORMAT_VERSION = 1
DEFAULT_Q = 5000
MIN_Q = 100
BOX_INFLATION = 1.2
SURFACE_NOISE_FRAC = 0.02
REGISTRATION_CLOUD_SIZE = 512

_SAMPLE_DTYPE = np.dtype([("point", "<f4", (3,)), ("label", "u1")])
_REG_DTYPE = np.dtype([("point", "<f4", (3,)), ("normal", "<f4", (3,))])


@dataclass(frozen=True)
class PriorClassRecord:
    class_id: int
    description: str
    prior_points: np.ndarray  # (Q, 3) canonical frame
    prior_labels: np.ndarray  # (Q,) in {0, 1}
    registration_cloud: PointCloud
    mesh_diag: float
    mesh_name: str = ""

    def __post_init__(self) -> None:
        pts = np.asarray(self.prior_points, dtype=np.float64)
        lab = np.asarray(self.prior_labels, dtype=np.uint8)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) != len(lab):
            raise DatabaseError("prior points and labels must align as (Q,3)/(Q,)")
        if len(pts) < MIN_Q:
            raise DatabaseError(f"class {self.class_id}: Q={len(pts)} below {MIN_Q}")
        if not ((lab == 1).any() and (lab == 0).any()):
            raise DatabaseError(f"class {self.class_id}: needs both labels")
        if self.registration_cloud.normals is None or not len(
            self.registration_cloud.points
        ):
            raise DatabaseError(
                f"class {self.class_id}: registration cloud with normals required"
            )
        if not self.mesh_diag > 0:
            raise DatabaseError(f"class {self.class_id}: mesh_diag must be positive")
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "prior_points", pts)
        object.__setattr__(self, "prior_labels", lab)


@dataclass(frozen=True)
class PriorDatabase:
    records: tuple[PriorClassRecord, ...]

    def __post_init__(self) -> None:
        ids = [r.class_id for r in self.records]
        if ids != list(range(len(ids))):
            raise DatabaseError("class ids must be contiguous from 0")
        descriptions = [r.description for r in self.records]
        if len(set(descriptions)) != len(descriptions):
            raise DatabaseError("descriptions must be unique")
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def descriptions(self) -> list[str]:
        return [r.description for r in self.records]

    def class_by_mesh_name(self, mesh_name: str) -> int:
        for r in self.records:
            if r.mesh_name == mesh_name:
                return r.class_id
        raise DatabaseError(f"no class built from mesh {mesh_name!r}")


def build_prior_record(
    mesh: TriangleMesh,
    description: str,
    class_id: int,
    q: int = DEFAULT_Q,
    seed: int = 0,
    mesh_name: str = "",
) -> PriorClassRecord:
    """Sample labeled points around one mesh in its canonical frame.

    Half the budget falls uniformly in the 1.2x-inflated bounding box,
    half on the surface perturbed by Gaussian noise (2% of the diagonal),
    so the label boundary is densely straddled.
    """
    mesh = ensure_watertight(mesh)
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    mesh = TriangleMesh(mesh.vertices - center, mesh.triangles)
    lo, hi = mesh.bounds()
    diag = float(np.linalg.norm(hi - lo))

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(class_id,)))
    n_box = q // 2
    n_surf = q - n_box
    half = 0.5 * BOX_INFLATION * (hi - lo)
    box_pts = rng.uniform(-half, half, size=(n_box, 3))
    surf_pts, _, _ = surface_sample(mesh, n_surf, rng)
    surf_pts = surf_pts + rng.normal(scale=SURFACE_NOISE_FRAC * diag, size=(n_surf, 3))
    pts = np.concatenate([box_pts, surf_pts])
    labels = point_in_mesh(mesh, pts, seed=seed).astype(np.uint8)

    reg_raw, tri_idx, bary = surface_sample(mesh, 4 * REGISTRATION_CLOUD_SIZE, rng)
    keep = farthest_point_sample(reg_raw, REGISTRATION_CLOUD_SIZE)
    reg_cloud = PointCloud(
        reg_raw[keep], normals=interpolated_normals(mesh, tri_idx[keep], bary[keep])
    )
    return PriorClassRecord(
        class_id=class_id,
        description=description,
        prior_points=pts,
        prior_labels=labels,
        registration_cloud=reg_cloud,
        mesh_diag=diag,
        mesh_name=mesh_name,
    )


def build_database(
    meshes: list[tuple[str, TriangleMesh, str]], q: int = DEFAULT_Q, seed: int = 0
) -> PriorDatabase:
    """Build records for (name, mesh, description) triples, ids in name order."""
    records = []
    for class_id, (name, mesh, description) in enumerate(
        sorted(meshes, key=lambda m: m[0])
    ):
        records.append(
            build_prior_record(
                mesh, description, class_id, q=q, seed=seed, mesh_name=name
            )
        )
    return PriorDatabase(tuple(records))


def _record_bytes(record: PriorClassRecord) -> bytes:
    samples = np.empty(len(record.prior_points), dtype=_SAMPLE_DTYPE)
    samples["point"] = record.prior_points.astype("<f4")
    samples["label"] = record.prior_labels
    reg = np.empty(len(record.registration_cloud.points), dtype=_REG_DTYPE)
    reg["point"] = record.registration_cloud.points.astype("<f4")
    reg["normal"] = record.registration_cloud.normals.astype("<f4")
    head = FORMAT_MAGIC + np.array(
        [FORMAT_VERSION, len(samples)], dtype="<u4"
    ).tobytes()
    return head + samples.tobytes() + np.array([len(reg)], dtype="<u4").tobytes() + reg.tobytes()


def _parse_record(
    raw: bytes, class_id: int, description: str, mesh_diag: float, mesh_name: str
) -> PriorClassRecord:
    if len(raw) < 12 or raw[:4] != FORMAT_MAGIC:
        raise DatabaseError(f"class {class_id}: bad record magic")
    version, q = np.frombuffer(raw, dtype="<u4", count=2, offset=4)
    if version != FORMAT_VERSION:
        raise DatabaseError(f"class {class_id}: unsupported version {version}")
    offset = 12
    need = offset + int(q) * _SAMPLE_DTYPE.itemsize + 4
    if len(raw) < need:
        raise DatabaseError(f"class {class_id}: truncated sample block")
    samples = np.frombuffer(raw, dtype=_SAMPLE_DTYPE, count=int(q), offset=offset)
    offset += int(q) * _SAMPLE_DTYPE.itemsize
    (n_reg,) = np.frombuffer(raw, dtype="<u4", count=1, offset=offset)
    offset += 4
    if len(raw) != offset + int(n_reg) * _REG_DTYPE.itemsize:
        raise DatabaseError(f"class {class_id}: truncated registration block")
    reg = np.frombuffer(raw, dtype=_REG_DTYPE, count=int(n_reg), offset=offset)
    normals = reg["normal"].astype(np.float64)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    lens[lens == 0] = 1.0
    return PriorClassRecord(
        class_id=class_id,
        description=description,
        prior_points=samples["point"].astype(np.float64),
        prior_labels=samples["label"].copy(),
        registration_cloud=PointCloud(
            reg["point"].astype(np.float64), normals=normals / lens
        ),
        mesh_diag=mesh_diag,
        mesh_name=mesh_name,
    )


def save_db(db: PriorDatabase, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    classes = []
    for record in db.records:
        raw = _record_bytes(record)
        fname = f"class_{record.class_id:04d}.bin"
        (root / fname).write_bytes(raw)
        classes.append(
            {
                "id": record.class_id,
                "description": record.description,
                "mesh_name": record.mesh_name,
                "q": int(len(record.prior_points)),
                "mesh_diag": record.mesh_diag,
                "file": fname,
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
    manifest = {"version": FORMAT_VERSION, "classes": classes}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_db(path) -> PriorDatabase:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatabaseError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatabaseError(f"unreadable manifest: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise DatabaseError(f"unsupported database version {manifest.get('version')}")
    records = []
    for entry in sorted(manifest.get("classes", []), key=lambda e: e["id"]):
        fpath = root / entry["file"]
        if not fpath.is_file():
            raise DatabaseError(f"missing record file: {fpath}")
        raw = fpath.read_bytes()
        digest = hashlib.sha256(raw).hexdigest()
        if digest != entry["sha256"]:
            raise DatabaseIntegrityError(
                f"checksum mismatch for {entry['file']}: "
                f"manifest {entry['sha256'][:12]}.., file {digest[:12]}.."
            )
        records.append(
            _parse_record(
                raw,
                class_id=int(entry["id"]),
                description=entry["description"],
                mesh_diag=float(entry["mesh_diag"]),
                mesh_name=entry.get("mesh_name", ""),
            )
        )
    return PriorDatabase(tuple(records))
