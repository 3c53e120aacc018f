"""Command-line entry points: build-prior, gen-scenes, reconstruct, eval.

Every run echoes its effective configuration to config-echo.json inside
the output directory and logs without timestamps so identical inputs
give identical artifacts. Exit codes: 0 success, 2 usage or validation,
3 every object failed, 4 corrupted input data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .errors import (
    BrrpError,
    DatabaseError,
    DatabaseIntegrityError,
    SceneFormatError,
)
from .experiment import run_experiment, write_csv, write_json
from .mesh_io import load_mesh, save_mesh_ply
from .metrics import shifted_scene
from .model import LossWeights
from .pipeline import PipelineConfig, reconstruct_scene, save_reconstruction
from .prior_db import DEFAULT_Q, build_database, load_db, save_db
from .primitives import DEFAULT_DESCRIPTIONS, default_pool
from .registration import RegistrationParams
from .retrieval import FileBackend, RemoteBackend, RetrievalConfig
from .sampling import SamplingConfig
from .scene_io import load_scene, save_scene
from .scenegen import SceneGenConfig, generate_scene
from .svgd import SvgdConfig

logger = logging.getLogger("brrp")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ALL_FAILED = 3
EXIT_CORRUPT = 4

MESH_SUFFIXES = (".ply", ".obj")


class UsageError(Exception):
    """Bad arguments or invalid input files; maps to exit code 2."""


class _UniformBackend:
    def probabilities(self, object_id, crop, descriptions):
        return np.full(len(descriptions), 1.0 / len(descriptions))


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--threads", type=int, default=1,
                        help="upper bound on worker parallelism")


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("hyperparameter overrides")
    g.add_argument("--svgd.particles", dest="svgd_particles", type=int)
    g.add_argument("--svgd.iterations", dest="svgd_iterations", type=int)
    g.add_argument("--svgd.step-size", dest="svgd_step_size", type=float)
    g.add_argument("--svgd.obs-batch", dest="svgd_obs_batch", type=int)
    g.add_argument("--svgd.prior-batch", dest="svgd_prior_batch", type=int)
    g.add_argument("--loss.lambda-obs", dest="loss_lambda_obs", type=float)
    g.add_argument("--loss.lambda-prior", dest="loss_lambda_prior", type=float)
    g.add_argument("--loss.lambda-reg", dest="loss_lambda_reg", type=float)
    g.add_argument("--sampling.n-ray", dest="sampling_n_ray", type=int)
    g.add_argument("--sampling.cell-size", dest="sampling_cell_size", type=float)
    g.add_argument("--sampling.max-rays", dest="sampling_max_rays", type=int)
    g.add_argument("--retrieval.k", dest="retrieval_k", type=int)
    g.add_argument("--retrieval.padding", dest="retrieval_padding", type=float)
    g.add_argument("--reg.hypotheses", dest="reg_hypotheses", type=int)
    g.add_argument("--reg.inlier-threshold", dest="reg_inlier_threshold", type=float)
    g.add_argument("--mesh.resolution", dest="mesh_resolution", type=int)
    g.add_argument("--mesh.level", dest="mesh_level", type=float)
    parser.add_argument("--timings", action="store_true",
                        help="record wall-clock times (off by default for "
                        "byte-identical outputs)")


def _pipeline_config(args) -> PipelineConfig:
    def over(base, **pairs):
        updates = {k: v for k, v in pairs.items() if v is not None}
        return replace(base, **updates) if updates else base

    try:
        return PipelineConfig(
            sampling=over(
                SamplingConfig(),
                n_ray=args.sampling_n_ray,
                cell_size=args.sampling_cell_size,
                max_rays=args.sampling_max_rays,
            ),
            retrieval=over(
                RetrievalConfig(),
                k=args.retrieval_k,
                padding_frac=args.retrieval_padding,
            ),
            registration=over(
                RegistrationParams(),
                hypotheses=args.reg_hypotheses,
                inlier_threshold=args.reg_inlier_threshold,
            ),
            svgd=over(
                SvgdConfig(),
                n_particles=args.svgd_particles,
                n_iterations=args.svgd_iterations,
                step_size=args.svgd_step_size,
                obs_batch=args.svgd_obs_batch,
                prior_batch=args.svgd_prior_batch,
            ),
            loss=over(
                LossWeights(),
                lambda_obs=args.loss_lambda_obs,
                lambda_prior=args.loss_lambda_prior,
                lambda_reg=args.loss_lambda_reg,
            ),
            mesh_resolution=args.mesh_resolution or 64,
            mesh_level=args.mesh_level if args.mesh_level is not None else 0.5,
            seed=args.seed,
        )
    except (ValueError, BrrpError) as exc:
        raise UsageError(f"invalid override: {exc}") from exc


def _echo_config(out_dir: Path, command: str, args, config=None) -> None:
    payload = {
        "command": command,
        "argv": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
    }
    if config is not None:
        payload["pipeline"] = asdict(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config-echo.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str)
    )


def _load_mesh_dir(path: Path) -> list[tuple[str, object]]:
    if not path.is_dir():
        raise UsageError(f"mesh directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in MESH_SUFFIXES)
    if not files:
        raise UsageError(f"no .ply/.obj meshes in {path}")
    return [(p.stem, load_mesh(p)) for p in files]


def _load_descriptions(path: Path, names: list[str]) -> dict[str, str]:
    if not path.is_file():
        raise UsageError(f"descriptions file not found: {path}")
    table = json.loads(path.read_text())
    out = {}
    for name in names:
        for key in (name, f"{name}.ply", f"{name}.obj"):
            if key in table:
                out[name] = str(table[key])
                break
        else:
            raise UsageError(f"descriptions file has no entry for mesh {name!r}")
    return out


def _validate_probs(path: Path, n_classes: int) -> FileBackend:
    if not path.is_file():
        raise UsageError(f"probs file not found: {path}")
    backend = FileBackend.from_path(path)
    for key, vec in backend.table.items():
        if len(vec) != n_classes:
            raise UsageError(
                f"probs entry {key!r} has {len(vec)} values but the database "
                f"defines {n_classes} classes"
            )
    return backend


def _pick_backend(args, db, scene=None):
    if getattr(args, "oracle", False):
        if scene is not None and scene.ground_truth is None:
            raise UsageError("--oracle requires scenes with ground truth")
        from .experiment import oracle_for_scene

        return oracle_for_scene(scene, db) if scene is not None else None
    if getattr(args, "probs", None):
        return _validate_probs(Path(args.probs), len(db))
    if getattr(args, "classifier", None):
        return RemoteBackend(url=args.classifier)
    logger.info("no classifier given; class probabilities default to uniform")
    return _UniformBackend()


def cmd_build_prior(args) -> int:
    out = Path(args.out)
    meshes = _load_mesh_dir(Path(args.meshes))
    descriptions = _load_descriptions(Path(args.descriptions), [n for n, _ in meshes])
    triples = []
    rejected = []
    from .errors import MeshRejectedError
    from .meshops import ensure_watertight

    for name, mesh in meshes:
        try:
            triples.append((name, ensure_watertight(mesh), descriptions[name]))
        except MeshRejectedError as exc:
            rejected.append(name)
            logger.warning("rejecting mesh %s: %s", name, exc)
    if not triples:
        raise UsageError("no usable meshes; nothing to build")
    db = build_database(triples, q=args.samples, seed=args.seed)
    save_db(db, out)
    _echo_config(out, "build-prior", args)
    for record in db.records:
        print(
            f"class {record.class_id}: {record.mesh_name} "
            f"({len(record.prior_points)} samples) - {record.description}"
        )
    if rejected:
        print(f"rejected {len(rejected)} mesh(es): {', '.join(rejected)}")
    print(f"wrote {len(db)} classes to {out}")
    return EXIT_OK


def cmd_gen_scenes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.meshes:
        pool = _load_mesh_dir(Path(args.meshes))
        descriptions = None
    else:
        pool = sorted(default_pool().items())
        descriptions = dict(DEFAULT_DESCRIPTIONS)
        mesh_dir = out / "meshes"
        mesh_dir.mkdir(exist_ok=True)
        for name, mesh in pool:
            save_mesh_ply(mesh_dir / f"{name}.ply", mesh)
        (out / "descriptions.json").write_text(
            json.dumps(descriptions, indent=2, sort_keys=True)
        )
    base = SceneGenConfig(
        max_objects=args.max_objects,
        image_width=args.width,
        image_height=args.height,
        seed=args.seed,
    )
    summary = []
    for i in range(args.count):
        child = int(
            np.random.SeedSequence(entropy=args.seed, spawn_key=(i,)).generate_state(1)[0]
        )
        scene, info = generate_scene(pool, replace(base, seed=child))
        scene_dir = out / f"scene_{i:03d}"
        save_scene(scene_dir, scene)
        summary.append({"scene": scene_dir.name, **info})
        logger.info(
            "scene %03d: placed %d/%d objects", i, info["placed"], info["requested"]
        )
    (out / "gen_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _echo_config(out, "gen-scenes", args)
    print(f"wrote {args.count} scene(s) to {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    out = Path(args.out)
    scene = load_scene(Path(args.scene))
    db = load_db(Path(args.db))
    config = _pipeline_config(args)
    backend = _pick_backend(args, db, scene)
    _echo_config(out, "reconstruct", args, config)
    start = time.perf_counter()
    recon = reconstruct_scene(scene, db, backend, config)
    timings = {-1: time.perf_counter() - start} if args.timings else None
    save_reconstruction(recon, out, config, timings=timings)
    (out / "errors.json").write_text(
        json.dumps(recon.errors, indent=2, sort_keys=True)
    )
    for label, message in sorted(recon.errors.items()):
        logger.error("object %d failed: %s", label, message)
    print(f"reconstructed {len(recon.objects)} object(s), {len(recon.errors)} failed")
    if not recon.objects:
        return EXIT_ALL_FAILED
    return EXIT_OK


def _scene_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise UsageError(f"scene directory not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("scene_"))


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_dirs = _scene_dirs(Path(args.scenes))
    scenes = [(p.name, load_scene(p)) for p in scene_dirs]
    db = load_db(Path(args.db))
    mesh_dir = Path(args.meshes) if args.meshes else Path(args.scenes) / "meshes"
    pool = dict(_load_mesh_dir(mesh_dir))
    config = _pipeline_config(args)
    _echo_config(out, "eval", args, config)

    if args.oracle:
        for scene_id, scene in scenes:
            if scene.ground_truth is None:
                raise UsageError(f"--oracle requires ground truth ({scene_id})")
        backend_factory = None  # run_experiment defaults to the oracle
    elif args.probs:
        shared = _validate_probs(Path(args.probs), len(db))
        backend_factory = lambda scene: shared
    elif args.classifier:
        remote = RemoteBackend(url=args.classifier)
        backend_factory = lambda scene: remote
    else:
        uniform = _UniformBackend()
        backend_factory = lambda scene: uniform

    report = run_experiment(
        scenes,
        db,
        pool,
        config,
        backend_factory=backend_factory,
        shift_dx=args.shift_seg,
        timings=args.timings,
    )
    write_csv(report, out / "results.csv")
    write_json(report, out / "results.json", config)
    for method in sorted({r.method for r in report.rows}):
        mean_ch, excluded = report.mean_chamfer(method)
        print(
            f"{method}: mean IoU {report.mean_iou(method):.4f}, "
            f"mean chamfer {mean_ch:.2f} cm ({excluded} excluded), "
            f"{len(report.method_rows(method))} objects"
        )
    if not report.rows and report.errors:
        return EXIT_ALL_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brrp",
        description="Bayesian tabletop scene reconstruction from one RGBD image",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-prior", help="build the class prior database")
    p.add_argument("--meshes", required=True)
    p.add_argument("--descriptions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=DEFAULT_Q)
    _add_common(p)
    p.set_defaults(func=cmd_build_prior)

    p = sub.add_parser("gen-scenes", help="generate synthetic RGBD scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--meshes", help="mesh pool directory (default: built-in shapes)")
    p.add_argument("--max-objects", type=int, default=10)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=120)
    _add_common(p)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("reconstruct", help="reconstruct one scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    cls = p.add_mutually_exclusive_group()
    cls.add_argument("--probs", help="JSON file of per-object class probabilities")
    cls.add_argument("--classifier", help="URL of a zero-shot classifier service")
    cls.add_argument("--oracle", action="store_true",
                     help="use ground-truth classes (synthetic scenes)")
    _add_common(p)
    _add_overrides(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="run the paired evaluation suite")
    p.add_argument("--scenes", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--meshes", help="canonical mesh dir (default: SCENES/meshes)")
    p.add_argument("--shift-seg", type=int, default=0,
                   help="shift segmentation horizontally before reconstruction")
    cls = p.add_mutually_exclusive_group()
    cls.add_argument("--probs")
    cls.add_argument("--classifier")
    cls.add_argument("--oracle", action="store_true")
    _add_common(p)
    _add_overrides(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    _setup_logging(args.log_level)
    if args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (DatabaseIntegrityError, DatabaseError) as exc:
        logger.error("corrupted database: %s", exc)
        return EXIT_CORRUPT
    except SceneFormatError as exc:
        logger.error("bad scene: %s", exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        logger.error("missing file: %s", exc)
        return EXIT_USAGE
    except (BrrpError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
