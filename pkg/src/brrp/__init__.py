"""Robust Bayesian tabletop scene reconstruction from one segmented RGBD image.

Per-object continuous occupancy posteriors (Hilbert-map features, Stein
variational inference) under retrieval-augmented shape priors registered
from a mesh database, with a synthetic scene generator and paired
evaluation harness.
"""

from .errors import (
    BrrpError,
    DatabaseError,
    DatabaseIntegrityError,
    EmptyCloudError,
    EmptySegmentError,
    InsufficientParticlesError,
    MeshRejectedError,
    NonFiniteGradientError,
    PlaneFitError,
    SceneFormatError,
    TooFewPointsError,
)
from .geometry import (
    CameraIntrinsics,
    GroundTruthObject,
    PointCloud,
    SceneRecord,
    SimilarityTransform,
    TriangleMesh,
    backproject,
)
from .hilbert import HingeGrid, ObjectFrame, WeightParticleSet, default_grid
from .model import LossWeights, OccupancyPosterior, loss, loss_gradient
from .pipeline import (
    ObjectPosterior,
    PipelineConfig,
    SceneReconstruction,
    extract_mesh,
    reconstruct_object,
    reconstruct_scene,
    save_reconstruction,
)
from .prior_db import PriorDatabase, build_database, load_db, save_db
from .registration import RegistrationParams, RegistrationResult, register_with_scale_scan
from .retrieval import (
    FileBackend,
    OracleBackend,
    RemoteBackend,
    RetrievalConfig,
    retrieve_and_register,
)
from .sampling import ObservationSamples, SamplingConfig, build_observation
from .scenegen import SceneGenConfig, generate_scene
from .svgd import SvgdConfig, run as run_svgd

__version__ = "0.1.0"

__all__ = [
    "BrrpError",
    "CameraIntrinsics",
    "DatabaseError",
    "DatabaseIntegrityError",
    "EmptyCloudError",
    "EmptySegmentError",
    "FileBackend",
    "GroundTruthObject",
    "HingeGrid",
    "InsufficientParticlesError",
    "LossWeights",
    "MeshRejectedError",
    "NonFiniteGradientError",
    "ObjectFrame",
    "ObjectPosterior",
    "ObservationSamples",
    "OccupancyPosterior",
    "OracleBackend",
    "PipelineConfig",
    "PlaneFitError",
    "PointCloud",
    "PriorDatabase",
    "RegistrationParams",
    "RegistrationResult",
    "RemoteBackend",
    "RetrievalConfig",
    "SamplingConfig",
    "SceneFormatError",
    "SceneGenConfig",
    "SceneReconstruction",
    "SceneRecord",
    "SimilarityTransform",
    "SvgdConfig",
    "TooFewPointsError",
    "TriangleMesh",
    "WeightParticleSet",
    "backproject",
    "build_database",
    "build_observation",
    "default_grid",
    "extract_mesh",
    "generate_scene",
    "load_db",
    "loss",
    "loss_gradient",
    "reconstruct_object",
    "reconstruct_scene",
    "register_with_scale_scan",
    "retrieve_and_register",
    "run_svgd",
    "save_db",
    "save_reconstruction",
]
