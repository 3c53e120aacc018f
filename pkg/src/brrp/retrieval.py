"""Class retrieval: P(class | detection) per object and top-k selection.

Classification itself is delegated to a backend (file of precomputed
probabilities, synthetic oracle, or a remote zero-shot service); this
module owns cropping, normalization, top-k semantics and the registration
of retrieved classes into the scene.
"""

from __future__ import annotations

import base64
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .geometry import PointCloud, SceneRecord
from .prior_db import PriorDatabase
from .registration import (
    RegistrationParams,
    RegistrationResult,
    register_with_scale_scan,
)

logger = logging.getLogger("brrp")

DEFAULT_TOP_K = 3
DEFAULT_PADDING = 0.1
PROB_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ClassProbabilities:
    object_id: int
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if len(p) == 0 or (p < 0).any() or not np.isfinite(p).all():
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > PROB_TOLERANCE:
            raise ValueError(f"probabilities sum to {p.sum():.8f}, expected 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class RetrievedClass:
    class_id: int
    weight: float  # raw P(c|R), not renormalized
    registration: RegistrationResult
    points: np.ndarray  # prior samples in the world frame
    labels: np.ndarray


@dataclass(frozen=True)
class RetrievedPrior:
    object_id: int
    entries: tuple[RetrievedClass, ...] = ()

    def __post_init__(self) -> None:
        ids = [e.class_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("retrieved classes must be distinct")

    def __len__(self) -> int:
        return len(self.entries)


class Classifier(Protocol):
    def probabilities(
        self, object_id: int, crop: np.ndarray, descriptions: list[str]
    ) -> np.ndarray: ...


@dataclass
class FileBackend:
    """Reads per-object probability vectors from probs.json."""

    table: dict[str, list[float]]

    @classmethod
    def from_path(cls, path) -> "FileBackend":
        return cls(json.loads(Path(path).read_text()))

    def probabilities(self, object_id, crop, descriptions):
        key = str(object_id)
        if key not in self.table:
            raise ValueError(f"probs file has no entry for object {object_id}")
        p = np.asarray(self.table[key], dtype=np.float64)
        if len(p) != len(descriptions):
            raise ValueError(
                f"object {object_id}: {len(p)} probabilities for "
                f"{len(descriptions)} classes"
            )
        return p


@dataclass
class OracleBackend:
    """Synthetic-evaluation classifier: confusion-smoothed one-hot truth."""

    true_classes: dict[int, int]
    confusion: float = 0.0

    def probabilities(self, object_id, crop, descriptions):
        c = len(descriptions)
        if object_id not in self.true_classes:
            raise ValueError(f"oracle has no true class for object {object_id}")
        onehot = np.zeros(c)
        onehot[self.true_classes[object_id]] = 1.0
        return (1.0 - self.confusion) * onehot + self.confusion / c


@dataclass
class RemoteBackend:
    """HTTP client for the zero-shot classification service."""

    url: str
    timeout: float = 10.0
    session: object = None

    def probabilities(self, object_id, crop, descriptions):
        import requests

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(crop).save(buf, format="PNG")
        payload = {
            "image": base64.b64encode(buf.getvalue()).decode("ascii"),
            "descriptions": list(descriptions),
        }
        post = self.session.post if self.session is not None else requests.post
        response = post(
            self.url.rstrip("/") + "/classify", json=payload, timeout=self.timeout
        )
        response.raise_for_status()
        probs = np.asarray(response.json()["probs"], dtype=np.float64)
        if len(probs) != len(descriptions):
            raise ValueError("remote classifier returned wrong-length vector")
        return probs


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = DEFAULT_TOP_K
    padding_frac: float = DEFAULT_PADDING

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("top-k count must be at least 1")


def crop_for_object(
    scene: SceneRecord, object_id: int, padding_frac: float = DEFAULT_PADDING
) -> np.ndarray:
    """RGB crop of the object's mask bounding box, padded and clamped."""
    mask = scene.segmentation == object_id
    if not mask.any():
        raise ValueError(f"object {object_id} not present in segmentation")
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    pad_r = int(round(padding_frac * (r1 - r0)))
    pad_c = int(round(padding_frac * (c1 - c0)))
    h, w = mask.shape
    return scene.rgb[
        max(r0 - pad_r, 0) : min(r1 + pad_r, h),
        max(c0 - pad_c, 0) : min(c1 + pad_c, w),
    ].copy()


def classify(
    backend: Classifier,
    object_id: int,
    crop: np.ndarray,
    descriptions: list[str],
) -> ClassProbabilities:
    """Run the backend and normalize; unreachable backends degrade to
    uniform probabilities so reconstruction can proceed prior-free-ish."""
    if not descriptions:
        raise ValueError("descriptions must be nonempty")
    try:
        p = np.asarray(
            backend.probabilities(object_id, crop, descriptions), dtype=np.float64
        )
        if len(p) != len(descriptions) or (p < 0).any() or not np.isfinite(p).all():
            raise ValueError("invalid probability vector")
        total = p.sum()
        if total <= 0:
            raise ValueError("probability vector sums to zero")
        p = p / total
    except Exception as exc:  # availability first: fall back to uniform
        logger.warning("classifier failed for object %d (%s); using uniform", object_id, exc)
        p = np.full(len(descriptions), 1.0 / len(descriptions))
    return ClassProbabilities(object_id, p)


def top_k(probs: ClassProbabilities, k: int) -> list[tuple[int, float]]:
    """k most probable classes; ties go to the lower class id; weights stay raw."""
    c = len(probs.probs)
    if not 1 <= k <= c:
        raise ValueError(f"k must lie in [1, {c}], got {k}")
    order = np.argsort(-probs.probs, kind="stable")[:k]
    return [(int(i), float(probs.probs[i])) for i in order]


def retrieve_and_register(
    scene: SceneRecord,
    object_id: int,
    db: PriorDatabase,
    observed: PointCloud,
    backend: Classifier,
    config: RetrievalConfig = RetrievalConfig(),
    params: RegistrationParams = RegistrationParams(),
    seed: int = 0,
) -> RetrievedPrior:
    """classify -> top_k -> register each class -> transform prior samples.

    Classes whose registration fails are dropped without redistributing
    their weight; an empty result tells the caller to go prior-free.
    """
    crop = crop_for_object(scene, object_id, config.padding_frac)
    probs = classify(backend, object_id, crop, db.descriptions)
    entries = []
    for class_id, weight in top_k(probs, min(config.k, len(db))):
        record = db.records[class_id]
        child = int(
            np.random.SeedSequence(
                entropy=seed, spawn_key=(object_id, class_id)
            ).generate_state(1)[0]
        )
        result = register_with_scale_scan(record, observed, params, seed=child)
        if not result.succeeded:
            logger.info(
                "object %d: registration of class %d failed, dropping", object_id, class_id
            )
            continue
        world_points = result.transform.apply(record.prior_points)
        entries.append(
            RetrievedClass(
                class_id=class_id,
                weight=weight,
                registration=result,
                points=world_points,
                labels=record.prior_labels.copy(),
            )
        )
    return RetrievedPrior(object_id, tuple(entries))
