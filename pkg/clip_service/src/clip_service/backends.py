"""Scoring backends for the classification service.

A backend turns one RGB image and a list of candidate descriptions into
a vector of similarity logits, one per description, in request order.
The service applies the softmax; backends only rank.

The builtin backend scores descriptions by the color words they
contain, matched against the mean color of the crop. It needs no model
weights, loads instantly, and is fully deterministic, which makes it
the right default for offline runs and for tests. Heavier
vision-language backends can register under new model ids without
touching the HTTP layer.
"""

from __future__ import annotations

import re

import numpy as np
from PIL import Image

DEFAULT_MODEL = "builtin:color"

# Anchor RGB for each color word the builtin backend understands.
COLOR_ANCHORS: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 180, 70),
    "blue": (40, 80, 220),
    "yellow": (230, 220, 50),
    "orange": (240, 150, 40),
    "purple": (150, 60, 200),
    "pink": (240, 150, 190),
    "brown": (140, 90, 50),
    "white": (245, 245, 245),
    "black": (20, 20, 20),
    "gray": (128, 128, 128),
    "grey": (128, 128, 128),
}

# Logit temperature: RGB distances span 0..441, dividing by 40 gives
# near-saturated softmax for clearly separated colors.
_SCALE = 40.0

_WORD = re.compile(r"[a-z]+")


class ColorBackend:
    """Ranks descriptions by distance from the crop's mean color to the
    anchor of each color word they mention.

    Descriptions without any known color word receive the mean anchor
    distance, so they neither win nor lose against informative ones.
    """

    model_id = DEFAULT_MODEL

    def __init__(self) -> None:
        self._names = list(COLOR_ANCHORS)
        self._anchors = np.asarray(list(COLOR_ANCHORS.values()), dtype=np.float64)

    def load(self) -> None:
        """Nothing to fetch; the builtin backend is ready on construction."""

    def scores(self, image: Image.Image, descriptions: list[str]) -> np.ndarray:
        rgb = np.asarray(image.convert("RGB"), dtype=np.float64)
        mean = rgb.reshape(-1, 3).mean(axis=0)
        dist = np.linalg.norm(self._anchors - mean, axis=1)
        neutral = -float(dist.mean()) / _SCALE
        logits = np.empty(len(descriptions), dtype=np.float64)
        for i, text in enumerate(descriptions):
            words = _WORD.findall(text.lower())
            hits = [dist[self._names.index(w)] for w in words if w in COLOR_ANCHORS]
            # A description naming several colors is scored by its best match.
            logits[i] = -min(hits) / _SCALE if hits else neutral
        return logits


def make_backend(model_id: str):
    """Instantiate the backend registered under ``model_id``.

    Raises ValueError for ids this build does not ship, so a bad
    ``BRRP_CLIP_MODEL`` fails at startup instead of at first request.
    """
    if model_id == DEFAULT_MODEL:
        return ColorBackend()
    raise ValueError(f"unknown model id {model_id!r}")
