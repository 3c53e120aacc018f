"""HTTP microservice that scores an image crop against free-form text
descriptions and returns normalized class probabilities.

The reconstruction pipeline talks to this service through a single
endpoint, ``POST /classify``, so any scoring backend that can rank
descriptions against an image can sit behind it. The default backend
works offline from pixel statistics alone.
"""

from .app import create_app
from .backends import make_backend

__all__ = ["create_app", "make_backend"]
