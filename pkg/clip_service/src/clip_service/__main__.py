"""Serve the classification API over HTTP.

Model and port come from the environment: BRRP_CLIP_MODEL selects the
scoring backend, BRRP_CLIP_PORT the listen port (default 8000).
"""

from __future__ import annotations

import os

from .app import create_app


def resolve_port() -> int:
    raw = os.environ.get("BRRP_CLIP_PORT", "8000")
    try:
        port = int(raw)
    except ValueError:
        raise SystemExit(f"BRRP_CLIP_PORT must be an integer, got {raw!r}")
    if not 0 < port < 65536:
        raise SystemExit(f"BRRP_CLIP_PORT out of range: {port}")
    return port


def main() -> None:
    import uvicorn

    uvicorn.run(create_app(), host="0.0.0.0", port=resolve_port())


if __name__ == "__main__":
    main()
