"""Service launcher: `guidance-service --port 8711`.

GUIDANCE_MODEL_CACHE selects where a model implementation may cache assets;
the bundled procedural model needs none but the variable is honored and
echoed at startup for operational parity with weight-backed models.
"""

from __future__ import annotations

import argparse
import os

import uvicorn

from .app import create_app
from .model import MODEL_VERSION


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="guidance-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8711)
    args = parser.parse_args(argv)
    cache = os.environ.get("GUIDANCE_MODEL_CACHE", "~/.cache/guidance-service")
    print(f"model {MODEL_VERSION}, cache dir {cache}")
    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
