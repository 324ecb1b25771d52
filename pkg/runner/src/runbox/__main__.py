"""Entry point so the service can be started as ``python -m runbox``."""

from .server import main

if __name__ == "__main__":
    raise SystemExit(main())
