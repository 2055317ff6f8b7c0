from __future__ import annotations

from scree.cli import main


if __name__ == "__main__":
    raise SystemExit(main())
