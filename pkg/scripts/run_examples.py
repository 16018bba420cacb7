"""Run every shipped config and print one line per experiment."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from oneshm.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default=str(ROOT / "configs"))
    ap.add_argument("--out", default=str(ROOT / "out"))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    worst = 0
    for cfg in sorted(Path(args.configs).glob("*.json")):
        code = cli_main(["run", str(cfg), "--out", str(Path(args.out) / cfg.stem)])
        print(f"{cfg.stem:32s} exit {code}")
        # configs named bad_* are expected to be rejected with exit 2
        expected = 2 if cfg.stem.startswith("bad_") else 0
        worst = max(worst, int(code != expected))
    return worst


if __name__ == "__main__":
    sys.exit(main())
