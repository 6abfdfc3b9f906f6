"""Shared argument handling for the experiment scripts."""

import argparse
import json
import logging
from pathlib import Path

RESULTS = Path(__file__).resolve().parent.parent / "results"


def parser(description: str, seeds: int, epochs: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, default=seeds, help="number of seeds to try (run sequentially)")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--out", type=Path, help="result JSON path (default: results/<name>.json)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup_logging(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(asctime)s %(message)s")


def save(result: dict, out: Path | None, name: str) -> Path:
    path = out or RESULTS / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2) + "\n")
    return path
