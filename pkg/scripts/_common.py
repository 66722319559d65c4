"""Shared helpers for the experiment scripts."""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

from dorl_lab.config import load_config
from dorl_lab.experiments import SEEDS, prepare

ROOT = Path(__file__).resolve().parent.parent


def parser(description: str, default_out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(ROOT / "configs" / "trend.json"))
    p.add_argument("--out", default=default_out, help="CSV to write")
    p.add_argument("--seeds", type=int, default=len(SEEDS), help="number of training seeds")
    return p


def setup(args):
    return prepare(load_config(args.config)), tuple(range(args.seeds))


def write_rows(rows: list[dict], path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print({k: round(v, 4) if isinstance(v, float) else v for k, v in r.items()})
    print(f"wrote {path}")
