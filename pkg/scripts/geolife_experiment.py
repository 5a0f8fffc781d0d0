#!/usr/bin/env python3
"""GeoLife car-vs-bus run: ``configs/geolife.ini`` with the data root filled in.

    python3 scripts/geolife_experiment.py "/data/Geolife Trajectories 1.3" --out out/geolife

Extra arguments are passed through to ``gradings experiment``.
"""
import argparse
import sys
from pathlib import Path

from gradings.cli import main as gradings

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "geolife.ini"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", help="folder containing Data/<user>/Trajectory")
    ap.add_argument("--config", default=str(CONFIG))
    args, rest = ap.parse_known_args()
    return gradings(["experiment", "--config", args.config, "--data-root", args.root, *rest])


if __name__ == "__main__":
    sys.exit(main())
