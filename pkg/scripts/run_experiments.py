"""Run the bundled experiment configs through the command line entry point.

Usage: python3 scripts/run_experiments.py [name ...] [--out results]

Each config in scripts/configs/ lands in <out>/<name>/ with its manifest.
Without names every config is run; the cavity ones take the longest.
"""
import argparse
import json
import os
import sys

from arrayrecoil.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, "configs")


def available():
    return sorted(f[:-5] for f in os.listdir(CONFIGS) if f.endswith(".json"))


def run(name, out_root):
    path = os.path.join(CONFIGS, name + ".json")
    with open(path) as fh:
        experiment = json.load(fh)["experiment"]
    out = os.path.join(out_root, name)
    code = main([experiment, "--config", path, "--out", out])
    with open(os.path.join(out, "manifest.json")) as fh:
        manifest = json.load(fh)
    print(f"{name}: exit {code}, {manifest['wall_time']:.1f} s")
    print(json.dumps(manifest.get("summary", manifest.get("error")), indent=1))
    return code


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("names", nargs="*", help=f"any of {', '.join(available())}")
    p.add_argument("--out", default="results")
    args = p.parse_args()
    codes = [run(n, args.out) for n in (args.names or available())]
    sys.exit(max(codes, default=0))
