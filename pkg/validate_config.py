#!/usr/bin/env python3
import sys

from stable_averaging.cli import run


if __name__ == "__main__":
    raise SystemExit(run(["validate", *sys.argv[1:]]))
