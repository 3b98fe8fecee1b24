#!/usr/bin/env python3
from stable_averaging.cli import main


if __name__ == "__main__":
    raise SystemExit(main())
