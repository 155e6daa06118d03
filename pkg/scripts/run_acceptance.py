"""Run the acceptance gate and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py            # all 11 criteria (tens of minutes)
    python scripts/run_acceptance.py --quick    # skip the slow ones (3, 4, 7, 8, 9)
"""

import argparse
import pathlib
import sys

import pytest


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    root = pathlib.Path(__file__).resolve().parents[1]
    argv = [str(root / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    if args.quick:
        argv += ["-m", "not slow"]
    sys.exit(pytest.main(argv))


if __name__ == "__main__":
    main()
