"""Console entry point: run the scripted baseline against a live arena."""

from __future__ import annotations

import argparse
import json
import sys

from .baseline import MAX_CALLS_DEFAULT, baseline_diagnose


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="arena-baseline",
                                     description="scripted baseline diagnostician")
    parser.add_argument("--endpoint", required=True, help="tcp:HOST:PORT or http://HOST:PORT")
    parser.add_argument("--max-calls", type=int, default=MAX_CALLS_DEFAULT)
    args = parser.parse_args(argv)
    try:
        payload = baseline_diagnose(args.endpoint, max_calls=args.max_calls)
    except (ConnectionError, OSError) as exc:
        print(f"error: cannot reach arena at {args.endpoint}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
