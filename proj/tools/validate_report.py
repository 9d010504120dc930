#!/usr/bin/env python3
"""Validate report.json files against schemas/report.schema.json."""
import argparse
import json
import sys
from pathlib import Path

import jsonschema


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("reports", nargs="+", type=Path)
    ap.add_argument("--schema", type=Path, default=Path(__file__).resolve().parent.parent / "schemas" / "report.schema.json")
    args = ap.parse_args()

    schema = json.loads(args.schema.read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)
    failed = 0
    for path in args.reports:
        errors = sorted(validator.iter_errors(json.loads(path.read_text())), key=lambda e: e.json_path)
        for e in errors[:20]:
            print(f"{path}: {e.json_path}: {e.message}", file=sys.stderr)
        failed += bool(errors)
        print(f"{path}: {'FAIL' if errors else 'ok'}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
