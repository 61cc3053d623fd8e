#!/usr/bin/env python3
"""Download the red wine quality table and convert it to benchmark form.

Needs network access to the UCI archive. Writes data/winequality_red.csv
(comma-separated, binary quality_good label) and its schema manifest; the
raw file is kept alongside as data/winequality-red.csv.

Usage: python scripts/fetch_winequality.py [--data-dir data]
"""

import argparse
import sys
import urllib.request
from pathlib import Path

URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/wine-quality/winequality-red.csv"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="data")
    args = parser.parse_args()

    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    raw = data_dir / "winequality-red.csv"
    if not raw.exists():
        print(f"downloading {URL}")
        try:
            with urllib.request.urlopen(URL, timeout=60) as resp:
                raw.write_bytes(resp.read())
        except OSError as exc:
            print(f"download failed ({exc}); fetch the file manually and place it at {raw}",
                  file=sys.stderr)
            return 1

    from tabadv.builtin import convert_winequality_red

    entry = convert_winequality_red(raw, data_dir)
    print(f"wrote {entry.csv_path} and {entry.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
