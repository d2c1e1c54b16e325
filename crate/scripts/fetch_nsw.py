#!/usr/bin/env python3
"""Build data/nsw_psid.csv: the NSW treated men (185) plus PSID controls (2490).

The Dehejia-Wahba NSW/PSID sample is redistributed as `jtrain3` in the
`wooldridge` Python package. This script downloads that package with pip
(no install needed), extracts the table and writes the CSV layout expected
by `honest-ate`:

    treat, age, educ, black, hisp, married, re74, re75, emp74, emp75, re78

Earnings are in thousands of 1982 dollars. Employment indicators are defined
as nonzero earnings in the corresponding year.

Usage: python3 scripts/fetch_nsw.py [output.csv]
"""
import bz2
import csv
import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile


def main() -> None:
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/nsw_psid.csv")
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "wooldridge", "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("wooldridge-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            raw = bz2.decompress(zf.read("wooldridge/datasets/jtrain3.csv.bz2")).decode()
    rows = list(csv.DictReader(io.StringIO(raw)))
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["treat", "age", "educ", "black", "hisp", "married",
                    "re74", "re75", "emp74", "emp75", "re78"])
        for r in rows:
            re74, re75 = float(r["re74"]), float(r["re75"])
            w.writerow([r["train"], r["age"], r["educ"], r["black"], r["hisp"], r["married"],
                        r["re74"], r["re75"], int(re74 > 0), int(re75 > 0), r["re78"]])
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
