#!/usr/bin/env python3
"""Fetch the two large benchmark tables that are not bundled.

credit: default-of-credit-card-clients, 30000 rows x 23 features.
madelon: synthetic hypercube-cluster set, 4400 rows x 500 features
         (train+valid portions, which carry the published labels).

Both come from the UCI repository, so this script needs network access;
the bundled breast/wine tables (scripts/build_datasets.py) do not.
"""

import csv
import io
import urllib.request
import zipfile
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "data"

CREDIT_URL = ("https://archive.ics.uci.edu/static/public/350/"
              "default+of+credit+card+clients.zip")
MADELON_BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases/madelon/MADELON/"


def fetch(url: str) -> bytes:
    print(f"fetching {url}")
    with urllib.request.urlopen(url, timeout=120) as resp:
        return resp.read()


def write_credit():
    try:
        from openpyxl import load_workbook
    except ImportError:
        raise SystemExit("credit needs openpyxl (the UCI file is an .xls workbook)")
    blob = fetch(CREDIT_URL)
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        name = next(n for n in zf.namelist() if n.endswith((".xls", ".xlsx")))
        sheet = load_workbook(io.BytesIO(zf.read(name)), read_only=True).active
    rows = list(sheet.iter_rows(values_only=True))
    header = [str(c) for c in rows[1][1:-1]] + ["label"]
    with open(OUT / "credit.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows[2:]:
            writer.writerow([repr(float(v)) for v in row[1:-1]] + [int(row[-1])])
    print(f"wrote {OUT / 'credit.csv'} ({len(rows) - 2} rows)")


def write_madelon():
    parts = []
    for split in ("train", "valid"):
        x = fetch(MADELON_BASE + f"madelon_{split}.data").decode()
        y = fetch(MADELON_BASE.rsplit("/", 2)[0] + f"/madelon_{split}.labels"
                  if split == "valid" else MADELON_BASE + "madelon_train.labels").decode()
        xs = [line.split() for line in x.strip().splitlines()]
        ys = [line.strip() for line in y.strip().splitlines()]
        parts += list(zip(xs, ys))
    with open(OUT / "madelon.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(500)] + ["label"])
        for features, label in parts:
            writer.writerow(features + [label])
    print(f"wrote {OUT / 'madelon.csv'} ({len(parts)} rows)")


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    write_credit()
    write_madelon()
