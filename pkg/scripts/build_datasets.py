#!/usr/bin/env python3
"""Write the bundled UCI tables (breast, wine) as CSV files under data/.

Requires scikit-learn, which ships both tables verbatim. Run once; the
generated files are committed so the test suite and example configs work
without this dependency.
"""

import csv
from pathlib import Path

from sklearn.datasets import load_breast_cancer, load_wine

OUT = Path(__file__).resolve().parent.parent / "data"


def write(path, feature_names, X, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(feature_names) + ["label"])
        for row, lab in zip(X, labels):
            writer.writerow([repr(float(v)) for v in row] + [lab])
    print(f"wrote {path} ({X.shape[0]} rows, {X.shape[1]} features)")


def main():
    OUT.mkdir(exist_ok=True)

    breast = load_breast_cancer()
    names = [n.replace(" ", "_") for n in breast.feature_names]
    labels = ["malignant" if t == 0 else "benign" for t in breast.target]
    write(OUT / "breast.csv", names, breast.data, labels)

    wine = load_wine()
    names = [n.replace(" ", "_") for n in wine.feature_names]
    # keep the original 1/2/3 cultivar numbering
    labels = [str(t + 1) for t in wine.target]
    write(OUT / "wine.csv", names, wine.data, labels)


if __name__ == "__main__":
    main()
