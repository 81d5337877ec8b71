"""Embedding CSV reader/writer.

Format: header ``id,label,x0,...,x{d-1}``; label -1 marks unlabeled rows;
floats are written with 17 significant digits so values round-trip exactly.
"""

import csv
import math

import numpy as np

from .errors import CSVFormatError


def format_float(x):
    return "%.17g" % x


def write_embedding_csv(path, ids, labels, vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    d = vectors.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"x{k}" for k in range(d)])
        for i, lab, row in zip(ids, labels, vectors):
            w.writerow([i, int(lab)] + [format_float(v) for v in row])


def read_embedding_csv(path):
    """Return ``(ids, labels, vectors)``; malformed input raises CSVFormatError."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSVFormatError(path, 1, "id", "empty file")
    header = rows[0]
    if len(header) < 3 or header[0] != "id" or header[1] != "label":
        raise CSVFormatError(path, 1, header[0] if header else "id",
                             "header must start with id,label followed by x0..")
    for k, name in enumerate(header[2:]):
        if name != f"x{k}":
            raise CSVFormatError(path, 1, name, f"expected x{k}")
    d = len(header) - 2
    ids, labels, vecs = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            col = header[min(len(row), len(header) - 1)]
            raise CSVFormatError(path, lineno, col, f"expected {d + 2} fields, got {len(row)}")
        try:
            lab = int(row[1])
        except ValueError:
            raise CSVFormatError(path, lineno, "label", f"not an integer: {row[1]!r}") from None
        if lab < -1:
            raise CSVFormatError(path, lineno, "label", f"labels must be >= -1, got {lab}")
        vec = []
        for k, cell in enumerate(row[2:]):
            try:
                v = float(cell)
            except ValueError:
                raise CSVFormatError(path, lineno, f"x{k}", f"not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise CSVFormatError(path, lineno, f"x{k}", "non-finite value")
            vec.append(v)
        ids.append(row[0])
        labels.append(lab)
        vecs.append(vec)
    if not ids:
        raise CSVFormatError(path, 2, "id", "no data rows")
    return np.array(ids), np.array(labels, dtype=np.int64), np.array(vecs, dtype=np.float64)
