"""Dataset files: per-replicate count CSVs, a feature CSV, truth matrices and a JSON manifest.

Layout of a dataset directory::

    manifest.json          dims, file names, generator parameters
    counts_m0.csv ...      header ``i,j,value``; missing entries omitted
    features.csv           header ``i,j,z1,...,zR``
    truth_U.csv ...        optional ground truth (plain numeric CSV)
"""

import csv
import json
import os

import numpy as np

from .types import CountData, as_feature_matrix

MANIFEST = "manifest.json"
TRUTH_FILES = {
    "U0": "truth_U.csv",
    "V0": "truth_V.csv",
    "alpha0": "truth_alpha.csv",
    "P_true": "truth_P.csv",
}


def fmt(x):
    """Shortest round-trip text for a float; integers print without a decimal point."""
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def write_counts(path, data, m):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "value"])
        obs = ~data.missing[:, :, m]
        for i, j in zip(*np.nonzero(obs)):
            w.writerow([int(i), int(j), fmt(data.y[i, j, m])])


def read_counts(path, I, J):
    y = np.zeros((I, J), dtype=np.int64)
    seen = np.zeros((I, J), dtype=bool)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if [h.strip() for h in header] != ["i", "j", "value"]:
            raise ValueError(f"{path}: expected header i,j,value, got {header}")
        for row in r:
            if not row:
                continue
            i, j, v = int(row[0]), int(row[1]), float(row[2])
            if not (0 <= i < I and 0 <= j < J):
                raise ValueError(f"{path}: pair ({i}, {j}) out of range")
            if v < 0 or not v.is_integer():
                raise ValueError(f"{path}: count at ({i}, {j}) is not a nonnegative integer")
            y[i, j] = int(v)
            seen[i, j] = True
    return y, ~seen


def write_features(path, Z, I, J):
    Z = as_feature_matrix(Z, I, J)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j"] + [f"z{r + 1}" for r in range(Z.shape[1])])
        for idx, row in enumerate(Z):
            i, j = divmod(idx, J)
            w.writerow([i, j] + [fmt(v) for v in row])


def read_features(path, I, J):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = [h.strip() for h in next(r)]
        if header[:2] != ["i", "j"] or len(header) < 3:
            raise ValueError(f"{path}: expected header i,j,z1..zR")
        R = len(header) - 2
        Z = np.full((I * J, R), np.nan)
        for row in r:
            if not row:
                continue
            i, j = int(row[0]), int(row[1])
            if not (0 <= i < I and 0 <= j < J):
                raise ValueError(f"{path}: pair ({i}, {j}) out of range")
            Z[i * J + j] = [float(v) for v in row[2:]]
    if np.isnan(Z).any():
        raise ValueError(f"{path}: feature rows missing for some pairs")
    return Z


def write_matrix(path, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in X:
            w.writerow([fmt(v) for v in row])


def read_matrix(path):
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def write_dataset(out_dir, data, Z, truth=None, extra=None):
    """Write a dataset directory and return the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    I, J, M = data.I, data.J, data.M
    counts = []
    for m in range(M):
        name = f"counts_m{m}.csv"
        write_counts(os.path.join(out_dir, name), data, m)
        counts.append(name)
    write_features(os.path.join(out_dir, "features.csv"), Z, I, J)
    manifest = {
        "I": I, "J": J, "M": M, "R": int(np.shape(Z)[1]),
        "counts": counts, "features": "features.csv",
    }
    if truth is not None:
        files = {}
        for key, name in TRUTH_FILES.items():
            write_matrix(os.path.join(out_dir, name), getattr(truth, key))
            files[key] = name
        manifest["truth"] = files
        manifest["generator"] = truth.params.to_dict()
        manifest["realized_sparsity"] = truth.realized_sparsity
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_dataset(path):
    """Load ``(CountData, Z, truth_dict_or_None, manifest)`` from a dataset directory."""
    with open(os.path.join(path, MANIFEST)) as fh:
        manifest = json.load(fh)
    I, J = int(manifest["I"]), int(manifest["J"])
    if len(manifest["counts"]) != int(manifest["M"]):
        raise ValueError("manifest lists a different number of count files than M")
    ys, masks = [], []
    for name in manifest["counts"]:
        y, miss = read_counts(os.path.join(path, name), I, J)
        ys.append(y)
        masks.append(miss)
    data = CountData(y=np.stack(ys, axis=2), missing=np.stack(masks, axis=2))
    Z = read_features(os.path.join(path, manifest["features"]), I, J)
    if int(manifest.get("R", Z.shape[1])) != Z.shape[1]:
        raise ValueError("feature file width does not match manifest R")
    truth = None
    if "truth" in manifest:
        truth = {k: read_matrix(os.path.join(path, v)) for k, v in manifest["truth"].items()}
        truth["alpha0"] = truth["alpha0"].ravel()
    return data, Z, truth, manifest
