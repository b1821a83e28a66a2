#!/usr/bin/env python3
"""Convert raw Planetoid files (Cora, CiteSeer, PubMed) into a milbo data directory.

Input is the directory holding ``ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}``
as distributed with the original Planetoid release. Output is::

    graph.edges   one undirected edge "u v" per line
    features.csv  one row of features per node
    labels.txt    one class id per line
    split.json    {"train": [...], "val": [...], "test": [...]}

The split is the public one: the labelled nodes in ``y`` (20 per class) for
training, the next 500 for validation and the listed test nodes.

Usage:
    python3 tools/planetoid_to_dir.py --raw path/to/planetoid/data --name cora --out data/cora
"""

import argparse
import json
import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_pickle(path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert(raw: Path, name: str, out: Path) -> None:
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        parts[key] = load_pickle(raw / f"ind.{name}.{key}")
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = sorted(test_index)

    tx, ty = parts["tx"], parts["ty"]
    if name == "citeseer":
        # Some test ids have no feature row; pad them with zeros.
        full = range(min(test_index), max(test_index) + 1)
        tx_ext = sp.lil_matrix((len(full), parts["x"].shape[1]))
        tx_ext[np.array(test_sorted) - min(test_sorted), :] = tx
        ty_ext = np.zeros((len(full), parts["y"].shape[1]))
        ty_ext[np.array(test_sorted) - min(test_sorted), :] = ty
        tx, ty = tx_ext, ty_ext

    features = sp.vstack((parts["allx"], tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    labels = np.vstack((parts["ally"], ty))
    labels[test_index, :] = labels[test_sorted, :]
    features = np.asarray(features.todense(), dtype=np.float64)
    n = features.shape[0]
    classes = labels.argmax(axis=1)

    edges = set()
    for u, neighbours in parts["graph"].items():
        for v in neighbours:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    num_train = parts["y"].shape[0]
    split = {
        "train": list(range(num_train)),
        "val": list(range(num_train, num_train + 500)),
        "test": [int(i) for i in test_sorted],
    }

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "graph.edges", "w") as fh:
        for u, v in sorted(edges):
            fh.write(f"{u} {v}\n")
    np.savetxt(out / "features.csv", features, delimiter=",", fmt="%.17g")
    np.savetxt(out / "labels.txt", classes, fmt="%d")
    (out / "split.json").write_text(json.dumps(split))
    print(f"{name}: {n} nodes, {len(edges)} edges, {features.shape[1]} features, "
          f"{classes.max() + 1} classes -> {out}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--raw", type=Path, required=True, help="directory with ind.<name>.* files")
    parser.add_argument("--name", default="cora", choices=["cora", "citeseer", "pubmed"])
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()
    convert(args.raw, args.name, args.out)


if __name__ == "__main__":
    main()
