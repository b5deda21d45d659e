"""On-disk forms of dictionaries and model checkpoints.

Dictionary directory::

    index.json             {"dictionaries": [name, ...]}   (scale order)
    <name>.ndt             dense (p, g_s) float64, or (nnz, 3) COO triplets
    <name>.json            {"name", "p", "g_s", "format": "dense" | "coo"}

Checkpoint directory::

    manifest.json          {"l", "r", "g", "studies": [{"name", "k_d", "condition_names", "files"}],
                            "files": {"embedding": ...}}
    embedding.ndt, head_<i>_weight.ndt, head_<i>_bias.ndt
"""

import json
import os

import numpy as np
import scipy.sparse as sp

from cogfactor.data.datasets import write_json
from cogfactor.data.ndt import read_tensor, write_tensor
from cogfactor.errors import InvalidDictionary, ShapeMismatch
from cogfactor.model import FactoredModel, Head
from cogfactor.projection import Dictionary


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_dictionary(path, dictionary, fmt=None):
    """Write ``<path>.ndt`` and ``<path>.json``; sparse dictionaries default to COO."""
    fmt = fmt or ("coo" if dictionary.is_sparse else "dense")
    if fmt == "dense":
        write_tensor(path + ".ndt", dictionary.dense())
    elif fmt == "coo":
        coo = sp.coo_matrix(dictionary.components)
        order = np.lexsort((coo.row, coo.col))
        write_tensor(path + ".ndt", np.column_stack([coo.row[order], coo.col[order], coo.data[order]]).astype(np.float64))
    else:
        raise InvalidDictionary(f"unknown dictionary format {fmt!r}")
    write_json(path + ".json", {"name": dictionary.name, "p": dictionary.n_voxels,
                                "g_s": dictionary.n_components, "format": fmt})


def load_dictionary(path):
    meta = _read_json(path + ".json")
    arr = read_tensor(path + ".ndt")
    shape = (meta["p"], meta["g_s"])
    if meta["format"] == "dense":
        if arr.shape != shape:
            raise ShapeMismatch(f"{path}.ndt has shape {arr.shape}, sidecar says {shape}")
        return Dictionary(arr, name=meta["name"])
    if meta["format"] == "coo":
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ShapeMismatch(f"{path}.ndt must hold (nnz, 3) triplets, got {arr.shape}")
        rows, cols = arr[:, 0], arr[:, 1]
        if not (np.all(rows == np.round(rows)) and np.all(cols == np.round(cols))):
            raise InvalidDictionary("COO indices must be integers")
        return Dictionary.from_coo(rows.astype(np.int64), cols.astype(np.int64), arr[:, 2], shape, name=meta["name"])
    raise InvalidDictionary(f"unknown dictionary format {meta['format']!r}")


def save_dictionaries(path, dictionaries, fmt=None):
    os.makedirs(path, exist_ok=True)
    names = [d.name for d in dictionaries]
    if len(set(names)) != len(names) or not all(names):
        raise InvalidDictionary("dictionaries need distinct, non-empty names")
    for d in dictionaries:
        save_dictionary(os.path.join(path, d.name), d, fmt)
    write_json(os.path.join(path, "index.json"), {"dictionaries": names})


def load_dictionaries(path):
    names = _read_json(os.path.join(path, "index.json"))["dictionaries"]
    return [load_dictionary(os.path.join(path, n)) for n in names]


def save_checkpoint(path, model):
    os.makedirs(path, exist_ok=True)
    write_tensor(os.path.join(path, "embedding.ndt"), model.embedding)
    studies = []
    for i, (name, head) in enumerate(model.heads.items()):
        files = {"weight": f"head_{i:02d}_weight.ndt", "bias": f"head_{i:02d}_bias.ndt"}
        write_tensor(os.path.join(path, files["weight"]), head.weight)
        write_tensor(os.path.join(path, files["bias"]), head.bias)
        studies.append({"name": name, "k_d": head.n_classes,
                        "condition_names": list(head.condition_names), "files": files})
    write_json(os.path.join(path, "manifest.json"), {
        "g": model.input_dim, "l": model.latent_dim, "r": model.dropout_rate,
        "studies": studies, "files": {"embedding": "embedding.ndt"}})


def load_checkpoint(path):
    meta = _read_json(os.path.join(path, "manifest.json"))
    embedding = read_tensor(os.path.join(path, meta["files"]["embedding"]))
    if embedding.shape != (meta["g"], meta["l"]):
        raise ShapeMismatch(f"embedding has shape {embedding.shape}, manifest says {(meta['g'], meta['l'])}")
    heads = {}
    for s in meta["studies"]:
        head = Head(read_tensor(os.path.join(path, s["files"]["weight"])),
                    read_tensor(os.path.join(path, s["files"]["bias"])), s["condition_names"])
        if head.n_classes != s["k_d"]:
            raise ShapeMismatch(f"head {s['name']!r} has {head.n_classes} classes, manifest says {s['k_d']}")
        heads[s["name"]] = head
    return FactoredModel(embedding, heads, dropout_rate=meta["r"])
