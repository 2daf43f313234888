"""File formats and atomic persistence for experiment artifacts.

Vectors are one ``repr``-precision float per line; graphs use the
edge-list text format from :mod:`reabc.models.graph`.  All writes go
through a temp-file-plus-rename so concurrent replicates never expose
partial files.  Manifests are JSON (non-finite floats use Python's
``Infinity``/``NaN`` literals, which round-trip through ``json``).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from ..core import ContractError, ObservedData
from ..models import graph_from_text, graph_to_text


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def vector_to_text(values):
    return "\n".join(repr(float(v)) for v in values) + "\n"


def vector_from_text(text):
    return np.array([float(ln) for ln in text.strip().splitlines() if ln.strip()])


def write_observed(path, data):
    if data.kind == "vector":
        atomic_write_text(path, vector_to_text(data.values))
    else:
        atomic_write_text(path, graph_to_text(data.values))


def read_observed(path, kind):
    with open(path) as fh:
        text = fh.read()
    if kind == "vector":
        return ObservedData.vector(vector_from_text(text))
    if kind == "graph":
        return ObservedData.graph(graph_from_text(text))
    raise ContractError(f"unknown data kind {kind!r}")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)


def particles_csv(theta_components, weights, param_names):
    header = ",".join(list(param_names) + ["weight"])
    rows = [header]
    for comp, w in zip(theta_components, weights):
        rows.append(",".join(repr(float(c)) for c in comp) + f",{float(w)!r}")
    return "\n".join(rows) + "\n"


SCHEDULE_COLUMNS = (
    "step", "epsilon", "ess", "cess", "resampled", "acceptance", "moves",
    "log_evidence", "elapsed_seconds",
)


def schedule_csv(diags):
    rows = [",".join(SCHEDULE_COLUMNS)]
    for d in diags:
        rows.append(",".join([
            str(d.step), repr(float(d.epsilon)), repr(float(d.ess)),
            repr(float(d.cess)), str(int(d.resampled)), repr(float(d.acceptance)),
            str(d.moves), repr(float(d.log_evidence)),
            repr(float(d.elapsed_seconds)),
        ]))
    return "\n".join(rows) + "\n"


def versions():
    import scipy

    from .. import __version__

    return {
        "reabc": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
