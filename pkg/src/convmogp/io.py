"""CSV datasets, prediction files and model artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import DataError, InvalidArgumentError
from .gram import InducingSet, MultiOutputDataset, NoiseParams, Variant
from .kernels import kernel_from_dict
from .models import ModelState

ARTIFACT_FORMAT = "convmogp-model"
ARTIFACT_VERSION = 1


class CsvParseError(DataError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def fmt(v):
    """Full double precision text for one number."""
    return format(float(v), ".17g")


@dataclass(frozen=True)
class CsvSchema:
    """Expected outputs and input dimension of a dataset file.

    ``outputs`` fixes the set and order of output ids; unknown ids are
    rejected. When absent, ids are taken in order of first appearance.
    """

    outputs: tuple = None
    input_dim: int = None
    require_targets: bool = True


def _parse_header(path, header, schema):
    if not header or header[0].strip() != "output_id":
        raise CsvParseError(path, 1, "header must start with output_id")
    cols = [h.strip() for h in header]
    has_div = cols[-1] == "noise_divisor"
    body = cols[1:-1] if has_div else cols[1:]
    has_y = bool(body) and body[-1] == "y"
    xcols = body[:-1] if has_y else body
    if schema.require_targets and not has_y:
        raise CsvParseError(path, 1, "missing y column")
    p = len(xcols)
    if p < 1 or xcols != [f"x{j + 1}" for j in range(p)]:
        raise CsvParseError(path, 1, "input columns must be x1..xp")
    if schema.input_dim is not None and p != schema.input_dim:
        raise CsvParseError(path, 1, f"expected {schema.input_dim} input columns, found {p}")
    return p, has_y, has_div


def read_csv_rows(path, schema=CsvSchema()):
    """Parse a dataset-style CSV into ``(ids, X, y, divisors, p)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        if schema.input_dim is None:
            raise CsvParseError(path, 1, "empty file")
        p = schema.input_dim
        return [], np.zeros((0, p)), np.zeros(0), np.zeros(0), p
    p, has_y, has_div = _parse_header(path, rows[0], schema)
    ncol = 1 + p + int(has_y) + int(has_div)
    ids, X, y, div = [], [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != ncol:
            raise CsvParseError(path, line, f"expected {ncol} fields, found {len(row)}")
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise CsvParseError(path, line, str(exc)) from None
        if not np.all(np.isfinite(vals)):
            raise CsvParseError(path, line, "non-finite value")
        ids.append(row[0].strip())
        X.append(vals[:p])
        y.append(vals[p] if has_y else np.nan)
        d = vals[-1] if has_div else 1.0
        if d <= 0:
            raise CsvParseError(path, line, "noise_divisor must be positive")
        div.append(d)
    X = np.array(X, dtype=float).reshape(-1, p)
    return ids, X, np.array(y), np.array(div), p


def _output_order(ids, schema):
    if schema.outputs is not None:
        names = [str(o) for o in schema.outputs]
        unknown = sorted(set(ids) - set(names))
        if unknown:
            raise InvalidArgumentError(f"unknown output id {unknown[0]!r}")
        return names
    seen = []
    for i in ids:
        if i not in seen:
            seen.append(i)
    return seen


def load_csv_dataset(path, schema=CsvSchema()):
    """Dataset from rows ``output_id, x1..xp, y[, noise_divisor]``."""
    ids, X, y, div, p = read_csv_rows(path, schema)
    names = _output_order(ids, schema)
    if not names:
        raise DataError(f"{path}: no observations")
    ids = np.array(ids, dtype=object)
    blocks_X, blocks_y, blocks_d = [], [], []
    for n in names:
        m = ids == n
        blocks_X.append(X[m])
        blocks_y.append(y[m])
        blocks_d.append(div[m])
    return MultiOutputDataset.from_arrays(blocks_X, blocks_y, blocks_d, names=names)


def load_test_inputs(path, output_names, input_dim):
    """Per-output test inputs, plus the row order needed to restore the file."""
    schema = CsvSchema(tuple(output_names), input_dim, require_targets=False)
    ids, X, _, div, _ = read_csv_rows(path, schema)
    _output_order(ids, schema)
    ids = np.array(ids, dtype=object)
    inputs, divs, order = [], [], []
    for n in output_names:
        idx = np.flatnonzero(ids == n)
        inputs.append(X[idx])
        divs.append(div[idx])
        order.append(idx)
    return inputs, divs, order


def write_csv_dataset(dataset, path):
    p = dataset.input_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["output_id"] + [f"x{j + 1}" for j in range(p)] + ["y", "noise_divisor"])
        for name, b in zip(dataset.names, dataset.blocks):
            for x, y, dv in zip(b.inputs, b.targets, b.noise_divisors):
                w.writerow([name] + [fmt(v) for v in x] + [fmt(y), fmt(dv)])


def write_table(path, header, rows):
    """CSV with a header row; floats in full precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def dataset_fingerprint(dataset):
    h = hashlib.sha256()
    for name, b in zip(dataset.names, dataset.blocks):
        h.update(name.encode())
        for a in (b.inputs, b.targets, b.noise_divisors):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def _dataset_doc(dataset):
    return {
        "names": list(dataset.names),
        "inputs": [b.inputs.tolist() for b in dataset.blocks],
        "targets": [b.targets.tolist() for b in dataset.blocks],
        "noise_divisors": [b.noise_divisors.tolist() for b in dataset.blocks],
    }


def _dataset_from_doc(doc, p):
    X = [np.array(x, dtype=float).reshape(-1, p) for x in doc["inputs"]]
    return MultiOutputDataset.from_arrays(X, doc["targets"], doc["noise_divisors"],
                                          names=doc["names"])


def state_to_doc(state, extra=None):
    doc = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "library_version": __version__,
        "variant": state.variant.value,
        "mean_mode": state.mean_mode,
        "kernel": state.kernel.to_dict(),
        "noise": state.noise.variances.tolist(),
        "inducing": None if state.inducing is None else state.inducing.Z.tolist(),
        "dataset_fingerprint": dataset_fingerprint(state.dataset),
        "dataset": _dataset_doc(state.dataset),
    }
    if extra:
        doc["extra"] = extra
    return doc


def state_from_doc(doc):
    if doc.get("format") != ARTIFACT_FORMAT:
        raise DataError("not a model artifact")
    if doc.get("version") != ARTIFACT_VERSION:
        raise DataError(f"unsupported artifact version {doc.get('version')!r}")
    kernel = kernel_from_dict(doc["kernel"])
    ds = _dataset_from_doc(doc["dataset"], kernel.input_dim)
    if dataset_fingerprint(ds) != doc["dataset_fingerprint"]:
        raise DataError("artifact dataset fingerprint mismatch")
    Z = doc.get("inducing")
    return ModelState(kernel, NoiseParams(doc["noise"]), ds, Variant.parse(doc["variant"]),
                      None if Z is None else InducingSet(np.array(Z, dtype=float)),
                      doc.get("mean_mode", "empirical"))


def save_artifact(path, state, extra=None):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(state_to_doc(state, extra), fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_artifact(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read artifact {path}: {exc}") from None
    return state_from_doc(doc)
