"""Text file formats: embeddings, pair lists, key=value configs and checkpoints.

Embedding file::

    D=<dim>
    <identity>,<x_1>,...,<x_D>

Pair-list file::

    D=<dim>
    <label 1|0>,<a_1>,...,<a_D>,<b_1>,...,<b_D>

Checkpoint (``PMV1``): the magic line, a model header line, one descriptor
line per layer (``linear <in> <out>``, ``conv1x1 <cin> <k> <d>``,
``batchnorm <f>``, ``dropout <rate>``, ``classhead <c> <d>``), then one line
of space-separated ``%.17g`` reals per parameter block.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig
from .exceptions import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    FormatError,
)
from .losses import ClassHead
from .sampling import IdentityDataset, PairBatch
from .tensor import BatchNorm, Conv1x1, Dropout, Linear, RngStream, Sequential
from .verifier import VerifierConfig, VerifierModel, build_verifier

MAGIC = "PMV1"


def _fmt(v: float) -> str:
    return "%.17g" % v


def _read_header(line: str, path, lineno: int = 1) -> int:
    line = line.strip()
    if not line.startswith("D="):
        raise FormatError(f"{path}:{lineno}: expected header 'D=<dim>', got {line!r}")
    try:
        dim = int(line[2:])
    except ValueError:
        raise FormatError(f"{path}:{lineno}: bad dimension in header {line!r}") from None
    if dim < 1:
        raise FormatError(f"{path}:{lineno}: dimension must be positive, got {dim}")
    return dim


def _parse_reals(fields, path, lineno):
    try:
        values = [float(f) for f in fields]
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not all(math.isfinite(v) for v in values):
        raise FormatError(f"{path}:{lineno}: non-finite value")
    return values


def _data_lines(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    return lines


def write_embeddings(ds: IdentityDataset, path):
    with open(path, "w") as fh:
        fh.write(f"D={ds.dim}\n")
        for k, block in ds.identities.items():
            for row in block:
                fh.write(",".join([str(k), *map(_fmt, row)]) + "\n")


def read_embeddings(path) -> IdentityDataset:
    lines = _data_lines(path)
    dim = _read_header(lines[0], path)
    groups: dict[int, list] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != dim + 1:
            raise FormatError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(fields)}")
        ident = fields[0].strip()
        if not ident.isdigit():
            raise FormatError(f"{path}:{lineno}: identity must be an unsigned integer, got {ident!r}")
        groups.setdefault(int(ident), []).append(_parse_reals(fields[1:], path, lineno))
    if len(groups) < 2:
        raise FormatError(f"{path}: need at least 2 identities, found {len(groups)}")
    return IdentityDataset({k: np.array(v) for k, v in groups.items()}, dim=dim)


def write_pairs(pairs: PairBatch, path):
    with open(path, "w") as fh:
        fh.write(f"D={pairs.dim}\n")
        for a, b, s in zip(pairs.a, pairs.b, pairs.same):
            fh.write(",".join(["1" if s else "0", *map(_fmt, a), *map(_fmt, b)]) + "\n")


def read_pairs(path) -> PairBatch:
    lines = _data_lines(path)
    dim = _read_header(lines[0], path)
    a, b, same = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 2 * dim + 1:
            raise FormatError(f"{path}:{lineno}: expected {2 * dim + 1} fields, got {len(fields)}")
        label = fields[0].strip()
        if label not in ("0", "1"):
            raise FormatError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
        values = _parse_reals(fields[1:], path, lineno)
        a.append(values[:dim])
        b.append(values[dim:])
        same.append(label == "1")
    if not same:
        raise FormatError(f"{path}: no pairs")
    return PairBatch(np.array(a), np.array(b), np.array(same))


def read_config(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise FormatError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


# -- checkpoints -----------------------------------------------------------


def _header_tokens(cfg: dict) -> str:
    def enc(v):
        if isinstance(v, (tuple, list)):
            return ",".join(map(str, v))
        return str(v)

    return " ".join(f"{k}={enc(v)}" for k, v in cfg.items())


def _layer_entries(layers):
    """``(descriptor, [param arrays])`` for every layer that has a descriptor."""
    for layer in layers:
        if isinstance(layer, Linear):
            w = layer.p.weights
            yield f"linear {w.shape[0]} {w.shape[1]}", [w, layer.p.bias]
        elif isinstance(layer, Conv1x1):
            k = layer.p.kernels
            yield f"conv1x1 {k.shape[1]} {k.shape[0]}", [k, layer.p.bias]
        elif isinstance(layer, BatchNorm):
            p = layer.p
            yield f"batchnorm {p.gamma.shape[0]}", [p.gamma, p.beta, p.running_mean, p.running_var]
        elif isinstance(layer, Dropout):
            yield f"dropout {_fmt(layer.rate)}", []


def _entries(model):
    if isinstance(model, VerifierModel):
        header = "verifier " + _header_tokens(model.config.to_dict())
        entries = list(_layer_entries(model.layers))
        d = model.config.input_dim
        entries = [(e + f" {d}" if e.startswith("conv1x1") else e, arrs) for e, arrs in entries]
    elif isinstance(model, Backbone):
        c = model.config
        header = "backbone " + _header_tokens(dict(
            input_dim=c.input_dim, n_classes=c.n_classes, hidden_widths=c.hidden_widths,
            bottleneck=c.bottleneck, margin_m=c.margin_m, flip=c.flip,
            classes=list(model.classes),
        ))
        entries = list(_layer_entries(model.net.layers))
        w = model.head.weights
        entries.append((f"classhead {w.shape[0]} {w.shape[1]}", [w]))
    else:
        raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")
    return header, entries


def save_checkpoint(model, path):
    header, entries = _entries(model)
    lines = [MAGIC, header]
    lines += [desc for desc, _ in entries]
    for _, arrays in entries:
        lines += [" ".join(_fmt(v) for v in a.reshape(-1)) for a in arrays]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str):
    kind, *tokens = line.split()
    fields = {}
    for tok in tokens:
        if "=" not in tok:
            raise CheckpointError(f"malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    return kind, fields


def _bool(v: str) -> bool:
    return v == "True"


def _skeleton(kind: str, f: dict):
    try:
        if kind == "verifier":
            cfg = VerifierConfig(
                input_dim=int(f["input_dim"]), depth=int(f["depth"]),
                first_layer=f["first_layer"], kernel_count=int(f["kernel_count"]),
                hidden_width=int(f["hidden_width"]), regularizer=f["regularizer"],
                dropout_rate=float(f["dropout_rate"]), pair_swap=_bool(f["pair_swap"]),
            )
            return build_verifier(cfg, RngStream(0, "init"))
        if kind == "backbone":
            widths = tuple(int(w) for w in f["hidden_widths"].split(",") if w)
            cfg = BackboneConfig(
                input_dim=int(f["input_dim"]), n_classes=int(f["n_classes"]),
                hidden_widths=widths, bottleneck=int(f["bottleneck"]),
                margin_m=int(f["margin_m"]), flip=f["flip"],
            )
            classes = [int(c) for c in f["classes"].split(",")]
            return Backbone.init(cfg, RngStream(0, "init"), classes=classes)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad {kind} header: {exc}") from None
    raise CheckpointError(f"unknown model kind {kind!r}")


def load_checkpoint(path):
    """Rebuild a :class:`VerifierModel` or :class:`Backbone` saved by :func:`save_checkpoint`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MAGIC:
        got = lines[0].strip() if lines else ""
        raise CheckpointVersionError(f"{path}: expected format {MAGIC!r}, got {got!r}")
    if len(lines) < 2:
        raise CheckpointTruncatedError(f"{path}: missing model header")
    kind, fields = _parse_header(lines[1])
    model = _skeleton(kind, fields)
    _, entries = _entries(model)
    n_desc = len(entries)
    descriptors = lines[2:2 + n_desc]
    if len(descriptors) < n_desc:
        raise CheckpointTruncatedError(f"{path}: expected {n_desc} layer descriptors")
    for i, ((want, _), got) in enumerate(zip(entries, descriptors)):
        if want.split() != got.split():
            raise CheckpointShapeError(
                f"{path}: descriptor {i} is {got.strip()!r}, header implies {want!r}"
            )
    blocks = lines[2 + n_desc:]
    arrays = [(desc, a) for desc, arrs in entries for a in arrs]
    if len(blocks) < len(arrays):
        desc, _ = arrays[len(blocks)]
        raise CheckpointTruncatedError(
            f"{path}: missing parameter block {len(blocks)} ({desc})"
        )
    if any(b.strip() for b in blocks[len(arrays):]):
        raise CheckpointShapeError(f"{path}: trailing data after {len(arrays)} parameter blocks")
    for i, ((desc, target), line) in enumerate(zip(arrays, blocks)):
        try:
            values = np.array([float(t) for t in line.split()])
        except ValueError:
            raise CheckpointError(f"{path}: non-numeric value in block {i} ({desc})") from None
        if values.size < target.size:
            raise CheckpointTruncatedError(
                f"{path}: block {i} ({desc}) has {values.size} values, expected {target.size}"
            )
        if values.size > target.size:
            raise CheckpointShapeError(
                f"{path}: block {i} ({desc}) has {values.size} values, expected {target.size}"
            )
        target[...] = values.reshape(target.shape)
    return model
