"""Matrix and model file formats.

Matrix files come in two forms, told apart by their first bytes:

* text: one sample per line, fields separated by tabs (commas and runs of
  whitespace are accepted on input), values written with 17 significant
  digits so they parse back to the same doubles;
* binary: the 8-byte magic ``RFNMAT01``, two little-endian uint64 (rows,
  cols), then the values as little-endian float64 in row-major order.

A model file is a short UTF-8 header of ``key value`` lines ending in
``end``, followed by the payloads it declares, each little-endian float64 in
row-major order. The header is written deterministically, so saving a loaded
file reproduces it byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import GeneralGaussian, RfnModel, StandardNormal

MATRIX_MAGIC = b"RFNMAT01"
MODEL_MAGIC = "RFN-MODEL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sQQ")
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


# -- matrices ---------------------------------------------------------------

def matrix_to_bytes(X: np.ndarray) -> bytes:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise FormatError(f"expected a 2-d matrix, got shape {X.shape}")
    return _HEADER.pack(MATRIX_MAGIC, X.shape[0], X.shape[1]) + X.astype(_F64).tobytes(order="C")


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("binary matrix shorter than its header")
    magic, rows, cols = _HEADER.unpack_from(buf)
    if magic != MATRIX_MAGIC:
        raise FormatError("bad binary matrix magic")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise FormatError(f"binary matrix of {rows}x{cols} needs {expected} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=_F64, offset=_HEADER.size).reshape(rows, cols).astype(np.float64)


def matrix_to_text(X: np.ndarray) -> str:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise FormatError(f"expected a 2-d matrix, got shape {X.shape}")
    return "".join("\t".join(repr(float(x)) for x in row) + "\n" for row in X)


def matrix_from_text(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        try:
            row = [float(f) for f in fields]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if rows and len(row) != len(rows[0]):
            raise FormatError(f"line {lineno}: {len(row)} fields, expected {len(rows[0])}")
        rows.append(row)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(rows[0]) if rows else 0)
    if not np.all(np.isfinite(X)):
        raise FormatError("matrix contains non-finite values")
    return X


def write_matrix(path, X: np.ndarray, fmt: str = "binary") -> None:
    """Write ``X`` as ``"binary"`` or ``"text"``."""
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(matrix_to_bytes(X))
    elif fmt == "text":
        with open(path, "w", encoding="ascii") as fh:
            fh.write(matrix_to_text(X))
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def read_matrix(path) -> np.ndarray:
    """Read a matrix file, detecting the form from its first bytes."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf.startswith(MATRIX_MAGIC):
        return matrix_from_bytes(buf)
    try:
        text = buf.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither a binary matrix nor text") from None
    return matrix_from_text(text)


# -- models -----------------------------------------------------------------

@dataclass
class ModelFile:
    """A trained model plus what is needed to reproduce it."""

    model: RfnModel
    config: dict = field(default_factory=dict)
    seed: int = 0
    format_version: int = FORMAT_VERSION


def _payloads(model: RfnModel) -> list:
    items = [("W", model.W), ("psi", model.psi)]
    if model.mean is not None:
        items.append(("mean", model.mean))
    if model.column_rms is not None:
        items.append(("column_rms", model.column_rms))
    if isinstance(model.prior, GeneralGaussian):
        items += [("prior_xi", model.prior.xi), ("prior_M", model.prior.M)]
    return items


def model_to_bytes(mf: ModelFile) -> bytes:
    model = mf.model
    payloads = _payloads(model)
    lines = [
        MODEL_MAGIC,
        f"format_version {mf.format_version}",
        f"m {model.m}",
        f"l {model.l}",
        f"psi_mode {'full' if model.full_psi else 'diagonal'}",
        f"prior {'general' if isinstance(model.prior, GeneralGaussian) else 'standard'}",
        f"seed {int(mf.seed)}",
        "config " + json.dumps(mf.config, sort_keys=True),
    ]
    for name, arr in payloads:
        lines.append(f"payload {name} " + " ".join(str(d) for d in np.shape(arr)))
    lines.append("end")
    head = ("\n".join(lines) + "\n").encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype=_F64).tobytes() for _, arr in payloads)
    return head + body


def _expected_shape(name: str, m: int, l: int, psi_mode: str) -> tuple:
    return {
        "W": (m, l),
        "psi": (m, m) if psi_mode == "full" else (m,),
        "mean": (m,),
        "column_rms": (l,),
        "prior_xi": (l,),
        "prior_M": (l, l),
    }[name]


def model_from_bytes(buf: bytes) -> ModelFile:
    pos = 0
    meta: dict = {}
    payloads: list = []
    first = True
    while True:
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise FormatError("model header is not terminated by 'end'")
        line = buf[pos:nl].decode("utf-8")
        pos = nl + 1
        if first:
            if line != MODEL_MAGIC:
                raise FormatError("not a model file (bad magic line)")
            first = False
            continue
        if line == "end":
            break
        key, _, value = line.partition(" ")
        if key == "payload":
            name, *dims = value.split()
            payloads.append((name, tuple(int(d) for d in dims)))
        else:
            meta[key] = value

    try:
        version = int(meta["format_version"])
        m, l = int(meta["m"]), int(meta["l"])
        psi_mode = meta["psi_mode"]
        prior_kind = meta["prior"]
        seed = int(meta["seed"])
        config = json.loads(meta["config"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad model header: {exc}") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    if psi_mode not in ("diagonal", "full") or prior_kind not in ("standard", "general"):
        raise FormatError("bad psi_mode or prior in model header")

    arrays = {}
    for name, shape in payloads:
        try:
            want = _expected_shape(name, m, l, psi_mode)
        except KeyError:
            raise FormatError(f"unknown payload {name!r}") from None
        if shape != want:
            raise FormatError(f"payload {name} has shape {shape}, expected {want}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise FormatError(f"payload {name} is truncated")
        arrays[name] = np.frombuffer(buf, dtype=_F64, count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after the payloads")
    if "W" not in arrays or "psi" not in arrays:
        raise FormatError("model file lacks W or psi")

    if prior_kind == "general":
        if "prior_xi" not in arrays or "prior_M" not in arrays:
            raise FormatError("general prior declared without its payloads")
        prior = GeneralGaussian(arrays["prior_xi"], arrays["prior_M"])
    else:
        prior = StandardNormal()
    model = RfnModel(W=arrays["W"], psi=arrays["psi"], prior=prior,
                     mean=arrays.get("mean"), column_rms=arrays.get("column_rms"))
    return ModelFile(model=model, config=config, seed=seed, format_version=version)


def save_model(path, model_file: ModelFile) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model_file))


def load_model(path) -> ModelFile:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-d array as an 8-bit binary graymap, min-max scaled to 0..255.

    A constant image is written as all zeros.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError(f"expected a 2-d image, got shape {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        pixels = np.rint(255.0 * (image - lo) / (hi - lo)).astype(np.uint8)
    else:
        pixels = np.zeros(image.shape, dtype=np.uint8)
    rows, cols = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary graymap written by :func:`write_pgm`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    parts = buf.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise FormatError(f"{os.fspath(path)}: not an 8-bit P5 graymap")
    cols, rows = (int(x) for x in parts[1].split())
    data = parts[3]
    if len(data) != rows * cols:
        raise FormatError(f"{os.fspath(path)}: pixel data has {len(data)} bytes, expected {rows * cols}")
    return np.frombuffer(data, dtype=np.uint8).reshape(rows, cols)


__all__ = [
    "FormatError", "ModelFile", "FORMAT_VERSION", "MATRIX_MAGIC",
    "matrix_to_bytes", "matrix_from_bytes", "matrix_to_text", "matrix_from_text",
    "write_matrix", "read_matrix", "model_to_bytes", "model_from_bytes",
    "save_model", "load_model", "write_pgm", "read_pgm",
]
