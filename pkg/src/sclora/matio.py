"""File formats: the SCLM matrix record, CSV fallback, and bundle containers.

Matrix record layout (little-endian throughout):

    bytes 0-3   magic ``SCLM``
    byte  4     format version (1)
    bytes 5-12  rows, unsigned 64-bit
    bytes 13-20 cols, unsigned 64-bit
    then        rows*cols IEEE-754 float64 values, row-major

A bundle is a JSON header followed by named matrix records; it carries
covariance metadata and adapter weights. Files whose first bytes are not a
known magic are parsed as headerless CSV of numeric rows.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .validation import as_matrix

MATRIX_MAGIC = b"SCLM"
BUNDLE_MAGIC = b"SCLB"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sBQQ")


class MatrixFormatError(ValueError):
    """Malformed matrix/bundle file; records the path and byte offset."""

    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = int(offset)
        super().__init__(f"{path}: byte {offset}: {message}")


def _write_record(fh: BinaryIO, m: np.ndarray) -> None:
    rows, cols = m.shape
    fh.write(_HEADER.pack(MATRIX_MAGIC, FORMAT_VERSION, rows, cols))
    fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def _read_record(fh: BinaryIO, path) -> np.ndarray:
    offset = fh.tell()
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise MatrixFormatError(path, offset, "truncated matrix header")
    magic, version, rows, cols = _HEADER.unpack(head)
    if magic != MATRIX_MAGIC:
        raise MatrixFormatError(path, offset, f"bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise MatrixFormatError(path, offset + 4, f"unsupported version {version}")
    if rows == 0 or cols == 0:
        raise MatrixFormatError(path, offset + 5, f"degenerate shape ({rows}, {cols})")
    payload_offset = fh.tell()
    count = rows * cols
    data = fh.read(8 * count)
    if len(data) < 8 * count:
        raise MatrixFormatError(
            path, payload_offset + len(data), f"truncated payload, expected {8 * count} bytes"
        )
    m = np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise MatrixFormatError(path, payload_offset, "non-finite values in matrix payload")
    return m


def write_matrix(path, m) -> None:
    """Write one matrix; ``.csv`` suffix selects the text format."""
    m = as_matrix(m)
    if str(path).endswith(".csv"):
        # %.17g round-trips float64 exactly and keeps output deterministic.
        np.savetxt(path, m, delimiter=",", fmt="%.17g")
        return
    with open(path, "wb") as fh:
        _write_record(fh, m)


def read_matrix(path) -> np.ndarray:
    """Read one matrix, sniffing the binary magic and falling back to CSV."""
    with open(path, "rb") as fh:
        start = fh.read(4)
        if start == MATRIX_MAGIC:
            fh.seek(0)
            m = _read_record(fh, path)
            trailing = fh.read(1)
            if trailing:
                raise MatrixFormatError(path, fh.tell() - 1, "trailing bytes after matrix record")
            return m
        if start == BUNDLE_MAGIC:
            raise MatrixFormatError(path, 0, "file is a bundle, not a bare matrix record")
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (ValueError, OSError) as exc:
        raise MatrixFormatError(path, 0, f"not a matrix record and not parseable as CSV ({exc})") from exc
    if m.size == 0:
        raise MatrixFormatError(path, 0, "empty CSV matrix")
    if not np.all(np.isfinite(m)):
        raise MatrixFormatError(path, 0, "non-finite values in CSV matrix")
    return m


def write_activation_dump(path, samples: Iterable[np.ndarray]) -> None:
    """Write a sequence of activation samples as consecutive matrix records."""
    with open(path, "wb") as fh:
        for s in samples:
            _write_record(fh, as_matrix(s, "activation sample"))


def read_activation_dump(path) -> Iterator[np.ndarray]:
    """Yield activation samples (one ``dim x L`` matrix per record)."""
    with open(path, "rb") as fh:
        while True:
            probe = fh.read(1)
            if not probe:
                return
            fh.seek(-1, 1)
            yield _read_record(fh, path)


def write_bundle(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a JSON header plus named matrix records.

    The header is serialized with sorted keys and no whitespace so identical
    inputs produce identical bytes.
    """
    names = list(arrays)
    full_header = dict(header)
    full_header["arrays"] = names
    full_header["version"] = FORMAT_VERSION
    blob = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<BI", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            _write_record(fh, as_matrix(arrays[name], name))


def save_covariance(path, cov) -> None:
    """Persist a finalized task covariance with its sample provenance."""
    header = {
        "kind": "covariance",
        "dim": cov.dim,
        "n_samples": cov.n_samples,
        "token_length": cov.token_length,
    }
    write_bundle(path, header, {"matrix": cov.matrix})


def load_covariance(path):
    """Load a task covariance from a bundle, or from a bare matrix file.

    Bare matrices carry no sample provenance, so ``n_samples`` and
    ``token_length`` come back as ``None`` and sample-budget diagnostics
    are unavailable for them.
    """
    from .covariance import TaskCovariance
    from .linalg import symmetrize

    with open(path, "rb") as fh:
        is_bundle = fh.read(4) == BUNDLE_MAGIC
    if not is_bundle:
        m = read_matrix(path)
        if m.shape[0] != m.shape[1]:
            raise MatrixFormatError(path, 0, f"covariance must be square, got {m.shape}")
        return TaskCovariance(symmetrize(m), n_samples=None, token_length=None)
    header, arrays = read_bundle(path)
    if header.get("kind") != "covariance" or "matrix" not in arrays:
        raise MatrixFormatError(path, 9, "bundle does not hold a covariance matrix")
    m = arrays["matrix"]
    if m.shape[0] != m.shape[1]:
        raise MatrixFormatError(path, 9, f"covariance must be square, got {m.shape}")
    n = header.get("n_samples")
    length = header.get("token_length")
    return TaskCovariance(
        symmetrize(m),
        n_samples=None if n is None else int(n),
        token_length=None if length is None else int(length),
    )


def save_adapter(path, pair, beta=None, seed=None, warnings=()) -> None:
    """Persist an adapter pair plus its initialization provenance."""
    header = {
        "kind": "adapter",
        "scheme": pair.scheme,
        "r": pair.rank,
        "d_in": pair.d_in,
        "d_out": pair.d_out,
        "beta": None if beta is None else float(beta),
        "seed": None if seed is None else int(seed),
        "warnings": list(warnings),
    }
    write_bundle(path, header, {"a": pair.a, "b": pair.b, "w_res": pair.w_res})


def load_adapter(path):
    """Load an adapter bundle; returns the pair and its JSON header."""
    from .adapter import SCHEMES, AdapterPair

    header, arrays = read_bundle(path)
    if header.get("kind") != "adapter":
        raise MatrixFormatError(path, 9, "bundle does not hold an adapter")
    for name in ("a", "b", "w_res"):
        if name not in arrays:
            raise MatrixFormatError(path, 9, f"adapter bundle missing record {name!r}")
    scheme = header.get("scheme")
    if scheme not in SCHEMES:
        raise MatrixFormatError(path, 9, f"unknown adapter scheme {scheme!r}")
    try:
        pair = AdapterPair(
            a=arrays["a"],
            b=arrays["b"],
            w_res=arrays["w_res"],
            rank=int(header["r"]),
            scheme=scheme,
        )
    except (KeyError, ValueError) as exc:
        raise MatrixFormatError(path, 9, f"incoherent adapter bundle ({exc})") from exc
    return pair, header


def read_bundle(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BUNDLE_MAGIC:
            raise MatrixFormatError(path, 0, f"bad magic {magic!r}, expected {BUNDLE_MAGIC!r}")
        meta = fh.read(5)
        if len(meta) < 5:
            raise MatrixFormatError(path, 4, "truncated bundle header")
        version, blob_len = struct.unpack("<BI", meta)
        if version != FORMAT_VERSION:
            raise MatrixFormatError(path, 4, f"unsupported bundle version {version}")
        blob = fh.read(blob_len)
        if len(blob) < blob_len:
            raise MatrixFormatError(path, 9 + len(blob), "truncated bundle header JSON")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MatrixFormatError(path, 9, f"bad bundle header JSON ({exc})") from exc
        names = header.get("arrays")
        if not isinstance(names, list):
            raise MatrixFormatError(path, 9, "bundle header missing 'arrays' list")
        arrays = {str(name): _read_record(fh, path) for name in names}
        trailing = fh.read(1)
        if trailing:
            raise MatrixFormatError(path, fh.tell() - 1, "trailing bytes after bundle records")
    return header, arrays
