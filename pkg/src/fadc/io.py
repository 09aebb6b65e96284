"""File formats: binary tensor files, 8-bit PGM images, CSV tables and the
key=value run configuration."""

from __future__ import annotations

import csv
import struct
from dataclasses import fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"FADT"
VERSION = 1
_HEADER = struct.Struct("<4sBB4I")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- tensor files


def encode_tensor(x: np.ndarray) -> bytes:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise FormatError(f"tensor files hold rank-4 arrays, got rank {x.ndim}")
    head = _HEADER.pack(MAGIC, VERSION, 4, *x.shape)
    return head + np.ascontiguousarray(x, dtype="<f8").tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one record starting at ``offset``; returns (array, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated tensor header")
    magic, version, rank, *dims = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION or rank != 4:
        raise FormatError(f"unsupported version {version} / rank {rank}")
    start = offset + _HEADER.size
    end = start + 8 * int(np.prod(dims, dtype=np.int64))
    if end > len(buf):
        raise FormatError("payload shorter than the header promises")
    arr = np.frombuffer(buf[start:end], dtype="<f8").astype(np.float64).reshape(dims)
    return arr, end


def write_tensor(path, x) -> None:
    Path(path).write_bytes(encode_tensor(x))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after the tensor")
    return arr


def as_rank4(a: np.ndarray) -> np.ndarray:
    """Pad leading axes with size 1 so any array of rank <= 4 fits a record."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim > 4:
        raise FormatError(f"cannot store rank {a.ndim} array")
    return a.reshape((1,) * (4 - a.ndim) + a.shape)


def write_params(path, params: dict[str, np.ndarray]) -> list[dict]:
    """Concatenate one record per parameter; returns index rows (name, shape, offset)."""
    rows, chunks, offset = [], [], 0
    for name, v in params.items():
        rec = encode_tensor(as_rank4(v))
        rows.append({"name": name, "shape": "x".join(str(s) for s in np.shape(v)), "offset": offset})
        chunks.append(rec)
        offset += len(rec)
    Path(path).write_bytes(b"".join(chunks))
    return rows


def read_params(path, index: Sequence[dict]) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    out = {}
    for row in index:
        arr, _ = decode_tensor(buf, int(row["offset"]))
        shape = tuple(int(s) for s in str(row["shape"]).split("x") if s)
        out[row["name"]] = arr.reshape(shape)
    return out


# ---------------------------------------------------------------- PGM


def to_bytes_image(a: np.ndarray) -> np.ndarray:
    """Min-max normalise to 0..255; a constant map becomes all zeros."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi - lo <= 0 or not np.isfinite(hi - lo):
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round((a - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, a: np.ndarray) -> None:
    a = np.asarray(a)
    if a.ndim != 2:
        raise FormatError("PGM images are 2-D")
    img = to_bytes_image(a)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary 8-bit PGM to floats in [0, 1]."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise FormatError("only binary (P5) PGM is supported")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError("malformed PGM header") from e
    if not 0 < maxval < 256:
        raise FormatError("only 8-bit PGM is supported")
    pos += 1
    data = buf[pos : pos + w * h]
    if len(data) != w * h:
        raise FormatError("PGM payload too short")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w) / float(maxval)


# ---------------------------------------------------------------- CSV


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(path, rows: Iterable[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([fmt(row.get(c, "")) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------- run config


class ConfigError(ValueError):
    pass


def _convert(key: str, raw: str, typ):
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ is int:
            return int(raw)
        return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from e


def parse_config(text: str, cls):
    """Parse key=value lines into dataclass ``cls``; unknown keys are errors."""
    types = {f.name: f.type for f in fields(cls)}
    # annotations are strings under postponed evaluation
    pytypes = {"int": int, "float": float, "bool": bool}
    vals = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in vals:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        typ = types[key]
        vals[key] = _convert(key, raw, pytypes.get(typ, typ) if isinstance(typ, str) else typ)
    try:
        return cls(**vals)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def read_config(path, cls):
    return parse_config(Path(path).read_text(), cls)


def format_config(cfg) -> str:
    return "".join(f"{f.name} = {fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))
