"""File helpers: atomic writes, 8-bit binary PGM, flat ``key = value`` configs."""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path
from typing import Dict, Union

import numpy as np

__all__ = ["atomic_write", "write_pgm", "read_pgm", "to_uint8", "read_config", "parse_config", "format_config"]

PathLike = Union[str, os.PathLike]


def atomic_write(path: PathLike, data: Union[bytes, str]) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_uint8(img) -> np.ndarray:
    """Clamp to [0, 255] and round half up."""
    return np.floor(np.clip(np.asarray(img, dtype=float), 0.0, 255.0) + 0.5).astype(np.uint8)


def pgm_bytes(img) -> bytes:
    a = to_uint8(img)
    if a.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    return f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode() + a.tobytes()


def write_pgm(path: PathLike, img) -> None:
    atomic_write(path, pgm_bytes(img))


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def read_pgm(path: PathLike) -> np.ndarray:
    """Read an 8-bit P5 image as ``float64``."""
    raw = Path(path).read_bytes()
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    body = raw[m.end() :]
    if len(body) < w * h:
        raise ValueError(f"{path}: truncated image data")
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w).astype(float)


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def parse_config(text: str, source: str = "<config>") -> Dict[str, object]:
    """Flat ``key = value`` lines; ``#`` starts a comment. Values become
    bool, int or float where they parse as such, else stay strings."""
    out: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = _coerce(value.strip())
    return out


def read_config(path: PathLike) -> Dict[str, object]:
    return parse_config(Path(path).read_text(), str(path))


def format_config(values: Dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
