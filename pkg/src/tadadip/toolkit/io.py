"""Raw volume files with a JSON sidecar header.

``path`` holds little-endian float32 values in C order (z slowest);
``path + ".json"`` holds the header. Writes go to a temporary file that is
renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["FormatError", "VolumeHeader", "save_volume", "load_volume", "header_path", "atomic_write_text"]

DTYPES = {"f32le": np.dtype("<f4")}
LAYOUTS = ("c-order",)


class FormatError(ValueError):
    """A volume file or its header is malformed or inconsistent."""


@dataclass(frozen=True)
class VolumeHeader:
    shape: tuple[int, ...]
    dtype: str = "f32le"
    layout: str = "c-order"
    description: str = ""

    def __post_init__(self):
        if not self.shape or any(int(s) < 1 for s in self.shape):
            raise FormatError(f"shape: entries must be >= 1, got {self.shape}")
        if self.dtype not in DTYPES:
            raise FormatError(f"dtype: unknown element type tag {self.dtype!r}")
        if self.layout not in LAYOUTS:
            raise FormatError(f"layout: unknown layout tag {self.layout!r}")

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape)) * DTYPES[self.dtype].itemsize

    def to_json(self) -> str:
        return json.dumps({"shape": list(self.shape), "dtype": self.dtype, "layout": self.layout,
                           "description": self.description}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "VolumeHeader":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"header: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise FormatError("header: expected a JSON object")
        unknown = set(raw) - {"shape", "dtype", "layout", "description"}
        if unknown:
            raise FormatError(f"header: unknown field(s) {sorted(unknown)}")
        if "shape" not in raw:
            raise FormatError("shape: missing")
        shape = raw["shape"]
        if not isinstance(shape, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in shape):
            raise FormatError(f"shape: expected a list of integers, got {shape!r}")
        return cls(tuple(shape), raw.get("dtype", "f32le"), raw.get("layout", "c-order"),
                   str(raw.get("description", "")))


def header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    _atomic_write(Path(path), text.encode("ascii"))


def save_volume(path, x, description: str = "") -> VolumeHeader:
    """Write ``x`` as float32 little-endian plus its header."""
    arr = np.ascontiguousarray(np.asarray(x), dtype=DTYPES["f32le"])
    header = VolumeHeader(tuple(int(s) for s in arr.shape), description=description)
    _atomic_write(Path(path), arr.tobytes(order="C"))
    _atomic_write(header_path(path), header.to_json().encode("utf-8"))
    return header


def load_volume(path, with_header: bool = False):
    """Read a volume written by :func:`save_volume`, validating payload length."""
    path = Path(path)
    hpath = header_path(path)
    if not hpath.exists():
        raise FileNotFoundError(f"missing header {hpath}")
    if not path.exists():
        raise FileNotFoundError(f"missing payload {path}")
    header = VolumeHeader.from_json(hpath.read_text())
    payload = path.read_bytes()
    if len(payload) != header.nbytes:
        raise FormatError(f"payload length: header shape {header.shape} needs {header.nbytes} bytes, "
                          f"file has {len(payload)}")
    arr = np.frombuffer(payload, dtype=DTYPES[header.dtype]).reshape(header.shape).astype(np.float32)
    return (arr, header) if with_header else arr
