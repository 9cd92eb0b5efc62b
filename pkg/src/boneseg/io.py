"""Reading and writing volumes.

A volume is a UTF-8 text header plus a raw little-endian payload::

    dims = 48 48 32
    spacing = 1 1 1
    origin = 0 0 0
    dtype = float32
    data = case000_image.raw

``data`` is resolved relative to the header's directory. The payload is
row-major with x fastest. ``float32`` loads as a ScalarVolume and ``uint8``
as a LabelVolume. Floats are written with ``repr`` so geometry survives a
round trip exactly.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import DataSizeMismatchError, MalformedHeaderError, UnknownDtypeError, VolumeFormatError
from .volume import LabelVolume, ScalarVolume, Volume, VolumeGeometry

HEADER_SUFFIX = ".vhdr"
PAYLOAD_SUFFIX = ".raw"

_DTYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1")}
_REQUIRED = ("dims", "spacing", "origin", "dtype", "data")


def header_path(path) -> Path:
    """Header path for ``path``, appending the header suffix when missing."""
    path = Path(path)
    return path if path.suffix == HEADER_SUFFIX else path.with_name(path.name + HEADER_SUFFIX)


def _fmt(values) -> str:
    return " ".join(repr(v) for v in values)


def store_volume(vol: Volume, path) -> Path:
    """Write ``vol`` as header + payload; returns the header path."""
    hdr = header_path(path)
    hdr.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(vol, LabelVolume):
        dtype_name = "uint8"
    elif isinstance(vol, ScalarVolume):
        dtype_name = "float32"
    else:
        raise TypeError(f"cannot store {type(vol).__name__}")
    payload = hdr.with_suffix(PAYLOAD_SUFFIX)
    g = vol.geometry
    text = (
        f"dims = {' '.join(str(d) for d in g.dims)}\n"
        f"spacing = {_fmt(g.spacing)}\n"
        f"origin = {_fmt(g.origin)}\n"
        f"dtype = {dtype_name}\n"
        f"data = {payload.name}\n"
    )
    payload.write_bytes(np.ascontiguousarray(vol.data, dtype=_DTYPES[dtype_name]).tobytes())
    hdr.write_text(text, encoding="utf-8")
    return hdr


def parse_header(text: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise MalformedHeaderError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key not in _REQUIRED:
            raise MalformedHeaderError(f"line {lineno}: unknown key {key!r}")
        if key in fields:
            raise MalformedHeaderError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = value
    missing = [k for k in _REQUIRED if k not in fields]
    if missing:
        raise MalformedHeaderError(f"missing header keys: {', '.join(missing)}")
    return fields


def _numbers(fields, key, cast):
    parts = fields[key].split()
    if len(parts) != 3:
        raise MalformedHeaderError(f"{key} needs 3 values, got {fields[key]!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as exc:
        raise MalformedHeaderError(f"bad {key} value {fields[key]!r}") from exc


def load_volume(path) -> Volume:
    hdr = header_path(path)
    try:
        text = hdr.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError(f"{hdr}: header is not UTF-8 text") from exc
    fields = parse_header(text)
    dtype_name = fields["dtype"]
    if dtype_name not in _DTYPES:
        raise UnknownDtypeError(f"{hdr}: unknown dtype {dtype_name!r}")
    try:
        geometry = VolumeGeometry(
            _numbers(fields, "dims", int),
            _numbers(fields, "spacing", float),
            _numbers(fields, "origin", float),
        )
    except ValueError as exc:
        if isinstance(exc, VolumeFormatError):
            raise
        raise MalformedHeaderError(f"{hdr}: {exc}") from exc
    payload = hdr.parent / fields["data"]
    raw = payload.read_bytes()
    dtype = _DTYPES[dtype_name]
    expected = geometry.num_voxels * dtype.itemsize
    if len(raw) != expected:
        raise DataSizeMismatchError(
            f"{payload}: dims {geometry.dims} need {expected} bytes, payload has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(geometry.shape)
    if dtype_name == "uint8":
        try:
            return LabelVolume(geometry, data)
        except ValueError as exc:
            raise VolumeFormatError(f"{payload}: {exc}") from exc
    return ScalarVolume(geometry, data)


def list_volumes(directory) -> list[Path]:
    """Sorted header files in ``directory``."""
    return sorted(Path(directory).glob("*" + HEADER_SUFFIX), key=lambda p: os.fspath(p))
