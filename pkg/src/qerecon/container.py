"""Binary tensor container.

Layout (all integers little-endian)::

    b"QERA"                 4 bytes magic
    version                 u32
    header_len              u64
    header                  header_len bytes of UTF-8 JSON
    payload                 raw little-endian array data

The header is ``{"entries": [...], "meta": {...}}``; each entry records
``name``, ``dtype``, ``shape``, ``offset`` (relative to the payload start),
``length`` and ``role``. Entries are 8-byte aligned within the payload.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"QERA"
VERSION = 1
_ALIGN = 8

DTYPES = {
    "f64": np.dtype("<f8"),
    "f32": np.dtype("<f4"),
    "i8": np.dtype("i1"),
    "i16": np.dtype("<i2"),
    "i32": np.dtype("<i4"),
}
_NAMES = {v: k for k, v in DTYPES.items()}
_REQUIRED = {"name", "dtype", "shape", "offset", "length"}


class ContainerError(OSError):
    """Malformed or unreadable container file."""


class MissingEntryError(ContainerError, KeyError):
    def __str__(self):
        return OSError.__str__(self)


@dataclass
class Entry:
    array: np.ndarray
    role: str = "data"


@dataclass
class Container:
    entries: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, name, array, role="data"):
        if name in self.entries:
            raise ValueError(f"duplicate entry {name!r}")
        array = np.asarray(array)
        dt = array.dtype.newbyteorder("<") if array.dtype.itemsize > 1 else array.dtype
        if dt not in _NAMES:
            raise ValueError(f"unsupported dtype {array.dtype} for entry {name!r}")
        self.entries[name] = Entry(np.ascontiguousarray(array, dtype=dt), role)

    def __getitem__(self, name):
        try:
            return self.entries[name].array
        except KeyError:
            raise MissingEntryError(f"container has no entry {name!r}") from None

    def __contains__(self, name):
        return name in self.entries

    def to_bytes(self):
        records, chunks, offset = [], [], 0
        for name, entry in self.entries.items():
            data = entry.array.tobytes(order="C")
            records.append({
                "name": name,
                "dtype": _NAMES[entry.array.dtype],
                "shape": list(entry.array.shape),
                "offset": offset,
                "length": len(data),
                "role": entry.role,
            })
            pad = (-len(data)) % _ALIGN
            chunks.append(data + b"\0" * pad)
            offset += len(data) + pad
        header = json.dumps(
            {"entries": records, "meta": self.meta}, sort_keys=True, separators=(",", ":")
        ).encode("utf-8")
        return b"".join(
            [MAGIC, struct.pack("<IQ", VERSION, len(header)), header, *chunks]
        )

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < 16 or buf[:4] != MAGIC:
            raise ContainerError("not a QERA container (bad magic)")
        version, hlen = struct.unpack_from("<IQ", buf, 4)
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        start = 16 + hlen
        if start > len(buf):
            raise ContainerError("truncated header")
        try:
            header = json.loads(buf[16:start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"corrupt header: {exc}") from None
        if not isinstance(header, dict) or not isinstance(header.get("entries"), list):
            raise ContainerError("corrupt header: no entry list")
        payload = memoryview(buf)[start:]
        out = cls(meta=header.get("meta", {}))
        spans = []
        for rec in header["entries"]:
            if not isinstance(rec, dict) or not _REQUIRED <= rec.keys():
                raise ContainerError(f"corrupt header: malformed entry record {rec!r}")
            dt = DTYPES.get(rec["dtype"])
            if dt is None:
                raise ContainerError(f"entry {rec['name']!r}: unknown dtype {rec['dtype']!r}")
            shape = tuple(rec["shape"])
            off, length = rec["offset"], rec["length"]
            if length != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
                raise ContainerError(f"entry {rec['name']!r}: shape/length mismatch")
            if off < 0 or off + length > len(payload):
                raise ContainerError(f"entry {rec['name']!r}: data out of bounds")
            spans.append((off, off + length, rec["name"]))
            arr = np.frombuffer(payload[off:off + length], dtype=dt).reshape(shape).copy()
            out.entries[rec["name"]] = Entry(arr, rec.get("role", "data"))
        spans.sort()
        for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ContainerError(f"entries {n0!r} and {n1!r} overlap")
        return out

    def write(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
