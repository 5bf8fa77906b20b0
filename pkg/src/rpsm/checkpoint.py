"""Flat binary parameter container.

Layout: magic "RPSM", u32 format version, u32 record count, then per
record: u32 name length, utf-8 name, u32 ndim, u32 extents, raw row-major
little-endian float64 values.  Round-trips are bit-exact.
"""

import struct

import numpy as np

MAGIC = b"RPSM"
VERSION = 1


def save_records(path, records):
    """Write (name, ndarray) pairs; order is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name, arr in records:
            raw = name.encode("utf-8")
            # asarray keeps 0-d extents (ascontiguousarray would promote
            # them to (1,)); tobytes always emits a C-order copy
            arr = np.asarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def load_records(path):
    """Read the container back into an ordered name -> ndarray dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError("%s: not a parameter container (bad magic)" % path)
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError("%s: unsupported container version %d" % (path, version))
    out = {}
    off = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from("<%dI" % ndim, blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out[name] = arr.copy()
    if off != len(blob):
        raise ValueError("%s: trailing bytes after last record" % path)
    return out
