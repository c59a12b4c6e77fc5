"""
Self-describing containers for dense tensors, Tucker formats and Kruskal models.

Binary layout (little endian)::

    magic    4 bytes   b"HTNS" dense | b"HTKR" Tucker | b"HKRS" Kruskal
    version  uint32    currently 1
    N        uint32    tensor order
    header   uint64 x  dense: I_1..I_N ; Tucker: I_1..I_N r_1..r_N ;
                       Kruskal: I_1..I_N r
    payload  float64   dense: values ; Tucker: core then U_1..U_N ;
                       Kruskal: A_1..A_N

Text layout: one header line of integers, then whitespace-separated values.
The header is ``N I_1 .. I_N`` for dense tensors, ``N I_1 .. I_N r_1 .. r_N``
for Tucker and ``N I_1 .. I_N r`` for Kruskal models. Text files are
distinguished by extension (``.txt``); anything else is read as binary.

All arrays are linearized with the last index fastest (C order); a factor
matrix ``I x r`` is stored row by row.
"""
import struct
from pathlib import Path

import numpy as np

from .tensor_core import KruskalModel
from .tucker import TuckerFormat

__all__ = [
    "FORMAT_VERSION",
    "save_tensor",
    "load_tensor",
    "save_tucker",
    "load_tucker",
    "save_kruskal",
    "load_kruskal",
]

FORMAT_VERSION = 1
_DENSE, _TUCKER, _KRUSKAL = b"HTNS", b"HTKR", b"HKRS"


def _is_text(path) -> bool:
    return Path(path).suffix.lower() == ".txt"


def _write_binary(path, magic: bytes, header, arrays) -> None:
    with open(path, "wb") as fh:
        fh.write(magic + struct.pack("<II", FORMAT_VERSION, header[0]))
        fh.write(np.asarray(header[1:], dtype="<u8").tobytes())
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_binary(path, magic: bytes, n_ints):
    """Return ``(N, header ints, payload)``; ``n_ints(N)`` sizes the header."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != magic:
        raise ValueError(f"{path}: not a {magic.decode()} container")
    version, N = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    k = n_ints(N)
    end = 12 + 8 * k
    if len(raw) < end or (len(raw) - end) % 8:
        raise ValueError(f"{path}: truncated header or payload")
    header = [int(v) for v in np.frombuffer(raw[12:end], dtype="<u8")]
    return N, header, np.frombuffer(raw[end:], dtype="<f8").astype(float)


def _write_text(path, header, arrays) -> None:
    with open(path, "w") as fh:
        fh.write(" ".join(str(int(h)) for h in header) + "\n")
        for a in arrays:
            np.savetxt(fh, np.ravel(a)[None, :], fmt="%.17g")


def _read_text(path, n_ints):
    with open(path) as fh:
        first = fh.readline().split()
        rest = fh.read().split()
    if not first:
        raise ValueError(f"{path}: empty file")
    N = int(first[0])
    k = n_ints(N)
    tokens = first[1:] + rest
    if len(tokens) < k:
        raise ValueError(f"{path}: truncated header")
    header = [int(v) for v in tokens[:k]]
    return N, header, np.array(tokens[k:], dtype=float)


def _take(payload, shapes, path):
    sizes = [int(np.prod(s)) for s in shapes]
    if sum(sizes) != payload.size:
        raise ValueError(f"{path}: expected {sum(sizes)} values, found {payload.size}")
    out, pos = [], 0
    for s, n in zip(shapes, sizes):
        out.append(payload[pos:pos + n].reshape(s))
        pos += n
    return out


def _read(path, magic, n_ints):
    if _is_text(path):
        return _read_text(path, n_ints)
    return _read_binary(path, magic, n_ints)


def save_tensor(path, t: np.ndarray) -> None:
    t = np.asarray(t, dtype=float)
    header = [t.ndim, *t.shape]
    if _is_text(path):
        _write_text(path, header, [t])
    else:
        _write_binary(path, _DENSE, header, [t])


def load_tensor(path) -> np.ndarray:
    N, shape, payload = _read(path, _DENSE, lambda N: N)
    return _take(payload, [tuple(shape)], path)[0]


def save_tucker(path, fmt: TuckerFormat) -> None:
    header = [fmt.core.ndim, *fmt.shape, *fmt.ranks]
    arrays = [fmt.core, *fmt.bases]
    if _is_text(path):
        _write_text(path, header, arrays)
    else:
        _write_binary(path, _TUCKER, header, arrays)


def load_tucker(path) -> TuckerFormat:
    N, header, payload = _read(path, _TUCKER, lambda N: 2 * N)
    shape, ranks = header[:N], header[N:]
    parts = _take(payload, [tuple(ranks)] + [(I, r) for I, r in zip(shape, ranks)], path)
    return TuckerFormat(parts[0], parts[1:])


def save_kruskal(path, model) -> None:
    model = model if isinstance(model, KruskalModel) else KruskalModel(list(model))
    header = [model.ndim, *model.shape, model.rank]
    if _is_text(path):
        _write_text(path, header, model.factors)
    else:
        _write_binary(path, _KRUSKAL, header, model.factors)


def load_kruskal(path) -> KruskalModel:
    N, header, payload = _read(path, _KRUSKAL, lambda N: N + 1)
    shape, r = header[:N], header[N]
    return KruskalModel(_take(payload, [(I, r) for I in shape], path))
