"""Minimal ONNX protobuf wire-format encoder (the exact subset the scorer
contract consumes: float32/int64 tensors, scalar/ints/float attributes)."""

from __future__ import annotations

import struct

import numpy as np

FLOAT = 1
INT64 = 7

_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7


def _varint(value: int) -> bytes:
    value &= (1 << 64) - 1
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _tag(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _blob(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + _varint(len(payload)) + payload


def _text(field: int, value: str) -> bytes:
    return _blob(field, value.encode("utf-8"))


def _uint(field: int, value: int) -> bytes:
    return _tag(field, 0) + _varint(value)


def tensor(name: str, array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == np.int64:
        code, raw = INT64, arr.astype("<i8").tobytes()
    else:
        code, raw = FLOAT, np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf = b"".join(_uint(1, d) for d in arr.shape)
    return buf + _uint(2, code) + _text(8, name) + _blob(9, raw)


def attr_int(name: str, value: int) -> bytes:
    return _text(1, name) + _uint(3, value) + _uint(20, _ATTR_INT)


def attr_ints(name: str, values) -> bytes:
    buf = _text(1, name)
    for v in values:
        buf += _uint(8, int(v))
    return buf + _uint(20, _ATTR_INTS)


def attr_float(name: str, value: float) -> bytes:
    return _text(1, name) + _tag(2, 5) + struct.pack("<f", value) + _uint(20, _ATTR_FLOAT)


def node(op_type: str, inputs, outputs, *attrs) -> bytes:
    buf = b"".join(_text(1, n) for n in inputs)
    buf += b"".join(_text(2, n) for n in outputs)
    buf += _text(4, op_type)
    buf += b"".join(_blob(5, a) for a in attrs)
    return buf


def value_info(name: str, shape) -> bytes:
    dims = b"".join(_blob(1, _uint(1, int(d))) for d in shape)
    tensor_type = _uint(1, FLOAT) + _blob(2, dims)
    return _text(1, name) + _blob(2, _blob(1, tensor_type))


def model(nodes, initializers, inputs, outputs, opset: int = 13, name: str = "net") -> bytes:
    graph = b"".join(_blob(1, n) for n in nodes)
    graph += _text(2, name)
    graph += b"".join(_blob(5, t) for t in initializers)
    graph += b"".join(_blob(11, vi) for vi in inputs)
    graph += b"".join(_blob(12, vi) for vi in outputs)
    return _uint(1, 8) + _blob(7, graph) + _blob(8, _uint(2, opset))
