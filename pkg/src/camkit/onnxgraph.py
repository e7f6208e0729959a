"""Self-contained reader and executor for the ONNX classifier graphs this
toolkit consumes.

The scorer contract is narrow: a single float32 input, a single float32
output, and the op subset a convolutional classifier needs (Conv, Relu,
MaxPool, AveragePool, GlobalAveragePool, BatchNormalization, Add, Flatten,
Reshape, Gemm, MatMul, Dropout, Identity, Constant). Graphs are decoded
straight from the protobuf wire format, so no ONNX runtime is required.
Anything outside the subset raises ModelLoadError at load time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelLoadError, ScoringError

_WIRE_VARINT = 0
_WIRE_I64 = 1
_WIRE_LEN = 2
_WIRE_I32 = 5

_FLOAT = 1
_INT64 = 7


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelLoadError("truncated varint in ONNX file")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ModelLoadError("malformed varint in ONNX file")


def _signed(value: int) -> int:
    value &= (1 << 64) - 1
    return value - (1 << 64) if value >= (1 << 63) else value


def _fields(buf: bytes):
    """Yield (field_number, wire_type, payload) triples from a message."""
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        number, wire = key >> 3, key & 0x7
        if wire == _WIRE_VARINT:
            value, pos = _read_varint(buf, pos)
        elif wire == _WIRE_LEN:
            length, pos = _read_varint(buf, pos)
            if pos + length > len(buf):
                raise ModelLoadError("truncated length-delimited field in ONNX file")
            value = buf[pos : pos + length]
            pos += length
        elif wire == _WIRE_I64:
            value = buf[pos : pos + 8]
            pos += 8
        elif wire == _WIRE_I32:
            value = buf[pos : pos + 4]
            pos += 4
        else:
            raise ModelLoadError(f"unsupported protobuf wire type {wire}")
        yield number, wire, value


def _packed_varints(value, wire) -> list[int]:
    if wire == _WIRE_VARINT:
        return [_signed(value)]
    out = []
    pos = 0
    while pos < len(value):
        v, pos = _read_varint(value, pos)
        out.append(_signed(v))
    return out


def _decode_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = 0
    name = ""
    raw = None
    float_data: list[float] = []
    int64_data: list[int] = []
    for number, wire, value in _fields(buf):
        if number == 1:
            dims.extend(_packed_varints(value, wire))
        elif number == 2:
            data_type = value
        elif number == 4:
            float_data.extend(np.frombuffer(value, dtype="<f4").tolist())
        elif number == 7:
            int64_data.extend(_packed_varints(value, wire))
        elif number == 8:
            name = value.decode("utf-8")
        elif number == 9:
            raw = value
    if data_type == _FLOAT:
        arr = (
            np.frombuffer(raw, dtype="<f4")
            if raw is not None
            else np.asarray(float_data, dtype=np.float32)
        )
    elif data_type == _INT64:
        arr = (
            np.frombuffer(raw, dtype="<i8")
            if raw is not None
            else np.asarray(int64_data, dtype=np.int64)
        )
    else:
        raise ModelLoadError(f"tensor '{name}': unsupported ONNX data type {data_type}")
    try:
        return name, arr.reshape(dims)
    except ValueError as exc:
        raise ModelLoadError(f"tensor '{name}': payload does not match dims {dims}") from exc


def _decode_attribute(buf: bytes) -> tuple[str, object]:
    name = ""
    value: object = None
    ints: list[int] = []
    floats: list[float] = []
    for number, wire, payload in _fields(buf):
        if number == 1:
            name = payload.decode("utf-8")
        elif number == 2:
            value = float(np.frombuffer(payload, dtype="<f4")[0])
        elif number == 3:
            value = _signed(payload)
        elif number == 4:
            value = payload.decode("utf-8", errors="replace")
        elif number == 5:
            value = _decode_tensor(payload)[1]
        elif number == 7:
            if wire == _WIRE_I32:
                floats.append(float(np.frombuffer(payload, dtype="<f4")[0]))
            else:
                floats.extend(np.frombuffer(payload, dtype="<f4").tolist())
        elif number == 8:
            ints.extend(_packed_varints(payload, wire))
    if ints:
        value = ints
    elif floats:
        value = floats
    return name, value


def _decode_value_info(buf: bytes) -> tuple[str, tuple]:
    name = ""
    shape: tuple = ()
    for number, _, value in _fields(buf):
        if number == 1:
            name = value.decode("utf-8")
        elif number == 2:
            for tnum, _, tval in _fields(value):
                if tnum != 1:
                    continue
                for fnum, _, fval in _fields(tval):
                    if fnum != 2:
                        continue
                    dims = []
                    for dnum, _, dval in _fields(fval):
                        if dnum != 1:
                            continue
                        dim_value = None
                        for inum, _, ival in _fields(dval):
                            if inum == 1:
                                dim_value = _signed(ival)
                        dims.append(dim_value)
                    shape = tuple(dims)
    return name, shape


@dataclass
class GraphNode:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict[str, object] = field(default_factory=dict)


@dataclass
class ModelGraph:
    """Decoded ONNX graph: nodes in topological order plus weight tensors."""

    nodes: list[GraphNode]
    initializers: dict[str, np.ndarray]
    input_name: str
    input_shape: tuple
    output_name: str
    output_shape: tuple
    opset: int


def load_graph(path) -> ModelGraph:
    """Decode the ONNX file at ``path`` and validate the scorer contract."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ModelLoadError(f"cannot read model graph {path}: {exc}") from exc

    graph_buf = None
    opset = 0
    for number, _, value in _fields(buf):
        if number == 7:
            graph_buf = value
        elif number == 8:
            domain = ""
            version = 0
            for onum, _, oval in _fields(value):
                if onum == 1:
                    domain = oval.decode("utf-8")
                elif onum == 2:
                    version = _signed(oval)
            if domain == "":
                opset = max(opset, version)
    if graph_buf is None:
        raise ModelLoadError(f"{path}: no graph found (not an ONNX model?)")
    if opset < 11:
        raise ModelLoadError(f"{path}: opset {opset} too old, need >= 11")

    nodes: list[GraphNode] = []
    initializers: dict[str, np.ndarray] = {}
    inputs: list[tuple[str, tuple]] = []
    outputs: list[tuple[str, tuple]] = []
    for number, _, value in _fields(graph_buf):
        if number == 1:
            node = GraphNode(op_type="", inputs=[], outputs=[])
            for nnum, _, nval in _fields(value):
                if nnum == 1:
                    node.inputs.append(nval.decode("utf-8"))
                elif nnum == 2:
                    node.outputs.append(nval.decode("utf-8"))
                elif nnum == 4:
                    node.op_type = nval.decode("utf-8")
                elif nnum == 5:
                    aname, aval = _decode_attribute(nval)
                    node.attrs[aname] = aval
            nodes.append(node)
        elif number == 5:
            name, arr = _decode_tensor(value)
            initializers[name] = arr
        elif number == 11:
            inputs.append(_decode_value_info(value))
        elif number == 12:
            outputs.append(_decode_value_info(value))

    graph_inputs = [(n, s) for n, s in inputs if n not in initializers]
    if len(graph_inputs) != 1:
        raise ModelLoadError(f"{path}: need exactly one graph input, found {len(graph_inputs)}")
    if len(outputs) != 1:
        raise ModelLoadError(f"{path}: need exactly one graph output, found {len(outputs)}")
    unsupported = sorted({n.op_type for n in nodes} - set(_OPS))
    if unsupported:
        raise ModelLoadError(f"{path}: unsupported ops {unsupported}")
    return ModelGraph(
        nodes=nodes,
        initializers=initializers,
        input_name=graph_inputs[0][0],
        input_shape=graph_inputs[0][1],
        output_name=outputs[0][0],
        output_shape=outputs[0][1],
        opset=opset,
    )


def _pair(attr, default):
    if attr is None:
        return list(default)
    return [int(v) for v in attr]


def _conv(x, w, b, attrs):
    strides = _pair(attrs.get("strides"), (1, 1))
    dilations = _pair(attrs.get("dilations"), (1, 1))
    pads = _pair(attrs.get("pads"), (0, 0, 0, 0))
    group = int(attrs.get("group", 1))
    n, c, _, _ = x.shape
    m, cg, kh, kw = w.shape
    if c != cg * group:
        raise ScoringError(f"Conv channel mismatch: input {c}, weights {cg}x{group}")
    xp = np.pad(x, ((0, 0), (0, 0), (pads[0], pads[2]), (pads[1], pads[3])))
    eh = dilations[0] * (kh - 1) + 1
    ew = dilations[1] * (kw - 1) + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (eh, ew), axis=(2, 3))
    windows = windows[:, :, :: strides[0], :: strides[1], :: dilations[0], :: dilations[1]]
    out = np.empty((n, m, windows.shape[2], windows.shape[3]), dtype=np.float32)
    mg = m // group
    for g in range(group):
        out[:, g * mg : (g + 1) * mg] = np.einsum(
            "nchwij,mcij->nmhw",
            windows[:, g * cg : (g + 1) * cg],
            w[g * mg : (g + 1) * mg],
            optimize=True,
        )
    if b is not None:
        out += b.reshape(1, m, 1, 1)
    return out


def _pool_windows(x, attrs, pad_value):
    kernel = _pair(attrs.get("kernel_shape"), None)
    strides = _pair(attrs.get("strides"), kernel)
    pads = _pair(attrs.get("pads"), (0, 0, 0, 0))
    if int(attrs.get("ceil_mode", 0)) != 0:
        raise ScoringError("pooling with ceil_mode=1 is not supported")
    xp = np.pad(
        x,
        ((0, 0), (0, 0), (pads[0], pads[2]), (pads[1], pads[3])),
        constant_values=pad_value,
    )
    windows = np.lib.stride_tricks.sliding_window_view(xp, tuple(kernel), axis=(2, 3))
    return windows[:, :, :: strides[0], :: strides[1]]


def _gemm(a, b, c, attrs):
    alpha = float(attrs.get("alpha", 1.0))
    beta = float(attrs.get("beta", 1.0))
    if int(attrs.get("transA", 0)):
        a = a.T
    if int(attrs.get("transB", 0)):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out


def _batchnorm(x, scale, bias, mean, var, attrs):
    eps = float(attrs.get("epsilon", 1e-5))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = 1.0 / np.sqrt(var.astype(np.float32) + np.float32(eps))
    return x * (scale * inv).reshape(shape) + (bias - mean * scale * inv).reshape(shape)


def _flatten(x, attrs):
    axis = int(attrs.get("axis", 1))
    lead = int(np.prod(x.shape[:axis], dtype=np.int64)) if axis else 1
    return x.reshape(lead, -1)


def _reshape(x, shape_spec):
    target = []
    for i, d in enumerate(shape_spec.astype(np.int64).tolist()):
        target.append(x.shape[i] if d == 0 else int(d))
    return x.reshape(target)


_OPS = {
    "Conv",
    "Relu",
    "MaxPool",
    "AveragePool",
    "GlobalAveragePool",
    "BatchNormalization",
    "Add",
    "Flatten",
    "Reshape",
    "Gemm",
    "MatMul",
    "Dropout",
    "Identity",
    "Constant",
}


def run_graph(graph: ModelGraph, input_array: np.ndarray) -> np.ndarray:
    """Execute the graph on one input tensor and return the output tensor."""
    values: dict[str, np.ndarray] = dict(graph.initializers)
    values[graph.input_name] = np.asarray(input_array, dtype=np.float32)

    def fetch(name):
        if name == "":
            return None
        if name not in values:
            raise ScoringError(f"graph value '{name}' referenced before it was produced")
        return values[name]

    for node in graph.nodes:
        ins = [fetch(n) for n in node.inputs]
        op = node.op_type
        if op == "Conv":
            out = _conv(ins[0], ins[1], ins[2] if len(ins) > 2 else None, node.attrs)
        elif op == "Relu":
            out = np.maximum(ins[0], 0)
        elif op == "MaxPool":
            out = _pool_windows(ins[0], node.attrs, -np.inf).max(axis=(-2, -1))
        elif op == "AveragePool":
            if int(node.attrs.get("count_include_pad", 0)) == 0 and any(
                _pair(node.attrs.get("pads"), (0, 0, 0, 0))
            ):
                raise ScoringError("AveragePool with exclusive padding is not supported")
            out = _pool_windows(ins[0], node.attrs, 0.0).mean(axis=(-2, -1))
        elif op == "GlobalAveragePool":
            out = ins[0].mean(axis=(2, 3), keepdims=True)
        elif op == "BatchNormalization":
            out = _batchnorm(ins[0], ins[1], ins[2], ins[3], ins[4], node.attrs)
        elif op == "Add":
            out = ins[0] + ins[1]
        elif op == "Flatten":
            out = _flatten(ins[0], node.attrs)
        elif op == "Reshape":
            out = _reshape(ins[0], ins[1])
        elif op == "Gemm":
            out = _gemm(ins[0], ins[1], ins[2] if len(ins) > 2 else None, node.attrs)
        elif op == "MatMul":
            out = ins[0] @ ins[1]
        elif op in ("Dropout", "Identity"):
            out = ins[0]
        elif op == "Constant":
            out = np.asarray(node.attrs["value"])
        else:
            raise ScoringError(f"unsupported op {op}")
        values[node.outputs[0]] = np.asarray(out, dtype=out.dtype)

    return fetch(graph.output_name)
