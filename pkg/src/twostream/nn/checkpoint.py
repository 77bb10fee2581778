"""Binary checkpoint format for a stack of layers.

Layout (all little-endian):
    magic "TSNC" | int32 version | int32 layer_count
    then per layer a 4-byte kind tag:
        "CONV": int32 cin, int32 cout, float32 weights[3*3*cin*cout],
                float32 biases[cout]
        "DENS": int32 din, int32 dout, float32 weights[din*dout],
                float32 biases[dout]
        "POOL", "RELU", "FLAT": no payload
Weights are stored in their in-memory row-major order, so save/load
round-trips are bit-exact.
"""

from pathlib import Path

from ..binio import ByteReader, check_version, pack_f32_array, pack_i32
from ..errors import FormatError
from .layers import Conv3x3, Dense, Flatten, MaxPool2x2, ReLU

MAGIC = b"TSNC"
VERSION = 1

_TAG_FOR_KIND = {
    "conv3x3": b"CONV",
    "maxpool2x2": b"POOL",
    "relu": b"RELU",
    "flatten": b"FLAT",
    "dense": b"DENS",
}


def serialize_layers(layers) -> bytes:
    chunks = [MAGIC, pack_i32(VERSION, len(layers))]
    for layer in layers:
        tag = _TAG_FOR_KIND.get(layer.kind)
        if tag is None:
            raise FormatError(f"cannot serialize layer kind {layer.kind!r}")
        chunks.append(tag)
        if layer.kind == "conv3x3":
            chunks.append(pack_i32(layer.in_channels, layer.out_channels))
            chunks.append(pack_f32_array(layer.params.weights))
            chunks.append(pack_f32_array(layer.params.biases))
        elif layer.kind == "dense":
            chunks.append(pack_i32(layer.in_dim, layer.out_dim))
            chunks.append(pack_f32_array(layer.params.weights))
            chunks.append(pack_f32_array(layer.params.biases))
    return b"".join(chunks)


def deserialize_layers(data: bytes, source: str = "checkpoint") -> list:
    r = ByteReader(data, source)
    r.expect_magic(MAGIC)
    check_version(r, VERSION)
    count = r.read_i32()
    if count < 0:
        raise FormatError(f"{source}: negative layer count {count}", r.offset - 4)
    layers = []
    for _ in range(count):
        at = r.offset
        tag = r.read(4)
        if tag == b"CONV":
            cin, cout = r.read_i32(), r.read_i32()
            if cin < 1 or cout < 1:
                raise FormatError(f"{source}: bad conv dims {cin}x{cout}", at)
            layer = Conv3x3(cin, cout)
            layer.params.weights[...] = r.read_f32_array((3, 3, cin, cout))
            layer.params.biases[...] = r.read_f32_array((cout,))
        elif tag == b"DENS":
            din, dout = r.read_i32(), r.read_i32()
            if din < 1 or dout < 1:
                raise FormatError(f"{source}: bad dense dims {din}x{dout}", at)
            layer = Dense(din, dout)
            layer.params.weights[...] = r.read_f32_array((din, dout))
            layer.params.biases[...] = r.read_f32_array((dout,))
        elif tag == b"POOL":
            layer = MaxPool2x2()
        elif tag == b"RELU":
            layer = ReLU()
        elif tag == b"FLAT":
            layer = Flatten()
        else:
            raise FormatError(f"{source}: unknown layer tag {tag!r}", at)
        layers.append(layer)
    r.expect_eof()
    return layers


def save_layers(layers, path) -> None:
    Path(path).write_bytes(serialize_layers(layers))


def load_layers(path) -> list:
    p = Path(path)
    return deserialize_layers(p.read_bytes(), source=str(p))
