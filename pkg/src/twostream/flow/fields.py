"""Flow fields, multi-frame flow stacks, and their on-disk format.

A stack of L consecutive flow fields becomes a (R, C, 2L) input tensor for
the temporal stream: 0-based channel 2k holds the horizontal displacement of
flow pair k and channel 2k+1 the vertical displacement, k = 0..L-1, where
pair k connects frames (start_frame + k) -> (start_frame + k + 1).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..binio import ByteReader, check_version, pack_f32_array, pack_i32
from ..errors import DataError, FormatError, ShapeError
from ..pgm import write_pgm

STACK_MAGIC = b"TSFS"
STACK_VERSION = 1


@dataclass
class FlowField:
    """Per-pixel displacement: u horizontal (columns), v vertical (rows)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError(f"u {self.u.shape} and v {self.v.shape} must be "
                             "matching 2-D arrays")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ShapeError("flow field contains non-finite values")

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))


@dataclass
class FlowStack:
    """(R, C, 2L) interleaved u/v channels starting at frame `start_frame`."""

    data: np.ndarray
    start_frame: int

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] % 2 != 0 or self.data.shape[2] == 0:
            raise ShapeError(f"stack data must be (R, C, 2L), got {self.data.shape}")
        if self.start_frame < 0:
            raise ShapeError(f"start_frame must be >= 0, got {self.start_frame}")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("flow stack contains non-finite values")

    @property
    def length(self) -> int:
        return self.data.shape[2] // 2

    def field(self, k: int) -> FlowField:
        """Flow pair k (0-based) as a FlowField."""
        if not 0 <= k < self.length:
            raise ShapeError(f"flow index {k} outside [0, {self.length})")
        return FlowField(u=self.data[:, :, 2 * k].copy(),
                         v=self.data[:, :, 2 * k + 1].copy())


def build_flow_stack(flows, start_frame: int) -> FlowStack:
    """Interleave L flow fields into one (R, C, 2L) stack."""
    flows = list(flows)
    if not flows:
        raise ShapeError("cannot stack zero flow fields")
    shape = flows[0].shape
    for k, f in enumerate(flows):
        if f.shape != shape:
            raise ShapeError(f"flow {k} has dims {f.shape}, expected {shape}")
    data = np.empty((shape[0], shape[1], 2 * len(flows)), dtype=np.float32)
    for k, f in enumerate(flows):
        data[:, :, 2 * k] = f.u
        data[:, :, 2 * k + 1] = f.v
    return FlowStack(data=data, start_frame=start_frame)


def slice_stack(stack: FlowStack, start_frame: int, length: int) -> FlowStack:
    """Cut a sub-stack of `length` flows anchored at `start_frame`."""
    offset = start_frame - stack.start_frame
    if offset < 0 or offset + length > stack.length:
        raise DataError(
            f"stack covers frames [{stack.start_frame}, "
            f"{stack.start_frame + stack.length}), cannot slice {length} flows "
            f"at tau={start_frame}")
    data = stack.data[:, :, 2 * offset:2 * (offset + length)]
    return FlowStack(data=np.ascontiguousarray(data), start_frame=start_frame)


def normalize_flow_for_net(stack: FlowStack, clip_mag: float = 8.0,
                           subtract_mean: bool = True) -> np.ndarray:
    """Map a flow stack into [-1, 1] for network input.

    Per channel the mean displacement is subtracted (drops any global
    translation between the two frames), then values are clamped to
    +-clip_mag pixels and divided by clip_mag.
    """
    if clip_mag <= 0:
        raise ShapeError(f"clip_mag must be positive, got {clip_mag}")
    data = stack.data.astype(np.float32, copy=True)
    if subtract_mean:
        data -= data.mean(axis=(0, 1), keepdims=True, dtype=np.float64).astype(np.float32)
    np.clip(data, -clip_mag, clip_mag, out=data)
    data /= np.float32(clip_mag)
    return data


def serialize_flow_stack(stack: FlowStack) -> bytes:
    r, c, _ = stack.data.shape
    return b"".join([
        STACK_MAGIC,
        pack_i32(STACK_VERSION, r, c, stack.length, stack.start_frame),
        pack_f32_array(stack.data),
    ])


def deserialize_flow_stack(data: bytes, source: str = "flow stack") -> FlowStack:
    rd = ByteReader(data, source)
    rd.expect_magic(STACK_MAGIC)
    check_version(rd, STACK_VERSION)
    at = rd.offset
    r, c, length, tau = (rd.read_i32() for _ in range(4))
    if r < 1 or c < 1 or length < 1 or tau < 0:
        raise FormatError(f"{source}: bad header dims r={r} c={c} L={length} "
                          f"tau={tau}", at)
    payload = rd.read_f32_array((r, c, 2 * length))
    rd.expect_eof()
    return FlowStack(data=payload, start_frame=tau)


def save_flow_stack(stack: FlowStack, path) -> None:
    Path(path).write_bytes(serialize_flow_stack(stack))


def load_flow_stack(path) -> FlowStack:
    p = Path(path)
    if not p.exists():
        raise DataError(f"flow stack file not found: {p}")
    return deserialize_flow_stack(p.read_bytes(), source=str(p))


def flow_to_pgm(field: FlowField, path, scale: float | None = None) -> None:
    """Side-by-side u|v grayscale rendering; mid-gray marks zero displacement."""
    if scale is None:
        scale = max(float(np.abs(field.u).max()), float(np.abs(field.v).max()), 1e-6)
    panels = []
    for comp in (field.u, field.v):
        img = np.clip(comp.astype(np.float64) / scale, -1.0, 1.0)
        panels.append(np.round((img + 1.0) * 127.5).astype(np.uint8))
    write_pgm(path, np.concatenate(panels, axis=1))
