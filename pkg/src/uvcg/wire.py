"""Binary pipe protocol spoken between the engine and sidecar processes.

Frame layout, all little-endian:

    u64  length of everything that follows
    4s   magic "UVCG"
    u8   version (1)
    u8   opcode
    ...  payload

Opcodes: 1 hello, 2 encode, 3 loss_grad, 4 embed_image, 5 embed_text,
6 error, 7 result.

Payloads are tensor blocks, each::

    u8   dtype (1 = float32 LE, the only v1 dtype)
    u8   ndim  (0 allowed: a scalar, no dims follow)
    u32* dims
    ...  contiguous row-major float32 data

except for two text payloads: error messages carry a UTF-8 error code and
embed_text requests carry the UTF-8 prompt. The hello result carries one
1-D tensor ``[deterministic_flag, opcode, opcode, ...]`` listing supported
request opcodes. Image-like tensors travel as (h, w, 3); latents as
(c, h, w); embeddings as 1-D.

Requests are answered strictly in order, one in flight per connection.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import SidecarError

MAGIC = b"UVCG"
VERSION = 1

OP_HELLO = 1
OP_ENCODE = 2
OP_LOSS_GRAD = 3
OP_EMBED_IMAGE = 4
OP_EMBED_TEXT = 5
OP_ERROR = 6
OP_RESULT = 7

DTYPE_FLOAT32 = 1

MAX_MESSAGE_BYTES = 1 << 30
MAX_TENSOR_DIMS = 8

_HEADER = struct.Struct("<Q")


class ProtocolError(SidecarError):
    """Malformed traffic; ``code`` is the short wire error code."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


def pack_tensor(array: np.ndarray) -> bytes:
    # ascontiguousarray would promote 0-d scalars to 1-d; keep the rank
    arr = np.asarray(array, dtype="<f4")
    if not arr.flags.c_contiguous:
        arr = arr.copy(order="C")
    if arr.ndim > MAX_TENSOR_DIMS:
        raise ProtocolError("dims", f"{arr.ndim} dimensions")
    header = bytes((DTYPE_FLOAT32, arr.ndim))
    dims = b"".join(struct.pack("<I", d) for d in arr.shape)
    return header + dims + arr.tobytes(order="C")


def unpack_tensor(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor block; returns (array, offset past the block)."""
    if len(payload) - offset < 2:
        raise ProtocolError("framing", "truncated tensor header")
    dtype, ndim = payload[offset], payload[offset + 1]
    if dtype != DTYPE_FLOAT32:
        raise ProtocolError("dtype", f"unsupported dtype {dtype}")
    if ndim > MAX_TENSOR_DIMS:
        raise ProtocolError("dims", f"{ndim} dimensions")
    offset += 2
    if len(payload) - offset < 4 * ndim:
        raise ProtocolError("framing", "truncated dims")
    dims = [
        struct.unpack_from("<I", payload, offset + 4 * i)[0] for i in range(ndim)
    ]
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    nbytes = 4 * count
    if nbytes > MAX_MESSAGE_BYTES or len(payload) - offset < nbytes:
        raise ProtocolError("framing", "truncated tensor data")
    arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(dims)
    return arr.copy(), offset + nbytes


def unpack_tensors(payload: bytes, expected: int) -> list[np.ndarray]:
    tensors = []
    offset = 0
    for _ in range(expected):
        arr, offset = unpack_tensor(payload, offset)
        tensors.append(arr)
    if offset != len(payload):
        raise ProtocolError("framing", "trailing bytes after tensors")
    return tensors


def pack_message(opcode: int, payload: bytes = b"") -> bytes:
    body = MAGIC + bytes((VERSION, opcode)) + payload
    return _HEADER.pack(len(body)) + body


def write_message(stream: BinaryIO, opcode: int, payload: bytes = b"") -> None:
    stream.write(pack_message(opcode, payload))
    stream.flush()


def read_exact(stream: BinaryIO, size: int) -> bytes | None:
    """Read exactly size bytes; None on clean EOF at a message boundary."""
    chunks = []
    remaining = size
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            if remaining == size:
                return None
            raise ProtocolError("framing", "stream ended mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> tuple[int, bytes] | None:
    """Read one frame; returns (opcode, payload), or None on clean EOF."""
    header = read_exact(stream, _HEADER.size)
    if header is None:
        return None
    (length,) = _HEADER.unpack(header)
    if length < 6 or length > MAX_MESSAGE_BYTES:
        raise ProtocolError("framing", f"implausible message length {length}")
    body = read_exact(stream, length)
    if body is None:
        raise ProtocolError("framing", "stream ended mid-message")
    if body[:4] != MAGIC:
        raise ProtocolError("magic", "bad magic")
    if body[4] != VERSION:
        raise ProtocolError("unsupported_version", f"version {body[4]}")
    return body[5], body[6:]
