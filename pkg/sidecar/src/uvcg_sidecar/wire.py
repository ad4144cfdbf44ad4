"""Server-side implementation of the uvcg binary pipe protocol, v1.

Independent of the engine's client codec on purpose: the byte layout is
the contract. Frames are little-endian::

    u64  length of the rest
    4s   magic "UVCG"
    u8   version (1)
    u8   opcode
    ...  payload

and tensor blocks are ``u8 dtype (1 = float32 LE) | u8 ndim | u32 dims...
| row-major float32 data`` with ndim 0 meaning a scalar. Error payloads
and embed_text requests carry raw UTF-8 instead of tensor blocks.
"""

from __future__ import annotations

import struct

import numpy as np

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


class WireFault(Exception):
    """Raised on malformed traffic. ``code`` goes out as the error payload;
    ``fatal`` means framing trust is gone and the connection must close."""

    def __init__(self, code: str, fatal: bool = False):
        super().__init__(code)
        self.code = code
        self.fatal = fatal


def pack_tensor(array) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    if not arr.flags.c_contiguous:
        arr = arr.copy(order="C")
    parts = [bytes((DTYPE_FLOAT32, arr.ndim))]
    parts.extend(struct.pack("<I", dim) for dim in arr.shape)
    parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


class PayloadReader:
    """Sequential tensor-block parser over one message payload."""

    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def tensor(self) -> np.ndarray:
        buf, pos = self.payload, self.offset
        if len(buf) - pos < 2:
            raise WireFault("framing")
        dtype, ndim = buf[pos], buf[pos + 1]
        if dtype != DTYPE_FLOAT32:
            raise WireFault("dtype")
        pos += 2
        if len(buf) - pos < 4 * ndim:
            raise WireFault("framing")
        shape = struct.unpack_from(f"<{ndim}I", buf, pos) if ndim else ()
        pos += 4 * ndim
        count = 1
        for dim in shape:
            count *= dim
        if count * 4 > MAX_MESSAGE_BYTES or len(buf) - pos < count * 4:
            raise WireFault("framing")
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
        self.offset = pos + count * 4
        return arr.reshape(shape).copy()

    def finish(self) -> None:
        if self.offset != len(self.payload):
            raise WireFault("framing")


def read_frame(stream) -> tuple[int, bytes] | None:
    """One (opcode, payload) frame; None on clean EOF at a boundary."""
    header = stream.read(8)
    if not header:
        return None
    if len(header) < 8:
        raise WireFault("framing", fatal=True)
    (length,) = struct.unpack("<Q", header)
    if length < 6 or length > MAX_MESSAGE_BYTES:
        raise WireFault("framing", fatal=True)
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise WireFault("framing", fatal=True)
        body += chunk
    if body[:4] != MAGIC:
        raise WireFault("magic", fatal=True)
    if body[4] != VERSION:
        raise WireFault("unsupported_version", fatal=True)
    return body[5], body[6:]


def write_frame(stream, opcode: int, payload: bytes = b"") -> None:
    body = MAGIC + bytes((VERSION, opcode)) + payload
    stream.write(struct.pack("<Q", len(body)) + body)
    stream.flush()
