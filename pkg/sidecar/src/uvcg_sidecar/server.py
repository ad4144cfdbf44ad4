"""The serve loop: one connection, one request in flight, strict order.

Fault policy: a malformed payload inside a well-delimited frame (bad
tensor header, wrong dtype, inconsistent sizes, bad shapes) answers with
an opcode-6 error and the connection survives; anything that breaks
framing trust (bad magic, unknown version, implausible length, EOF
mid-frame) answers with an error when possible and closes. The hosted
model failing on a valid request answers code "model" and survives.
Diagnostics go to stderr only; stdout carries nothing but protocol frames.
"""

from __future__ import annotations

import sys

import numpy as np

from . import wire
from .encoders import ModelFault


def _capabilities_payload(encoder, embedder) -> bytes:
    caps = [1.0, wire.OP_ENCODE, wire.OP_LOSS_GRAD]
    if embedder is not None:
        caps.append(wire.OP_EMBED_IMAGE)
        if getattr(embedder, "supports_text", False):
            caps.append(wire.OP_EMBED_TEXT)
    return wire.pack_tensor(np.asarray(caps, dtype=np.float32))


def _handle(opcode: int, payload: bytes, encoder, embedder) -> bytes:
    if opcode == wire.OP_HELLO:
        return _capabilities_payload(encoder, embedder)

    if opcode == wire.OP_ENCODE:
        reader = wire.PayloadReader(payload)
        frame = reader.tensor()
        reader.finish()
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise wire.WireFault("shape")
        return wire.pack_tensor(encoder.encode(frame))

    if opcode == wire.OP_LOSS_GRAD:
        reader = wire.PayloadReader(payload)
        frame = reader.tensor()
        delta = reader.tensor()
        target = reader.tensor()
        reader.finish()
        if frame.ndim != 3 or frame.shape[2] != 3 or delta.shape != frame.shape:
            raise wire.WireFault("shape")
        if target.ndim != 3:
            raise wire.WireFault("shape")
        loss, grad = encoder.loss_grad(frame, delta, target)
        return wire.pack_tensor(np.asarray(loss)) + wire.pack_tensor(grad)

    if opcode == wire.OP_EMBED_IMAGE:
        if embedder is None:
            raise wire.WireFault("opcode")
        reader = wire.PayloadReader(payload)
        frame = reader.tensor()
        reader.finish()
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise wire.WireFault("shape")
        return wire.pack_tensor(embedder.embed_image(frame))

    if opcode == wire.OP_EMBED_TEXT:
        if embedder is None or not getattr(embedder, "supports_text", False):
            raise wire.WireFault("opcode")
        try:
            prompt = payload.decode("utf-8")
        except UnicodeDecodeError:
            raise wire.WireFault("framing") from None
        return wire.pack_tensor(embedder.embed_text(prompt))

    raise wire.WireFault("opcode")


def serve(encoder, embedder=None, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    print(f"uvcg-sidecar: serving encoder {encoder.name}", file=sys.stderr)
    while True:
        try:
            frame = wire.read_frame(stdin)
        except wire.WireFault as fault:
            try:
                wire.write_frame(stdout, wire.OP_ERROR, fault.code.encode())
            except OSError:
                pass
            print(f"uvcg-sidecar: closing after {fault.code}", file=sys.stderr)
            return 0
        if frame is None:
            return 0
        opcode, payload = frame
        try:
            result = _handle(opcode, payload, encoder, embedder)
        except wire.WireFault as fault:
            try:
                wire.write_frame(stdout, wire.OP_ERROR, fault.code.encode())
            except OSError:
                return 0
            continue
        except ModelFault as fault:
            print(f"uvcg-sidecar: model failure: {fault}", file=sys.stderr)
            try:
                wire.write_frame(stdout, wire.OP_ERROR, b"model")
            except OSError:
                return 0
            continue
        try:
            wire.write_frame(stdout, wire.OP_RESULT, result)
        except (OSError, BrokenPipeError):
            return 0
