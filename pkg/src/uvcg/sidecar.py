"""Client for out-of-process encoder/embedder sidecars.

The engine launches the sidecar command as a child process and exchanges
length-prefixed binary messages over its stdin/stdout (see uvcg.wire).
The child's stderr passes through for diagnostics. The handshake demands a
deterministic sidecar; anything else is refused, because reproducibility
is part of the engine's contract.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from . import wire
from .encoder import EncoderEndpoint, EncoderSpec, LatentTensor
from .errors import CapabilityError, ConfigError, SidecarError
from .media import FrameImage
from .metrics import EmbedderEndpoint


@dataclass(frozen=True)
class Capabilities:
    supports: frozenset[int]
    deterministic: bool


def _parse_capabilities(payload: bytes) -> Capabilities:
    tensors = wire.unpack_tensors(payload, 1)
    caps = tensors[0]
    if caps.ndim != 1 or caps.size < 1:
        raise wire.ProtocolError("framing", "malformed capabilities tensor")
    deterministic = bool(caps[0] == 1.0)
    supports = frozenset(int(v) for v in caps[1:])
    if wire.OP_LOSS_GRAD in supports and wire.OP_ENCODE not in supports:
        raise SidecarError("sidecar claims loss_grad without encode support")
    return Capabilities(supports=supports, deterministic=deterministic)


class SidecarProcess:
    """One child process, one connection, one request in flight."""

    def __init__(self, command: str):
        argv = shlex.split(command)
        if not argv:
            raise SidecarError("empty sidecar command")
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise SidecarError(f"cannot launch sidecar {command!r}: {exc}") from exc
        try:
            self.capabilities = self._handshake()
        except SidecarError:
            self.close()
            raise

    def _handshake(self) -> Capabilities:
        opcode, payload = self._request(wire.OP_HELLO, b"")
        caps = _parse_capabilities(payload)
        if not caps.deterministic:
            self.close()
            raise SidecarError("sidecar is not deterministic; refusing to use it")
        return caps

    def _request(self, opcode: int, payload: bytes) -> tuple[int, bytes]:
        if self._proc.poll() is not None:
            raise SidecarError("sidecar process has exited")
        try:
            wire.write_message(self._proc.stdin, opcode, payload)
            reply = wire.read_message(self._proc.stdout)
        except (OSError, ValueError) as exc:
            raise SidecarError(f"sidecar pipe failed: {exc}") from exc
        if reply is None:
            raise SidecarError("sidecar closed the connection")
        r_opcode, r_payload = reply
        if r_opcode == wire.OP_ERROR:
            code = r_payload.decode("utf-8", errors="replace")
            raise SidecarError(f"sidecar error: {code}")
        if r_opcode != wire.OP_RESULT:
            raise wire.ProtocolError("opcode", f"unexpected reply opcode {r_opcode}")
        return r_opcode, r_payload

    def require(self, opcode: int, what: str) -> None:
        if opcode not in self.capabilities.supports:
            raise CapabilityError(f"sidecar does not support {what}")

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        self.require(wire.OP_ENCODE, "encode")
        _, payload = self._request(wire.OP_ENCODE, wire.pack_tensor(pixels))
        (latent,) = wire.unpack_tensors(payload, 1)
        if latent.ndim != 3:
            raise wire.ProtocolError("shape", "latent must be 3-d")
        return latent

    def loss_grad(
        self, pixels: np.ndarray, delta: np.ndarray, target: np.ndarray
    ) -> tuple[float, np.ndarray]:
        self.require(wire.OP_LOSS_GRAD, "loss_grad")
        payload = (
            wire.pack_tensor(pixels) + wire.pack_tensor(delta) + wire.pack_tensor(target)
        )
        _, reply = self._request(wire.OP_LOSS_GRAD, payload)
        loss, grad = wire.unpack_tensors(reply, 2)
        if loss.ndim != 0:
            raise wire.ProtocolError("shape", "loss must be a scalar tensor")
        if grad.shape != pixels.shape:
            raise wire.ProtocolError("shape", "gradient shape must match the frame")
        return float(loss), grad

    def embed_image(self, pixels: np.ndarray) -> np.ndarray:
        self.require(wire.OP_EMBED_IMAGE, "embed_image")
        _, payload = self._request(wire.OP_EMBED_IMAGE, wire.pack_tensor(pixels))
        (vec,) = wire.unpack_tensors(payload, 1)
        if vec.ndim != 1:
            raise wire.ProtocolError("shape", "embedding must be 1-d")
        return vec

    def embed_text(self, prompt: str) -> np.ndarray:
        self.require(wire.OP_EMBED_TEXT, "embed_text")
        _, payload = self._request(wire.OP_EMBED_TEXT, prompt.encode("utf-8"))
        (vec,) = wire.unpack_tensors(payload, 1)
        if vec.ndim != 1:
            raise wire.ProtocolError("shape", "embedding must be 1-d")
        return vec

    def close(self) -> None:
        proc = self._proc
        for stream in (proc.stdin, proc.stdout):
            try:
                if stream:
                    stream.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


class SidecarEncoder(EncoderEndpoint):
    """EncoderEndpoint backed by a sidecar process."""

    def __init__(self, spec: EncoderSpec, command: str):
        self.spec = spec
        self.command = command
        self._proc = SidecarProcess(command)
        self._proc.require(wire.OP_ENCODE, "encode")
        self._proc.require(wire.OP_LOSS_GRAD, "loss_grad")

    def encode(self, frame: FrameImage) -> LatentTensor:
        return LatentTensor(self._proc.encode(frame.pixels))

    def loss_gradient(self, frame, delta, target):
        delta = np.asarray(delta, dtype=np.float32)
        if delta.shape != frame.pixels.shape:
            raise ConfigError("delta shape must match the frame")
        return self._proc.loss_grad(
            frame.pixels, delta, np.asarray(target.values, dtype=np.float32)
        )

    def close(self) -> None:
        self._proc.close()


class SidecarEmbedder(EmbedderEndpoint):
    """EmbedderEndpoint backed by a sidecar process. Embeddings are
    re-normalized on this side so the unit-norm invariant holds no matter
    what the peer returns."""

    def __init__(self, command: str):
        self.command = command
        self._proc = SidecarProcess(command)
        self._proc.require(wire.OP_EMBED_IMAGE, "embed_image")

    @staticmethod
    def _normalized(vec: np.ndarray) -> np.ndarray:
        vec = vec.astype(np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise SidecarError("sidecar returned a zero embedding")
        return vec / norm

    def embed_image(self, frame: FrameImage) -> np.ndarray:
        return self._normalized(self._proc.embed_image(frame.pixels))

    def embed_text(self, prompt: str) -> np.ndarray:
        return self._normalized(self._proc.embed_text(prompt))

    def close(self) -> None:
        self._proc.close()
