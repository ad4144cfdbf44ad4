"""Encoders the sidecar can host behind the pipe protocol.

Every hosted encoder must be deterministic: the engine's convergence and
reproducibility checks refuse anything else at handshake. Diffusion VAE
encoders must therefore expose the latent distribution mean, not a
sample.
"""

from __future__ import annotations

import numpy as np


class ModelFault(Exception):
    """The hosted model failed on a well-formed request."""


class EchoEncoder:
    """Identity latent: the frame itself, channels-first.

    Mirrors the engine's in-process identity endpoint operation for
    operation (float64 math, difference formed in (h, w, 3) layout, plain
    sum), so engine runs through this sidecar are byte-identical to
    in-process runs once results are rounded to float32 for the wire.
    """

    name = "echo"

    def encode(self, frame: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.transpose(frame, (2, 0, 1)))

    def loss_grad(self, frame, delta, target):
        perturbed = frame.astype(np.float64) + delta.astype(np.float64)
        target_hwc = np.ascontiguousarray(
            np.transpose(target.astype(np.float64), (1, 2, 0))
        )
        diff = perturbed - target_hwc
        loss = float(np.sum(diff * diff))
        return loss, 2.0 * diff


class TorchScriptEncoder:
    """Any TorchScript module mapping (1, 3, h, w) float32 to a latent
    (1, c, h', w'); gradients come from autograd.

    A diffusion VAE encoder can be hosted by scripting its deterministic
    mean path first, e.g.::

        wrapper = torch.jit.trace(lambda x: vae.encode(x).latent_dist.mean, example)
        torch.jit.save(wrapper, "vae_encoder.pt")
    """

    def __init__(self, path: str):
        try:
            import torch
        except ImportError as exc:
            raise ModelFault(f"torch is not installed: {exc}") from exc
        self._torch = torch
        try:
            self._module = torch.jit.load(path, map_location="cpu")
        except (OSError, RuntimeError, ValueError) as exc:
            raise ModelFault(f"cannot load TorchScript module {path!r}: {exc}") from exc
        self._module.eval()
        self.name = f"torchscript:{path}"

    def _forward(self, hwc_tensor):
        x = hwc_tensor.permute(2, 0, 1).unsqueeze(0)
        z = self._module(x)
        if z.dim() != 4 or z.shape[0] != 1:
            raise ModelFault(f"module returned shape {tuple(z.shape)}, expected (1,c,h,w)")
        return z[0]

    def encode(self, frame: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            z = self._forward(torch.from_numpy(np.ascontiguousarray(frame)))
        return z.numpy()

    def loss_grad(self, frame, delta, target):
        torch = self._torch
        perturbed = torch.from_numpy(np.ascontiguousarray(frame + delta))
        perturbed.requires_grad_(True)
        z = self._forward(perturbed)
        diff = z - torch.from_numpy(np.ascontiguousarray(target))
        loss = (diff * diff).sum()
        loss.backward()
        return float(loss.item()), perturbed.grad.numpy()


def build_encoder(spec: str):
    kind, _, argument = spec.partition(":")
    if kind == "echo":
        return EchoEncoder()
    if kind == "torchscript":
        if not argument:
            raise ValueError("torchscript encoder needs a module path")
        return TorchScriptEncoder(argument)
    raise ValueError(f"unknown encoder {spec!r}")
