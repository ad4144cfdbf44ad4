"""Hosting a real ML-runtime encoder through the sidecar machinery.

A small TorchScript conv encoder exercises the full torch path (encode,
autograd gradients, self-test, serving). The genuine diffusion-VAE smoke
test needs pretrained weights and only runs when UVCG_TEST_VAE points at
a TorchScript-exported VAE encoder."""

import json
import os
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

torch = pytest.importorskip("torch")

from uvcg_sidecar import wire
from uvcg_sidecar.encoders import TorchScriptEncoder
from uvcg_sidecar.selftest import run_selftest

from conftest import sidecar_command, write_clip_dir


class SmallEncoder(torch.nn.Module):
    def __init__(self):
        super().__init__()
        torch.manual_seed(0)
        self.conv1 = torch.nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.conv2 = torch.nn.Conv2d(8, 8, 3, stride=2, padding=1)
        self.conv3 = torch.nn.Conv2d(8, 8, 3, stride=2, padding=1)
        self.proj = torch.nn.Conv2d(8, 4, 1)

    def forward(self, x):
        x = torch.tanh(self.conv1(x))
        x = torch.tanh(self.conv2(x))
        x = torch.tanh(self.conv3(x))
        return self.proj(x)


@pytest.fixture(scope="module")
def scripted_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("ts") / "small_encoder.pt"
    module = torch.jit.script(SmallEncoder().eval())
    torch.jit.save(module, str(path))
    return path


def test_torchscript_encode_shape_and_determinism(scripted_path):
    encoder = TorchScriptEncoder(str(scripted_path))
    frame = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
    a = encoder.encode(frame)
    b = encoder.encode(frame)
    assert a.shape == (4, 2, 2)
    assert np.array_equal(a, b)


def test_torchscript_gradients_pass_selftest(scripted_path):
    encoder = TorchScriptEncoder(str(scripted_path))
    report = run_selftest(encoder, frame_size=16, samples=16)
    assert report["ok"], report
    assert report["max_relative_error"] < 1e-3


def test_torchscript_served_over_pipe(scripted_path):
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "uvcg_sidecar",
            "--encoder", f"torchscript:{scripted_path}",
        ],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
    )
    try:
        frame = np.random.default_rng(1).random((16, 16, 3)).astype(np.float32)
        body = b"UVCG" + bytes((1, wire.OP_ENCODE)) + wire.pack_tensor(frame)
        import struct

        proc.stdin.write(struct.pack("<Q", len(body)) + body)
        proc.stdin.flush()
        opcode, payload = wire.read_frame(proc.stdout)
        assert opcode == wire.OP_RESULT
        latent = wire.PayloadReader(payload).tensor()
        assert latent.shape == (4, 2, 2)
    finally:
        proc.stdin.close()
        proc.wait(timeout=30)


@pytest.mark.skipif(shutil.which("uvcg") is None, reason="uvcg engine CLI not installed")
def test_protect_through_torch_sidecar(scripted_path, tmp_path):
    # the engine attacks a torch-hosted encoder end to end
    video = write_clip_dir(tmp_path / "video", seed=5, n=2, size=16)
    target = write_clip_dir(tmp_path / "target", seed=6, n=2, size=16)
    command = sidecar_command("--encoder", f"torchscript:{scripted_path}")
    result = subprocess.run(
        [
            "uvcg", "protect",
            "--input", str(video),
            "--target", str(target),
            "--out", str(tmp_path / "out"),
            "--steps", "20",
            "--seed", "2",
            "--encoder", f"sidecar:{command}",
        ],
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert result.returncode == 0, result.stderr
    report = json.loads((tmp_path / "out" / "protect_report.json").read_text())
    for initial, final in zip(
        report["per_frame"]["loss_initial"], report["per_frame"]["loss_final"]
    ):
        assert final <= initial


@pytest.mark.skipif(
    not os.environ.get("UVCG_TEST_VAE"),
    reason="set UVCG_TEST_VAE to a TorchScript-exported diffusion VAE encoder",
)
def test_real_vae_smoke(tmp_path):
    started = time.time()
    vae_path = os.environ["UVCG_TEST_VAE"]
    encoder = TorchScriptEncoder(vae_path)
    report = run_selftest(encoder, frame_size=64, samples=16)
    assert report["ok"], report

    video = write_clip_dir(tmp_path / "video", seed=7, n=8, size=512)
    target = write_clip_dir(tmp_path / "target", seed=8, n=8, size=512)
    command = sidecar_command("--encoder", f"torchscript:{vae_path}")
    result = subprocess.run(
        [
            "uvcg", "protect",
            "--input", str(video),
            "--target", str(target),
            "--out", str(tmp_path / "out"),
            "--encoder", f"sidecar:{command}",
            "--seed", "0",
        ],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, result.stderr
    report = json.loads((tmp_path / "out" / "protect_report.json").read_text())
    pairs = zip(report["per_frame"]["loss_initial"], report["per_frame"]["loss_final"])
    assert all(final < initial for initial, final in pairs)
    print(f"[PASS] criterion 13 (real VAE smoke): {time.time() - started:.1f}s")
