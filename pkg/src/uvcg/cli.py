"""Command-line surface: protect, baseline, evaluate, select-target,
encode-check.

Exit codes: 0 success, 2 usage or configuration error, 3 data/format
error, 4 numerical error, 5 sidecar error. Every successful run leaves a
machine-readable result file.

``--epsilon`` and ``--alpha`` are given in 8-bit units (15 means 15/255)
and normalized internally. ``--encoder sidecar:<cmd>`` launches an
external encoder process; the UVCG_SIDECAR_CMD environment variable, when
set, overrides the command for sidecar encoders.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .advisor import rank_targets
from .encoder import (
    EncoderSpec,
    build_encoder,
    finite_difference_gradient,
)
from .errors import (
    CapabilityError,
    ConfigError,
    DataError,
    IntegrityError,
    NumericalError,
    SidecarError,
)
from .kernels import BACKEND
from .media import load_clip, quantize_frame, save_clip, write_json
from .metrics import (
    EvaluationReport,
    ReferenceEmbedder,
    emit_report,
    frame_consistency,
    prompt_consistency,
    psnr,
    ssim,
    SSIM_WINDOW,
)
from .protect import (
    ProtectionConfig,
    ProtectionResult,
    protect_video,
    random_noise_baseline,
)

DELTAS_FILE = "deltas.bin"
DELTAS_INDEX_FILE = "deltas_index.json"
PROTECT_REPORT_FILE = "protect_report.json"


def _eightbit(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}")
    return number / 255.0


def _add_encoder_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--encoder",
        default="reference",
        help="reference | identity | sidecar:<command> (default: reference)",
    )
    parser.add_argument(
        "--encoder-seed",
        type=int,
        default=0,
        help="seed for the reference encoder weights (default: 0)",
    )
    parser.add_argument("--downsample", type=int, default=8)
    parser.add_argument("--latent-channels", type=int, default=4)


def _encoder_spec(args) -> EncoderSpec:
    kind = args.encoder
    command = None
    if kind.startswith("sidecar"):
        kind, _, command = kind.partition(":")
        command = command or None
    return EncoderSpec(
        kind=kind,
        seed=args.encoder_seed,
        downsample_factor=args.downsample,
        latent_channels=args.latent_channels,
        sidecar_command=command,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uvcg",
        description="Embed latent-alignment perturbations into videos and evaluate them.",
    )
    parser.add_argument("--version", action="version", version=f"uvcg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("protect", help="optimize perturbations against a target clip")
    p.add_argument("--input", action="append", required=True, help="clip directory (repeatable)")
    p.add_argument("--target", required=True, help="target clip directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epsilon", type=_eightbit, default=15.0 / 255.0, metavar="N/255")
    p.add_argument("--alpha", type=_eightbit, default=2.0 / 255.0, metavar="N/255")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--last-iterate", action="store_true",
                   help="apply the last iterate instead of the best-loss one")
    p.add_argument("--zero-init", action="store_true",
                   help="start cold frames from zero instead of a uniform draw")
    p.add_argument("--jobs", type=int, default=1,
                   help="videos protected concurrently (default: 1)")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock time in the report file (off keeps reruns byte-identical)")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_protect)

    p = sub.add_parser("baseline", help="uniform random noise at the same intensity")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=_eightbit, default=15.0 / 255.0, metavar="N/255")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="similarity and consistency metrics")
    p.add_argument("--a", required=True, help="reference clip directory")
    p.add_argument("--b", required=True, help="clip directory under evaluation")
    p.add_argument("--out", default="evaluation_report.json")
    p.add_argument("--csv", default=None, help="also write one CSV row per metric")
    p.add_argument("--embedder", default="reference",
                   help="reference | sidecar:<command> (default: reference)")
    p.add_argument("--embedder-seed", type=int, default=0)
    p.add_argument("--prompt", default=None,
                   help="editing prompt; needs a text-capable embedder")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-target", help="rank candidate target clips")
    p.add_argument("--input", required=True)
    p.add_argument("--candidate", action="append", required=True,
                   help="candidate clip directory (repeatable)")
    p.add_argument("--w1", type=float, default=0.5, help="proximity weight")
    p.add_argument("--w2", type=float, default=0.5, help="simplicity weight")
    p.add_argument("--out", default="target_ranking.json")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_select_target)

    p = sub.add_parser("encode-check", help="audit outputs and check gradients")
    p.add_argument("--original", required=True, help="original clip directory")
    p.add_argument("--immunized", default=None, help="immunized clip directory to audit")
    p.add_argument("--epsilon", type=_eightbit, default=15.0 / 255.0, metavar="N/255")
    p.add_argument("--out", default="encode_check_report.json")
    p.add_argument("--gradcheck", action="store_true",
                   help="compare analytic and finite-difference gradients")
    p.add_argument("--gradcheck-samples", type=int, default=16,
                   help="sampled pixel coordinates (0 = every coordinate)")
    p.add_argument("--gradcheck-step", type=float, default=5e-3)
    p.add_argument("--gradcheck-tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_encode_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapabilityError as exc:
        print(f"uvcg: capability error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"uvcg: configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"uvcg: data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"uvcg: numerical error: {exc}", file=sys.stderr)
        return 4
    except SidecarError as exc:
        print(f"uvcg: sidecar error: {exc}", file=sys.stderr)
        return 5


def _write_deltas(out_dir: Path, result: ProtectionResult, epsilon: float) -> None:
    """Raw float32 LE per-frame perturbations plus a JSON index, so the
    exact deltas survive independent of image quantization."""
    deltas = result.perturbations.deltas
    with (out_dir / DELTAS_FILE).open("wb") as fh:
        for d in deltas:
            fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes(order="C"))
    h, w, _ = deltas[0].shape
    write_json(
        out_dir / DELTAS_INDEX_FILE,
        {
            "dtype": "float32-le",
            "layout": "hwc",
            "epsilon": epsilon,
            "frame_count": len(deltas),
            "height": h,
            "width": w,
            "per_frame_bytes": h * w * 3 * 4,
        },
    )


def _protect_report(result: ProtectionResult, meta: dict, timing: bool) -> dict:
    return {
        "meta": meta,
        "wall_clock_seconds": result.wall_clock_seconds if timing else None,
        "failed_frames": result.failed_frames,
        "per_frame": {
            "loss_initial": result.per_frame_loss_initial,
            "loss_final": result.per_frame_loss_final,
            "iterations": result.per_frame_iterations,
        },
        "loss_traces": result.loss_traces,
    }


def _protect_one(input_dir: str, target_dir: str, out_dir: Path, args, config) -> dict:
    clip = load_clip(input_dir)
    target = load_clip(target_dir)
    endpoint = build_encoder(_encoder_spec(args))
    try:
        result = protect_video(clip, target, endpoint, config)
    finally:
        endpoint.close()
    out_dir.mkdir(parents=True, exist_ok=True)
    save_clip(result.immunized, out_dir)
    _write_deltas(out_dir, result, config.epsilon)
    meta = {
        "tool": "uvcg",
        "version": __version__,
        "kernel_backend": BACKEND,
        "command": "protect",
        "input": input_dir,
        "target": target_dir,
        "encoder": args.encoder,
        "encoder_seed": args.encoder_seed,
        "config": {
            "epsilon": config.epsilon,
            "alpha": config.alpha,
            "steps": config.steps,
            "warm_start": config.warm_start,
            "seed": config.seed,
            "last_iterate": config.last_iterate,
            "zero_init": config.zero_init,
        },
    }
    report = _protect_report(result, meta, args.timing)
    write_json(out_dir / PROTECT_REPORT_FILE, report)
    print(
        f"protected {input_dir} -> {out_dir} "
        f"({len(clip)} frames, {result.wall_clock_seconds:.2f}s, "
        f"{len(result.failed_frames)} failed)"
    )
    return report


def cmd_protect(args) -> int:
    config = ProtectionConfig(
        epsilon=args.epsilon,
        alpha=args.alpha,
        steps=args.steps,
        warm_start=not args.no_warm_start,
        seed=args.seed,
        last_iterate=args.last_iterate,
        zero_init=args.zero_init,
    )
    inputs = args.input
    out_root = Path(args.out)
    if len(inputs) == 1:
        _protect_one(inputs[0], args.target, out_root, args, config)
        return 0
    jobs = max(1, args.jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(
                _protect_one, inp, args.target, out_root / Path(inp).name, args, config
            )
            for inp in inputs
        ]
        for future in futures:
            future.result()
    return 0


def cmd_baseline(args) -> int:
    config = ProtectionConfig(epsilon=args.epsilon, seed=args.seed)
    clip = load_clip(args.input)
    result = random_noise_baseline(clip, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_clip(result.immunized, out_dir)
    _write_deltas(out_dir, result, config.epsilon)
    meta = {
        "tool": "uvcg",
        "version": __version__,
        "command": "baseline",
        "input": args.input,
        "config": {"epsilon": config.epsilon, "seed": config.seed},
    }
    write_json(out_dir / PROTECT_REPORT_FILE, _protect_report(result, meta, args.timing))
    print(f"noised {args.input} -> {out_dir} ({len(clip)} frames)")
    return 0


def _build_embedder(args):
    if args.embedder == "reference":
        spec = EncoderSpec(kind="reference", seed=args.embedder_seed)
        return ReferenceEmbedder(build_encoder(spec))
    if args.embedder.startswith("sidecar"):
        from .sidecar import SidecarEmbedder

        _, _, command = args.embedder.partition(":")
        import os

        command = os.environ.get("UVCG_SIDECAR_CMD") or command
        if not command:
            raise ConfigError("sidecar embedder needs sidecar:<command> or UVCG_SIDECAR_CMD")
        return SidecarEmbedder(command)
    raise ConfigError(f"unknown embedder {args.embedder!r}")


def cmd_evaluate(args) -> int:
    clip_a = load_clip(args.a)
    clip_b = load_clip(args.b)
    if len(clip_a) != len(clip_b):
        raise IntegrityError(f"clip lengths differ: {len(clip_a)} vs {len(clip_b)}")
    if (clip_a.width, clip_a.height) != (clip_b.width, clip_b.height):
        raise IntegrityError("clip resolutions differ")

    psnr_mean, psnr_frames = psnr(clip_a, clip_b)
    if clip_a.width >= SSIM_WINDOW and clip_a.height >= SSIM_WINDOW:
        ssim_mean, ssim_frames = ssim(clip_a, clip_b)
    else:
        print("uvcg: frames smaller than the SSIM window; reporting null", file=sys.stderr)
        ssim_mean, ssim_frames = None, None

    embedder = _build_embedder(args)
    try:
        fc_mean, fc_pairs = frame_consistency(clip_b, embedder)
        if args.prompt is not None:
            pc_mean, _ = prompt_consistency(clip_b, args.prompt, embedder)
        else:
            pc_mean = None
    finally:
        embedder.close()

    report = EvaluationReport(
        meta={
            "tool": "uvcg",
            "version": __version__,
            "command": "evaluate",
            "a": args.a,
            "b": args.b,
            "embedder": args.embedder,
            "embedder_seed": args.embedder_seed,
            "prompt": args.prompt,
        },
        frame_consistency=fc_mean,
        per_frame_frame_cos=fc_pairs,
        prompt_consistency=pc_mean,
        ssim=ssim_mean,
        per_frame_ssim=ssim_frames,
        psnr=psnr_mean,
        per_frame_psnr=psnr_frames,
    )
    emit_report(report, args.out, csv_path=args.csv)
    shown_ssim = "null" if ssim_mean is None else f"{ssim_mean:.4f}"
    print(f"evaluate: psnr={psnr_mean:.2f}dB ssim={shown_ssim} "
          f"frame_consistency={fc_mean:.4f} -> {args.out}")
    return 0


def cmd_select_target(args) -> int:
    protected = load_clip(args.input)
    candidates = [load_clip(c) for c in args.candidate]
    endpoint = build_encoder(_encoder_spec(args))
    try:
        ranking = rank_targets(protected, candidates, endpoint, w1=args.w1, w2=args.w2)
    finally:
        endpoint.close()
    payload = {
        "meta": {
            "tool": "uvcg",
            "version": __version__,
            "command": "select-target",
            "input": args.input,
            "w1": args.w1,
            "w2": args.w2,
        },
        "ranking": [
            {
                "candidate": s.candidate_name,
                "proximity": s.proximity,
                "simplicity": s.simplicity,
                "combined": s.combined,
            }
            for s in ranking
        ],
    }
    write_json(args.out, payload)
    for rank, s in enumerate(ranking, start=1):
        print(f"{rank}. {s.candidate_name}: combined={s.combined:.4f} "
              f"(proximity={s.proximity:.4f}, simplicity={s.simplicity:.4f})")
    return 0


def _audit_immunized(args, original) -> dict:
    immunized_dir = Path(args.immunized)
    immunized = load_clip(immunized_dir)
    if len(immunized) != len(original):
        raise IntegrityError("immunized clip length differs from the original")
    audit: dict = {"epsilon": args.epsilon}

    index_path = immunized_dir / DELTAS_INDEX_FILE
    if index_path.is_file():
        index = json.loads(index_path.read_text())
        expected = (len(original), original.height, original.width)
        found = (index["frame_count"], index["height"], index["width"])
        if found != expected:
            raise IntegrityError(f"deltas index {found} does not match clip {expected}")
        raw = (immunized_dir / DELTAS_FILE).read_bytes()
        count = len(original) * original.height * original.width * 3
        if len(raw) != count * 4:
            raise IntegrityError("deltas file size does not match its index")
        deltas = np.frombuffer(raw, dtype="<f4").reshape(
            len(original), original.height, original.width, 3
        )
        max_abs = float(np.abs(deltas).max())
        audit["max_abs_delta"] = max_abs
        audit["budget_ok"] = bool(max_abs <= np.float32(args.epsilon))
        reconstructed_ok = all(
            np.array_equal(
                quantize_frame(np.clip(orig.pixels + deltas[i], 0.0, 1.0)),
                quantize_frame(imm.pixels),
            )
            for i, (orig, imm) in enumerate(zip(original.frames, immunized.frames))
        )
        audit["reconstruction_ok"] = bool(reconstructed_ok)
    else:
        # no exact deltas: allow for the two 8-bit quantizations
        slack = 2.0 / 510.0 + 1e-6
        diffs = [
            float(np.abs(o.pixels.astype(np.float64) - i.pixels.astype(np.float64)).max())
            for o, i in zip(original.frames, immunized.frames)
        ]
        audit["max_abs_pixel_diff"] = max(diffs)
        audit["budget_ok"] = max(diffs) <= args.epsilon + slack
        audit["reconstruction_ok"] = None
    return audit


def _gradient_check(args, original) -> dict:
    frame = original.frames[0]
    endpoint = build_encoder(_encoder_spec(args))
    try:
        target = endpoint.encode(original.frames[-1])
        rng = np.random.default_rng(args.seed)
        delta = np.clip(
            rng.uniform(-args.epsilon, args.epsilon, size=frame.pixels.shape),
            -args.epsilon + 1e-2, args.epsilon - 1e-2,  # keep FD probes feasible
        ).astype(np.float32)
        _, grad = endpoint.loss_gradient(frame, delta, target)
        grad = np.asarray(grad, dtype=np.float64)
        size = frame.pixels.size
        if args.gradcheck_samples and args.gradcheck_samples < size:
            coords = sorted(
                rng.choice(size, size=args.gradcheck_samples, replace=False).tolist()
            )
        else:
            coords = list(range(size))
        fd = finite_difference_gradient(
            endpoint, frame, delta, target, step=args.gradcheck_step, coords=coords
        )
    finally:
        endpoint.close()
    scale = float(np.abs(fd.flat[coords]).max())
    if scale == 0.0:
        scale = max(float(np.abs(grad).max()), 1e-30)
    err = float(np.abs(grad.flat[coords] - fd.flat[coords]).max()) / scale
    return {
        "sampled_coordinates": len(coords),
        "step": args.gradcheck_step,
        "max_relative_error": err,
        "tolerance": args.gradcheck_tol,
        "ok": bool(err < args.gradcheck_tol),
    }


def cmd_encode_check(args) -> int:
    original = load_clip(args.original)
    payload: dict = {
        "meta": {
            "tool": "uvcg",
            "version": __version__,
            "command": "encode-check",
            "original": args.original,
            "immunized": args.immunized,
            "encoder": args.encoder,
        }
    }
    failures = []
    if args.immunized is not None:
        audit = _audit_immunized(args, original)
        payload["audit"] = audit
        if not audit["budget_ok"]:
            failures.append("budget")
        if audit.get("reconstruction_ok") is False:
            failures.append("reconstruction")
    if args.gradcheck:
        check = _gradient_check(args, original)
        payload["gradcheck"] = check
        if not check["ok"]:
            failures.append("gradcheck")
    payload["ok"] = not failures
    write_json(args.out, payload)
    for line in json.dumps(payload, indent=2, sort_keys=True).splitlines():
        print(line)
    if "gradcheck" in failures:
        raise NumericalError(f"gradient check failed: {payload['gradcheck']}")
    if failures:
        raise IntegrityError(f"audit failed: {', '.join(failures)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
