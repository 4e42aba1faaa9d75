"""Operator command line: corpus generation, baselines, runs, evaluation.

Commands:

    synth       write a synthetic corpus (tensors + manifest)
    keyframes   sample low frame-rate latents from first-frame conditions
    interp      linear-interpolation baseline over a corpus
    run         full refinement over corpus items
    eval        metric reports + aggregate CSV for candidate outputs
    compare     direct / interp / refined on one corpus, ranked table

Configuration comes from a JSON file (--config) overridden by flags;
unknown keys are rejected and the effective config is echoed into every
artifact for provenance. Exit codes: 0 ok, 1 usage error, 2 runtime
failure. DIFFUSESLIDE_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import direct_inference, linear_interpolation
from .denoise import AnalyticDenoiser, DenoiserHandle
from .errors import DiffuseSlideError
from .latent import KeyframePlan, LatentVideo
from .metrics import MetricReport, keyframe_metrics
from .pipeline import RunConfig, diffuse_slide, generate_keyframes
from .remote import connect
from .rng import NoiseSeed
from .synthetic import (
    CorpusSpec,
    build_prior,
    keyframe_prior,
    load_manifest,
    write_corpus,
)
from .tensor_io import read_tensor, write_tensor

log = logging.getLogger(__name__)

_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)}
_CORPUS_KEYS = {f.name for f in dataclasses.fields(CorpusSpec)}
_METRIC_KEYS = {"ssim_window"}
_ALL_KEYS = _RUN_KEYS | _CORPUS_KEYS | _METRIC_KEYS

CSV_COLUMNS = [
    "seed", "factor", "psnr_keyframes", "ssim_keyframes",
    "psnr_vs_truth", "manifold_residual", "wall_ms",
]


class UsageError(Exception):
    """Bad flags, config, or inputs; maps to exit code 1."""


def load_config(path: str | None, overrides: dict) -> dict:
    """Merge file config and flag overrides over defaults, rejecting unknowns."""
    merged: dict = {}
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        unknown = set(file_cfg) - _ALL_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - _ALL_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return merged


def run_config_of(cfg: dict) -> RunConfig:
    try:
        return RunConfig.from_dict({k: v for k, v in cfg.items() if k in _RUN_KEYS})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid run config: {exc}") from exc


def corpus_spec_of(cfg: dict) -> CorpusSpec:
    try:
        return CorpusSpec.from_dict(
            {k: v for k, v in cfg.items() if k in _CORPUS_KEYS}
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid corpus spec: {exc}") from exc


def effective_config(cfg: dict) -> dict:
    """Fully resolved config (defaults + file + flags) for provenance."""
    out = {}
    out.update(dataclasses.asdict(run_config_of(cfg)))
    out.update(dataclasses.asdict(corpus_spec_of(cfg)))
    out["ssim_window"] = cfg.get("ssim_window")
    return out


def build_denoiser(run_cfg: RunConfig, prior, capability: int) -> DenoiserHandle:
    selector = run_cfg.denoiser
    if selector == "analytic":
        return AnalyticDenoiser(
            prior, capability=capability, cond_precision=run_cfg.cond_precision
        )
    if selector.startswith("remote:"):
        return connect(
            selector[len("remote:"):],
            timeout_ms=run_cfg.remote_timeout_ms,
            pool=max(run_cfg.remote_pool, run_cfg.threads),
        )
    raise UsageError(
        f"denoiser must be 'analytic' or 'remote:host:port', got {selector!r}"
    )


def _corpus_items(args, spec: CorpusSpec, manifest: dict) -> list[dict]:
    items = manifest["items"]
    if getattr(args, "item", None) not in (None, "all"):
        try:
            index = int(args.item)
        except ValueError as exc:
            raise UsageError(f"--item must be an index or 'all', got {args.item!r}") from exc
        if not 0 <= index < len(items):
            raise UsageError(f"item {index} outside corpus of {len(items)}")
        items = [items[index]]
    return items


def _load_item(corpus: Path, entry: dict) -> tuple[LatentVideo, LatentVideo]:
    truth = LatentVideo(read_tensor(corpus / entry["truth"]).astype(np.float64))
    low = LatentVideo(read_tensor(corpus / entry["low"]).astype(np.float64))
    return truth, low


def _write_meta(path: Path, method: str, index: int, wall_ms: float, cfg: dict) -> None:
    meta = {"method": method, "item": index, "wall_ms": wall_ms, "config": cfg}
    path.write_text(json.dumps(meta, indent=2))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: dict) -> int:
    spec = corpus_spec_of(cfg)
    manifest = write_corpus(spec, args.out)
    log.info(
        "wrote %d corpus items to %s (gram condition %.2f)",
        spec.n_videos, args.out, manifest["gram_condition"],
    )
    print(f"corpus: {args.out} ({spec.n_videos} items)")
    return 0


def cmd_keyframes(args, cfg: dict) -> int:
    spec, manifest = load_manifest(args.corpus)
    run_cfg = run_config_of({**cfg, "factor": spec.factor})
    prior = build_prior(spec)
    kf_prior = keyframe_prior(prior, spec.factor)
    handle = AnalyticDenoiser(
        kf_prior, capability=spec.n_keyframes, cond_precision=run_cfg.cond_precision
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eff = effective_config(cfg)
    for entry in _corpus_items(args, spec, manifest):
        index = entry["index"]
        truth, _ = _load_item(Path(args.corpus), entry)
        t0 = time.perf_counter()
        kf = generate_keyframes(
            run_cfg, handle, truth.frame(0), spec.n_keyframes,
            NoiseSeed(run_cfg.seed + index).substream("keyframes"),
        )
        wall = (time.perf_counter() - t0) * 1e3
        write_tensor(out / f"item_{index:04d}.lvt", kf.data)
        _write_meta(out / f"item_{index:04d}.meta.json", "keyframes", index, wall, eff)
    print(f"keyframes: {out}")
    return 0


def _run_items(args, cfg: dict, method: str) -> int:
    """Shared driver for `interp` and `run`."""
    spec, manifest = load_manifest(args.corpus)
    run_cfg = run_config_of({**cfg, "factor": spec.factor})
    prior = build_prior(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eff = effective_config({**cfg, "factor": spec.factor})
    executor = (
        ThreadPoolExecutor(max_workers=run_cfg.threads)
        if run_cfg.threads > 1 else None
    )
    denoiser = None
    if method == "diffuseslide":
        denoiser = build_denoiser(run_cfg, prior, capability=run_cfg.window)
    try:
        for entry in _corpus_items(args, spec, manifest):
            index = entry["index"]
            _, low = _load_item(Path(args.corpus), entry)
            t0 = time.perf_counter()
            if method == "interp":
                result = linear_interpolation(low, spec.factor)
                trace = None
            else:
                item_cfg = dataclasses.replace(run_cfg, seed=run_cfg.seed + index)
                result, trace = diffuse_slide(low, item_cfg, denoiser, executor)
            wall = (time.perf_counter() - t0) * 1e3
            write_tensor(out / f"item_{index:04d}.lvt", result.data)
            _write_meta(out / f"item_{index:04d}.meta.json", method, index, wall, eff)
            if trace is not None:
                (out / f"trace_{index:04d}.json").write_text(
                    json.dumps(
                        {"config": eff, "trace": json.loads(trace.to_json())},
                        indent=2,
                    )
                )
    finally:
        if executor is not None:
            executor.shutdown()
        if denoiser is not None and hasattr(denoiser, "close"):
            denoiser.close()
    print(f"{method}: {out}")
    return 0


def cmd_interp(args, cfg: dict) -> int:
    return _run_items(args, cfg, "interp")


def cmd_run(args, cfg: dict) -> int:
    return _run_items(args, cfg, "diffuseslide")


def _evaluate_candidate(
    candidate: LatentVideo,
    truth: LatentVideo,
    low: LatentVideo,
    spec: CorpusSpec,
    prior,
) -> MetricReport:
    plan = KeyframePlan(factor=spec.factor, n_keyframes=spec.n_keyframes)
    return keyframe_metrics(low, candidate, plan, truth=truth, prior=prior)


def cmd_eval(args, cfg: dict) -> int:
    spec, manifest = load_manifest(args.corpus)
    prior = build_prior(spec)
    candidates = Path(args.candidates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eff = effective_config({**cfg, "factor": spec.factor})
    rows = []
    for entry in manifest["items"]:
        index = entry["index"]
        tensor_path = candidates / f"item_{index:04d}.lvt"
        if not tensor_path.exists():
            continue
        truth, low = _load_item(Path(args.corpus), entry)
        candidate = LatentVideo(read_tensor(tensor_path).astype(np.float64))
        report = _evaluate_candidate(candidate, truth, low, spec, prior)
        meta_path = candidates / f"item_{index:04d}.meta.json"
        wall_ms = None
        if meta_path.exists():
            wall_ms = json.loads(meta_path.read_text()).get("wall_ms")
        payload = {"item": index, "config": eff, **report.to_dict(), "wall_ms": wall_ms}
        (out / f"metrics_{index:04d}.json").write_text(json.dumps(payload, indent=2))
        rows.append({
            "seed": index,
            "factor": spec.factor,
            "psnr_keyframes": report.psnr_keyframes,
            "ssim_keyframes": report.ssim_keyframes,
            "psnr_vs_truth": report.psnr_vs_truth,
            "manifold_residual": report.manifold_residual,
            "wall_ms": wall_ms,
        })
    if not rows:
        raise UsageError(f"no candidate tensors found under {candidates}")
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"eval: {out} ({len(rows)} items)")
    return 0


def cmd_compare(args, cfg: dict) -> int:
    if args.seeds is not None:
        cfg = {**cfg, "n_videos": args.seeds}
    spec, manifest = (None, None)
    corpus = Path(args.corpus)
    if (corpus / "manifest.json").exists():
        spec, manifest = load_manifest(corpus)
        if args.seeds is not None and spec.n_videos != args.seeds:
            raise UsageError(
                f"--seeds {args.seeds} does not match existing corpus "
                f"of {spec.n_videos}; point --corpus at a fresh directory"
            )
    else:
        spec = corpus_spec_of(cfg)
        manifest = write_corpus(spec, corpus)
    run_cfg = run_config_of({**cfg, "factor": spec.factor})
    prior = build_prior(spec)
    plan = KeyframePlan(factor=spec.factor, n_keyframes=spec.n_keyframes)
    denoiser = build_denoiser(run_cfg, prior, capability=run_cfg.window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eff = effective_config({**cfg, "factor": spec.factor})

    per_method: dict[str, list[dict]] = {"direct": [], "interp": [], "diffuseslide": []}
    for entry in manifest["items"]:
        index = entry["index"]
        truth, low = _load_item(corpus, entry)
        produced: dict[str, tuple[LatentVideo, float]] = {}

        t0 = time.perf_counter()
        direct = direct_inference(
            prior, run_cfg, run_cfg.window, low.frame(0),
            NoiseSeed(run_cfg.seed + index).substream("direct"),
        )
        produced["direct"] = (direct, (time.perf_counter() - t0) * 1e3)

        t0 = time.perf_counter()
        interp = linear_interpolation(low, spec.factor)
        produced["interp"] = (interp, (time.perf_counter() - t0) * 1e3)

        t0 = time.perf_counter()
        item_cfg = dataclasses.replace(run_cfg, seed=run_cfg.seed + index)
        refined, _ = diffuse_slide(low, item_cfg, denoiser)
        produced["diffuseslide"] = (refined, (time.perf_counter() - t0) * 1e3)

        for method, (video, wall) in produced.items():
            report = keyframe_metrics(low, video, plan, truth=truth, prior=prior)
            per_method[method].append({
                "seed": index,
                "factor": spec.factor,
                "psnr_keyframes": report.psnr_keyframes,
                "ssim_keyframes": report.ssim_keyframes,
                "psnr_vs_truth": report.psnr_vs_truth,
                "manifold_residual": report.manifold_residual,
                "wall_ms": wall,
            })

    summary = []
    for method, rows in per_method.items():
        summary.append({
            "method": method,
            "mean_manifold_residual": float(np.mean([r["manifold_residual"] for r in rows])),
            "mean_psnr_keyframes": float(np.mean([r["psnr_keyframes"] for r in rows])),
            "mean_ssim_keyframes": float(np.mean([r["ssim_keyframes"] for r in rows])),
            "mean_psnr_vs_truth": float(np.mean([r["psnr_vs_truth"] for r in rows])),
            "mean_wall_ms": float(np.mean([r["wall_ms"] for r in rows])),
        })
    summary.sort(key=lambda row: row["mean_manifold_residual"])

    (out / "compare.json").write_text(
        json.dumps({"config": eff, "summary": summary, "per_item": per_method}, indent=2)
    )
    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method"] + CSV_COLUMNS)
        writer.writeheader()
        for method, rows in per_method.items():
            for row in rows:
                writer.writerow({"method": method, **row})

    header = f"{'method':<14}{'residual':>12}{'psnr_kf':>10}{'ssim_kf':>9}{'psnr_truth':>12}{'wall_ms':>10}"
    print(header)
    for row in summary:
        print(
            f"{row['method']:<14}{row['mean_manifold_residual']:>12.6f}"
            f"{row['mean_psnr_keyframes']:>10.2f}{row['mean_ssim_keyframes']:>9.4f}"
            f"{row['mean_psnr_vs_truth']:>12.2f}{row['mean_wall_ms']:>10.1f}"
        )
    return 0


# ---------------------------------------------------------------------------
# entry point


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable errors on stderr")
    for key in sorted(_ALL_KEYS):
        flag = "--" + key.replace("_", "-")
        if key in ("denoiser",):
            parser.add_argument(flag, dest=key)
        elif key in ("sigma_min", "sigma_max", "rho", "cond_precision", "amplitude"):
            parser.add_argument(flag, dest=key, type=float)
        else:
            parser.add_argument(flag, dest=key, type=int)
    # short alias for the iteration count
    parser.add_argument("--m", dest="m_iters", type=int, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffuseslide",
        description="High frame-rate video latent refinement engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("keyframes", help="sample keyframe latents")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--item", default="all")
    _add_config_flags(p)
    p.set_defaults(func=cmd_keyframes)

    p = sub.add_parser("interp", help="linear interpolation baseline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--item", default="all")
    _add_config_flags(p)
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("run", help="full refinement over corpus items")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--item", default="all")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="metric reports for candidate outputs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="direct vs interp vs refined, ranked")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, help="corpus size when synthesizing")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("DIFFUSESLIDE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _emit_error(args, kind: str, exc: Exception) -> None:
    if getattr(args, "json", False):
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    else:
        print(f"diffuseslide: {kind}: {exc}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k, None) for k in _ALL_KEYS}
    try:
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except UsageError as exc:
        _emit_error(args, "usage", exc)
        return 1
    except (DiffuseSlideError, ValueError, OSError, RuntimeError) as exc:
        _emit_error(args, "runtime", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
