"""Command-line driver.

    voidkit protect  --input faces/ --output out/ [--config run.yaml] [--jobs 4]
    voidkit evaluate --input faces/ --protected out/ --targets targets/ --output report/
    voidkit selftest
    voidkit dump-masks --input faces/ --output masks/
    voidkit synth --output faces/ --count 8

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 selftest failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .core import ImageTensor, save_png
from .evaluation import error_row, summarize, swap_and_score, transform_specs, write_csv, write_jsonl
from .optimizer import protect
from .saliency import build_mask_set
from .victims import BundleManifest, ManifestError, build_surrogate_bundle, synthetic_face_u8

log = logging.getLogger("voidkit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
RUN_LOG_COLUMNS = ("iteration", "l_loc", "l_id", "l_attn", "l_feat", "l_total")
BUNDLE_ENV = "VOIDKIT_BUNDLE"


def image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def resolve_inputs(spec) -> list[Path]:
    if not spec:
        return []
    p = Path(spec)
    if p.is_dir():
        files = [f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES]
    elif p.is_file():
        files = [p]
    else:
        files = [Path(f) for f in glob.glob(str(spec))]
    return sorted(files, key=lambda f: f.name)


def load_bundle(cfg: RunConfig):
    path = cfg.bundle or os.environ.get(BUNDLE_ENV)
    manifest = BundleManifest.load(path) if path else BundleManifest()
    return build_surrogate_bundle(manifest)


def _load(path: Path, size):
    try:
        img = ImageTensor.load(path)
    except Exception as exc:  # noqa: BLE001 - unreadable files are skipped
        return None, f"unreadable: {exc}"
    if (img.height, img.width) != tuple(size):
        return None, f"size {img.height}x{img.width} does not match bundle {size[0]}x{size[1]}"
    return img.data, None


def _json_safe(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def write_run_log(rows, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_LOG_COLUMNS)
        for r in rows:
            w.writerow([r["iteration"]] + [repr(float(r[c])) for c in RUN_LOG_COLUMNS[1:]])


def _dump_masks(masks, out_dir: Path, stem: str, p_final=None) -> None:
    save_png(masks.semantic.data, out_dir / f"{stem}_semantic.png")
    save_png(masks.cam.data, out_dir / f"{stem}_cam.png")
    n = int(round(math.sqrt(masks.anchor.data.numel())))
    if n * n == masks.anchor.data.numel():
        save_png(masks.anchor.data.reshape(n, n), out_dir / f"{stem}_anchor.png")
    if p_final is not None:
        save_png(p_final, out_dir / f"{stem}_P.png")


# ---------------------------------------------------------------- commands

def cmd_protect(cfg: RunConfig) -> int:
    bundle = load_bundle(cfg)
    files = resolve_inputs(cfg.input)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)

    def work(item):
        idx, path = item
        x, err = _load(path, bundle.image_size)
        if err:
            log.warning("skipping %s: %s", path, err)
            return {"name": path.name, "status": "skipped", "reason": err}
        res = protect(x, bundle, cfg.budget, cfg.weights, cfg.adaptive, margin=cfg.margin,
                      tau_p=cfg.tau_p, seed=image_seed(cfg.seed, idx),
                      timestep_mode=cfg.timestep_mode, keep_history=cfg.dump_masks)
        return {"name": path.name, "status": "ok", "result": res}

    items = list(enumerate(files))
    if cfg.jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]

    # single writer, input order
    images, timing = [], {}
    for r in results:
        if r["status"] != "ok":
            images.append({"name": r["name"], "status": r["status"], "reason": r["reason"]})
            continue
        res = r["result"]
        stem = Path(r["name"]).stem
        save_png(res.image_u8, out / f"{stem}.png")
        write_run_log(res.log_rows, out / "logs" / f"{stem}.csv")
        if cfg.dump_masks:
            p_final = res.p_history[-1] if res.p_history else None
            _dump_masks(res.masks, out / "masks", stem, p_final)
        images.append({"name": r["name"], "status": "ok", "output": f"{stem}.png", **res.summary()})
        timing[r["name"]] = res.wall_time
    summary = {"config": cfg.to_dict(), "images": images,
               "protected": sum(i["status"] == "ok" for i in images),
               "skipped": sum(i["status"] != "ok" for i in images)}
    (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2) + "\n")
    # wall time varies run to run, so it stays out of the summary
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    log.info("protected %d image(s), skipped %d", summary["protected"], summary["skipped"])
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    if not cfg.evaluate.protected:
        raise ConfigError("evaluate.protected", "directory of protected images is required")
    bundle = load_bundle(cfg)
    clean_files = resolve_inputs(cfg.input)
    prot_dir = Path(cfg.evaluate.protected)
    targets = resolve_inputs(cfg.evaluate.targets)
    specs = transform_specs() if cfg.evaluate.transforms else []
    labels = ["identity"] + [s[0] for s in specs]
    if clean_files and not targets:
        raise ConfigError("evaluate.targets", "no target images found")

    def work(item):
        idx, path = item
        pid = path.stem
        tpath = targets[idx % len(targets)]
        # pair prefers the protect output name (always .png), then the same file name
        cand = [prot_dir / f"{path.stem}.png", prot_dir / path.name]
        ppath = next((c for c in cand if c.is_file()), None)
        clean, err = _load(path, bundle.image_size)
        tgt, terr = _load(tpath, bundle.image_size)
        prot, perr = (None, "missing protected image") if ppath is None else _load(ppath, bundle.image_size)
        msg = err or terr or perr
        if msg:
            log.warning("pair %s: %s", pid, msg)
            return [error_row(pid, lab, msg, bundle.eval_encoder) for lab in labels]
        return swap_and_score(prot, clean, [tgt], bundle, pair_id=pid,
                              transforms=cfg.evaluate.transforms)

    items = list(enumerate(clean_files))
    if cfg.jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(work, items))
    else:
        chunks = [work(it) for it in items]
    rows = [r for c in chunks for r in c]
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "metrics.csv")
    write_jsonl(rows, out / "metrics.jsonl")
    summary = {"eval_encoder": bundle.eval_encoder, "pairs": len(items), "rows": len(rows),
               "per_transform": summarize(rows)}
    (out / "metrics_summary.json").write_text(json.dumps(_json_safe(summary), indent=2) + "\n")
    log.info("wrote %d metric rows for %d pair(s)", len(rows), len(items))
    return EXIT_OK


def cmd_selftest(cfg: RunConfig) -> int:
    from .selftest import run_selftest

    t0 = time.perf_counter()
    checks = run_selftest(load_bundle(cfg), seed=cfg.seed)
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"selftest {'passed' if ok else 'FAILED'}: {sum(c.passed for c in checks)}/{len(checks)} "
          f"checks in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if ok else EXIT_SELFTEST


def cmd_dump_masks(cfg: RunConfig) -> int:
    bundle = load_bundle(cfg)
    out = Path(cfg.output)
    for path in resolve_inputs(cfg.input):
        x, err = _load(path, bundle.image_size)
        if err:
            log.warning("skipping %s: %s", path, err)
            continue
        _dump_masks(build_mask_set(bundle, x, cfg.tau_p), out, path.stem)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, count: int) -> int:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        save_png(synthetic_face_u8(image_seed(cfg.seed, i)), out / f"face_{i:03d}.png")
    return EXIT_OK


# ---------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--input", help="input directory, glob or file")
    common.add_argument("--output", help="output directory")
    common.add_argument("--bundle", help=f"bundle manifest (default: ${BUNDLE_ENV}, then built-in)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--epsilon", type=float, help="L-inf radius in [0,1] pixel units")
    common.add_argument("--alpha", type=float, help="step size")
    common.add_argument("--iters", type=int, help="number of iterations")
    common.add_argument("--no-adaptive", action="store_true", help="plain signed-gradient steps")
    common.add_argument("--dump-masks", action="store_true", help="also write mask PNGs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="voidkit", description="Face-swap immunization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("protect", parents=[common], help="protect a batch of images")
    ev = sub.add_parser("evaluate", parents=[common], help="swap and score clean vs protected")
    ev.add_argument("--protected", help="directory of protected images")
    ev.add_argument("--targets", help="directory or glob of swap targets")
    ev.add_argument("--no-transforms", action="store_true", help="skip the robustness transforms")
    sub.add_parser("selftest", parents=[common], help="run built-in invariant checks")
    sub.add_parser("dump-masks", parents=[common], help="write source-side masks")
    sy = sub.add_parser("synth", parents=[common], help="render synthetic test faces")
    sy.add_argument("--count", type=int, default=8)
    return parser


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {
        "input": args.input, "output": args.output, "bundle": args.bundle,
        "seed": args.seed, "jobs": args.jobs,
        "budget.epsilon": args.epsilon, "budget.alpha": args.alpha, "budget.iterations": args.iters,
        "adaptive.enabled": False if args.no_adaptive else None,
        "dump_masks": True if args.dump_masks else None,
    }
    if getattr(args, "protected", None) is not None:
        over["evaluate.protected"] = args.protected
    if getattr(args, "targets", None) is not None:
        over["evaluate.targets"] = args.targets
    if getattr(args, "no_transforms", False):
        over["evaluate.transforms"] = False
    return cfg.with_overrides(**over)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "protect":
            return cmd_protect(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "selftest":
            return cmd_selftest(cfg)
        if args.command == "dump-masks":
            return cmd_dump_masks(cfg)
        return cmd_synth(cfg, args.count)
    except (ConfigError, ManifestError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
