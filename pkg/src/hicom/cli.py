"""Command-line entry point: ``hicom <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import curation
from .errors import HicomError
from .harness import pipeline_grad_check
from .injection import ConditionEmbedding
from .local_compressor import GroupGrid
from .pipeline import MODES, CompressorConfig, forward, init_params, token_budget
from .tensor import load_tensor, save_tensor


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _parse_triple(s: str) -> tuple[int, int, int]:
    parts = [int(x) for x in s.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected aT,aH,aW, got {s!r}")
    return tuple(parts)


def _parse_grid(s: str) -> tuple[int, int]:
    parts = [int(x) for x in s.lower().split("x")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW, got {s!r}")
    return tuple(parts)


def _add_compress_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="HICT file of T x H x W x D features")
    p.add_argument("--cond-pooled", required=True, help="HICT file of the 1 x D pooled condition")
    p.add_argument("--cond-fine", help="HICT file of the L x D token-level condition")
    p.add_argument("--config", required=True, help="compressor JSON config")
    p.add_argument("--out", required=True, help="output HICT file for the projected sequence")
    p.add_argument("--attn-dir", help="directory to receive attention maps and run metadata")
    p.add_argument("--workers", type=int, default=1)


def _run_compress(args, mode: str, conditional: bool | None) -> int:
    config = CompressorConfig.load(args.config)
    if conditional:
        config.conditional_local = config.conditional_global = True
    v = load_tensor(args.input)
    pooled = load_tensor(args.cond_pooled)
    fine = load_tensor(args.cond_fine) if args.cond_fine else None
    cond = ConditionEmbedding(pooled.reshape(1, -1), fine)
    params = init_params(config)
    out, _ = forward(v, cond, params, config, mode, conditional, args.workers)
    save_tensor(args.out, out.sequence)
    if args.attn_dir:
        _write_attn(Path(args.attn_dir), out, config, v.shape, mode, conditional)
    print(json.dumps({"tokens": out.token_count, "out": str(args.out)}))
    return 0


def _write_attn(run_dir: Path, out, config, shape, mode, conditional) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    meta = {"shape": list(shape), "ratio": list(config.ratio), "heads": config.heads, "mode": mode,
            "conditional": conditional, "local": False, "global": False}
    if out.local is not None:
        t, h, w = shape[:3]
        per_head = np.zeros((config.heads, t, h, w))
        grid = out.local.grid
        for idx, wts in zip(grid.indices(), out.local.attn):
            st, sh, sw = grid.bounds(idx)
            per_head[:, st, sh, sw] = wts.reshape(config.heads, st.stop - st.start, sh.stop - sh.start, sw.stop - sw.start)
        save_tensor(run_dir / "local_attn_heads.hict", per_head)
        meta["local"] = True
    if out.global_ is not None:
        save_tensor(run_dir / "global_attn_heads.hict", np.ascontiguousarray(out.global_.attn))
        meta["global"] = True
    (run_dir / "run.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_compress(args) -> int:
    return _run_compress(args, "local+global", None)


def cmd_ablate(args) -> int:
    return _run_compress(args, args.mode, args.conditional)


def cmd_budget(args) -> int:
    print(token_budget(args.frames, args.grid, args.ratio, args.num_global))
    return 0


def cmd_gradcheck(args) -> int:
    config = CompressorConfig.load(args.config)
    report = pipeline_grad_check(
        config, seed=args.seed, shape=args.shape, h=args.h, tol=args.tol,
        max_coords=args.max_coords, corrupt=args.corrupt,
    )
    print(json.dumps(report.to_dict(), indent=2))
    return 0 if report.passed else 1


def cmd_attnmap(args) -> int:
    run_dir = Path(args.run_dir)
    meta = json.loads((run_dir / "run.json").read_text())
    written = []
    if meta["local"]:
        local = load_tensor(run_dir / "local_attn_heads.hict").mean(axis=0)
        if args.format == "hict":
            save_tensor(run_dir / "local_attn.hict", local)
            written.append(run_dir / "local_attn.hict")
        else:
            grid = GroupGrid(tuple(meta["shape"][:3]), tuple(meta["ratio"]))
            path = run_dir / "local_attn.csv"
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["t", "h", "w", "weights"])
                for idx in grid.indices():
                    weights = local[grid.bounds(idx)].reshape(-1)
                    wr.writerow([*idx, " ".join(repr(float(x)) for x in weights)])
            written.append(path)
    if meta["global"]:
        glob = load_tensor(run_dir / "global_attn_heads.hict").mean(axis=0)
        if args.format == "hict":
            save_tensor(run_dir / "global_attn.hict", glob)
            written.append(run_dir / "global_attn.hict")
        else:
            path = run_dir / "global_attn.csv"
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["query", "weights"])
                for q, row in enumerate(glob):
                    wr.writerow([q, " ".join(repr(float(x)) for x in row)])
            written.append(path)
    for p in written:
        print(p)
    return 0


def cmd_curate(args) -> int:
    cfg = curation.CurationConfig(
        scene_threshold=args.scene_threshold,
        keyframe_threshold=args.keyframe_threshold,
        min_len=args.min_len,
        max_len=args.max_len,
        quota=args.quota,
        extra=args.extra,
        seed=args.seed,
    )
    if args.provider == "mock":
        provider = curation.MockProvider(dim=args.dim, seed=args.seed)
    else:
        if not args.embeddings:
            raise SystemExit("--provider file needs --embeddings <json>")
        provider = curation.FileProvider(args.embeddings)
    qa = curation.MockQAProvider(seed=args.seed) if args.mock_qa else None
    with open(args.input, encoding="utf-8") as fh:
        records = curation.load_records(fh, cfg, provider)
    curation.curate(records, cfg, provider, qa)
    stats = curation.build_manifest(records, args.out)
    print(json.dumps(stats, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hicom", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress a feature tensor to an LLM token sequence")
    _add_compress_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("ablate", help="run one ablation mode")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--conditional", required=True, type=_parse_bool)
    _add_compress_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("budget", help="print the LLM token count for a clip")
    p.add_argument("--frames", required=True, type=int)
    p.add_argument("--grid", required=True, type=_parse_grid, help="HxW")
    p.add_argument("--ratio", required=True, type=_parse_triple, help="aT,aH,aW")
    p.add_argument("--global", dest="num_global", required=True, type=int)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--shape", type=_parse_triple, default=(2, 3, 3), help="T,H,W of the probe instance")
    p.add_argument("--max-coords", type=int, help="subsample coordinates per parameter")
    p.add_argument("--corrupt", help="perturb this parameter's analytic gradient (mutation test)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attnmap", help="export head-averaged attention maps of a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--format", choices=("csv", "hict"), default="csv")
    p.set_defaults(func=cmd_attnmap)

    p = sub.add_parser("curate", help="build a clip manifest from source videos")
    p.add_argument("--input", required=True)
    p.add_argument("--provider", choices=("mock", "file"), default="mock")
    p.add_argument("--embeddings", help="JSON {key: vector} for --provider file")
    p.add_argument("--dim", type=int, default=32, help="mock embedding dim")
    p.add_argument("--scene-threshold", type=float, required=True)
    p.add_argument("--keyframe-threshold", type=float, required=True)
    p.add_argument("--min-len", type=float, default=curation.MIN_LEN)
    p.add_argument("--max-len", type=float, default=curation.MAX_LEN)
    p.add_argument("--quota", type=int, default=curation.FULL_QUOTA)
    p.add_argument("--extra", type=int, default=curation.FULL_EXTRA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mock-qa", action="store_true", help="generate QA pairs for clips that have none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (HicomError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
