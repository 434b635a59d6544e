"""Command-line entry point: ``omvfs {select,eval,synth,drift,bench}``.

Exit codes: 0 success, 2 usage or I/O error, 3 numerical divergence.
Progress goes to stderr; stdout carries machine-readable summaries only.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, ingest, pipeline, synth
from .evaluation import evaluate_selection
from .types import (
    MEDIAN_HEURISTIC,
    DivergenceError,
    FeatureRanking,
    HyperParams,
    OmvfsError,
    ValidationError,
    save_state,
)

log = logging.getLogger("omvfs")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def int_list(text: str) -> list[int]:
    """``"100,200"`` or an inclusive range ``"100:600:100"``."""
    if ":" in text:
        lo, hi, step = (int(x) for x in text.split(":"))
        return list(range(lo, hi + 1, step))
    return [int(x) for x in text.split(",") if x.strip()]


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--k", type=int, default=None, help="number of clusters")
    g.add_argument("--chunk-size", type=int, default=200)
    g.add_argument("--buffer", type=int, default=2, help="chunks kept in the buffer")
    g.add_argument("--alpha", default="1", help="graph weight, one value or one per view")
    g.add_argument("--beta", default="1", help="sparsity weight, one value or one per view")
    g.add_argument("--gamma", type=float, default=1e7)
    bw = g.add_mutually_exclusive_group()
    bw.add_argument("--sigma", type=float, default=None, help="fixed Gaussian kernel bandwidth")
    bw.add_argument("--sigma-median", action="store_true", help="median heuristic (default)")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--max-iters", type=int, default=200)
    g.add_argument("--norm", choices=ingest.NORM_MODES, default="row-l2")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", default=None, help="JSON file whose entries override the flags")


def _params(args, n_views: int) -> HyperParams:
    def per_view(text, name):
        vals = _floats(text)
        if len(vals) == 1:
            return vals * n_views
        if len(vals) != n_views:
            raise ValidationError(f"{name} arity mismatch")
        return vals

    d = {
        "k": args.k,
        "chunk_size": args.chunk_size,
        "buffer_chunks": args.buffer,
        "alpha": per_view(args.alpha, "alpha"),
        "beta": per_view(args.beta, "beta"),
        "gamma": args.gamma,
        "kernel_bandwidth": args.sigma if args.sigma is not None else MEDIAN_HEURISTIC,
        "inner_tol": args.tol,
        "max_inner_iters": args.max_iters,
        "seed": args.seed,
    }
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        args.norm = cfg.pop("norm", args.norm)
        for key in ("alpha", "beta"):
            if key in cfg and not isinstance(cfg[key], list):
                cfg[key] = [float(cfg[key])] * n_views
        d.update(cfg)
    if d["k"] is None:
        raise ValidationError("k must be given (--k or config)")
    return HyperParams(**d)


def write_rankings(out: Path, ranks: list[FeatureRanking]) -> None:
    for r in ranks:
        (out / f"ranking_view{r.view_id}.json").write_text(json.dumps(r.to_dict()) + "\n")
        with open(out / f"ranking_view{r.view_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "score"])
            for i, s in zip(r.order, r.scores):
                w.writerow([int(i), repr(float(s))])


def read_rankings(path: Path, view_ids) -> list[FeatureRanking]:
    out = []
    for vid in view_ids:
        f = path / f"ranking_view{vid}.json"
        if not f.is_file():
            raise FileNotFoundError(f"ranking not found: {f}")
        out.append(FeatureRanking.from_dict(json.loads(f.read_text())))
    return out


def cmd_select(args) -> int:
    desc = ingest.read_manifest(args.manifest)
    params = _params(args, len(desc.views))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports_path = out / "chunks.jsonl"

    with ingest.ChunkReader(desc) as reader, open(reports_path, "w") as rep_fh:
        def chunks():
            while (c := reader.next_chunk(params.chunk_size)) is not None:
                yield c

        def on_chunk(state, report, chunk):
            rep_fh.write(json.dumps(report.to_json_dict()) + "\n")
            log.info("chunk %d: %d iters, objective %.6g", report.t, report.iters, report.objective)

        state, _ = pipeline.run_stream(chunks(), params, list(desc.views), args.norm, on_chunk=on_chunk)
    ranks = pipeline.rankings(state)
    write_rankings(out, ranks)
    save_state(state, out / "checkpoint.npz")
    print(json.dumps({"chunks": state.t, "views": [r.view_id for r in ranks], "out": str(out)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    data, labels, desc = ingest.load_all(args.manifest)
    if labels is None:
        raise ValidationError("evaluation requires labels")
    ranks = read_rankings(Path(args.rankings), [v.view_id for v in desc.views])
    k = args.k if args.k is not None else int(np.unique(labels).size)
    rows = []
    for p in int_list(args.p):
        try:
            rep = evaluate_selection(ranks, [p] * len(data), data, labels, k, args.seed)
            rows.append((p, rep.acc, rep.nmi, ""))
            print(f"p={p} {rep.summary()}")
        except ValidationError as exc:
            rows.append((p, "", "", str(exc)))
            log.warning("p=%d: %s", p, exc)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "acc", "nmi", "error"])
        w.writerows(rows)
    return EXIT_OK


def _plant_spec(args) -> synth.PlantSpec:
    dims = int_list(args.dims)
    informative = int_list(args.informative)
    if len(informative) == 1:
        informative = informative * len(dims)
    return synth.PlantSpec(
        n=args.n, dims=tuple(dims), k=args.k, informative=tuple(informative),
        noise_scale=args.noise, drift_period=args.drift_period, seed=args.seed,
        signal=args.signal, imbalance=args.imbalance, background=args.background,
    )


def cmd_synth(args) -> int:
    ds = synth.generate(_plant_spec(args))
    manifest = synth.write_dataset(ds, args.out, fmt=args.format)
    print(json.dumps({"manifest": str(manifest), "rows": int(ds.labels.size), "regimes": len(ds.schedule)}))
    return EXIT_OK


def cmd_drift(args) -> int:
    data, labels, desc = ingest.load_all(args.manifest)
    if labels is None:
        raise ValidationError("evaluation requires labels")
    params = _params(args, len(desc.views))
    data = [x.toarray() if hasattr(x, "toarray") else x for x in data]
    rows = experiments.drift_tracks(
        data, labels, params, window=args.window, static_p=args.static_p,
        p_list=int_list(args.p) if args.p else None, static_rows=args.static_rows, norm=args.norm,
        eval_seed=args.seed,
    )
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "track", "p", "acc", "nmi"])
        w.writerows(r.as_tuple() for r in rows)
    last = max(r.window for r in rows)
    for r in rows:
        if r.window == last:
            print(f"window={r.window} track={r.track} p={r.p} ACC={r.acc:.4f} NMI={r.nmi:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    n_views = 2
    args.k = args.k if args.k is not None else 3
    params = _params(args, n_views)
    rows = experiments.bench(int_list(args.sizes), int_list(args.dims), params, n_views=n_views,
                             repeats=args.repeats, seed=args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "D", "seconds"])
        w.writerows(rows)
    for n, d, s in rows:
        print(f"N={n} D={d} seconds={s:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omvfs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="stream a dataset and write feature rankings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_param_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="cluster on top-p features and score ACC/NMI")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rankings", required=True, help="directory written by 'select'")
    p.add_argument("--p", default="100:600:100")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a planted synthetic stream")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--dims", default="200,200")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--informative", default="20")
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--drift-period", type=int, default=0)
    p.add_argument("--imbalance", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("dense", "sparse"), default="dense")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("drift", help="adaptive vs static feature subset on a labelled stream")
    p.add_argument("--manifest", required=True)
    p.add_argument("--window", type=int, default=3000)
    p.add_argument("--static-p", type=int, default=200)
    p.add_argument("--static-rows", type=int, default=None, help="rows used for the static ranking")
    p.add_argument("--p", default=None, help="feature counts for the adaptive track")
    p.add_argument("--out", required=True, help="CSV file")
    _add_param_flags(p)
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("bench", help="time the core loop over an (N, D) grid")
    p.add_argument("--sizes", default="1000,2000")
    p.add_argument("--dims", default="1000,2000")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", required=True, help="CSV file")
    _add_param_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(message)s")
    threads = os.environ.get("OMVFS_THREADS")
    if threads:
        log.info("OMVFS_THREADS=%s", threads)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"omvfs: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OmvfsError, OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"omvfs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
