"""Command-line entry point: gen, train, match, eval.

Every command writes its resolved configuration next to its outputs and
echoes it on stdout, so a run can be repeated from the echo alone.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decode import DUMMY, DiscreteMatching, decode, hard_soft_match, node_correctness, truth_pattern
from .encoder import EncoderConfig, EncoderWeights
from .graph import DEFAULT_ATTACH, DEFAULT_MAX_DEGREE, PairFormatError, load_pair, make_ba_pair, save_pair
from .objectives import ObjectiveConfig, QapKernel, f_qap
from .refine import TrainConfig, TrainingDiverged, refine_loop, train
from .sinkhorn import SinkhornConfig

log = logging.getLogger("stochmatch")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATASET_FORMAT = "stochmatch-dataset"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def substream(root: int, name: str) -> int:
    """Independent integer seed for the named consumer of the root seed."""
    ss = np.random.SeedSequence([root, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo(command: str, config: dict, out: Path) -> None:
    resolved = {"command": command, **config}
    print(json.dumps(resolved, sort_keys=True))
    _write_json(out / f"{command}_config.json", resolved)


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from e
    return out


def _sink_config(args) -> SinkhornConfig:
    return SinkhornConfig(temperature=args.temperature, iterations=args.sinkhorn_iters,
                          noise_scale=0.0 if args.no_stochastic else 1.0, dummy=not args.no_dummy)


def load_dataset(path: str) -> list:
    """Pairs listed in a dataset manifest, in manifest order."""
    root = Path(path)
    manifest = root / "manifest.json"
    if not manifest.is_file():
        raise DataError(f"{root}: no manifest.json")
    try:
        doc = json.loads(manifest.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{manifest}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if doc.get("format") != DATASET_FORMAT or not isinstance(doc.get("pairs"), list):
        raise DataError(f"{manifest}: not a dataset manifest")
    pairs = []
    for k, entry in enumerate(doc["pairs"]):
        try:
            pairs.append(dataclasses.replace(load_pair(root / entry["file"]), name=str(entry["id"])))
        except (KeyError, TypeError) as e:
            raise DataError(f"{manifest}: pairs[{k}] lacks id/file") from e
        except OSError as e:
            raise DataError(str(e)) from e
    if not pairs:
        raise DataError(f"{manifest}: dataset is empty")
    return pairs


# ------------------------------------------------------------------ gen


def cmd_gen(args) -> int:
    if args.nodes < 1 or args.pairs < 1 or not 0 <= args.noise:
        raise ConfigError("--nodes and --pairs must be positive, --noise non-negative")
    out = _out_dir(args.out)
    config = {"nodes": args.nodes, "noise": args.noise, "pairs": args.pairs, "seed": args.seed,
              "attach": args.attach, "max_degree": args.max_degree}
    _echo("gen", config, out)
    entries = []
    for k in range(args.pairs):
        pid = f"pair_{k:03d}"
        try:
            pair = make_ba_pair(args.nodes, args.noise, substream(args.seed, f"data/{pid}"),
                                args.attach, args.max_degree, name=pid)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        save_pair(pair, out / f"{pid}.json")
        entries.append({"id": pid, "file": f"{pid}.json"})
    _write_json(out / "manifest.json", {"format": DATASET_FORMAT, "config": config, "pairs": entries})
    log.info("wrote %d pairs to %s", len(entries), out)
    return EXIT_OK


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    pairs = load_dataset(args.data)
    try:
        sink = _sink_config(args)
        enc = EncoderConfig(layers=args.layers, hidden=args.hidden)
        tcfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, T=args.T, samples=args.samples,
                           seed=substream(args.seed, "training"))
        obj = ObjectiveConfig(lam=args.lam, supervised=args.supervised)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.supervised and any(p.ground_truth is None for p in pairs):
        raise ConfigError("--supervised needs ground truth on every training pair")
    widths = {p.source.feature_dim for p in pairs}
    if len(widths) != 1:
        raise DataError(f"pairs disagree on feature width: {sorted(widths)}")
    out = _out_dir(args.out)
    config = {"data": str(args.data), "epochs": args.epochs, "lr": args.lr, "T": args.T,
              "samples": args.samples, "hidden": args.hidden, "layers": args.layers, "lambda": args.lam,
              "supervised": args.supervised, "seed": args.seed, "temperature": args.temperature,
              "sinkhorn_iters": args.sinkhorn_iters, "dummy": sink.dummy, "stochastic": not args.no_stochastic}
    _echo("train", config, out)
    weights = EncoderWeights.init(enc, widths.pop(), substream(args.seed, "init"))
    with open(out / "train_log.jsonl", "w") as fh:
        def record(r):
            fh.write(json.dumps(r, sort_keys=True) + "\n")
            fh.flush()

        best, history = train(pairs, weights, tcfg, obj, sink, on_epoch=record)
    best.save(out / "checkpoint.json")
    top = max(history, key=lambda r: r["mean_objective"])
    _write_json(out / "manifest.json", {"checkpoint": "checkpoint.json", "log": "train_log.jsonl",
                                        "config": "train_config.json", "best_epoch": top["epoch"]})
    log.info("best epoch %d, objective %.4f", top["epoch"], top["mean_objective"])
    return EXIT_OK


# ---------------------------------------------------------------- match


def match_pair(pair, weights: EncoderWeights, sink: SinkhornConfig, T: int, samples: int, seed: int) -> dict:
    """Refine, decode and score one pair; assignment is in the file's orientation."""
    t0 = time.perf_counter()
    kernel = QapKernel.edge_agreement(pair)
    trace = refine_loop(pair, weights, sink, ObjectiveConfig(), T, samples, seed, kernel)
    pred, _ = decode(trace.final, sink.dummy)
    qap = f_qap(Tensor(pred.as_matrix()), kernel).item()
    metrics = {"expected_objective": trace.estimates[-1], "accepted": trace.accepted}
    if pair.ground_truth is not None:
        hard, soft = hard_soft_match(pred, truth_pattern(pair.ground_truth, pair.n_s))
        metrics.update(nc=node_correctness(pred, pair.ground_truth), hard=hard, soft=soft)
    return {"pair_id": pair.name, "assignment": pred.oriented(pair.swapped), "objective": qap,
            "metrics": metrics, "seconds": time.perf_counter() - t0}


def _match_job(job):
    pair, weights, sink, T, samples, seed = job
    return match_pair(pair, weights, sink, T, samples, seed)


def cmd_match(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise DataError(f"checkpoint {ckpt} not found")
    try:
        weights = EncoderWeights.load(ckpt)
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"{ckpt}: {e}") from e
    pairs = load_dataset(args.data)
    try:
        sink = SinkhornConfig(temperature=args.temperature, iterations=args.eval_iters,
                              noise_scale=0.0 if args.no_stochastic else 1.0, dummy=not args.no_dummy)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.T < 0 or args.samples < 1 or args.jobs < 1:
        raise ConfigError("--T must be non-negative, --samples and --jobs positive")
    for p in pairs:
        if p.source.feature_dim != weights.input_dim:
            raise DataError(f"{p.name}: feature width {p.source.feature_dim}, checkpoint expects {weights.input_dim}")
    out = _out_dir(args.out)
    config = {"data": str(args.data), "checkpoint": str(ckpt), "T": args.T, "samples": args.samples,
              "eval_iters": args.eval_iters, "temperature": args.temperature, "dummy": sink.dummy,
              "stochastic": not args.no_stochastic, "seed": args.seed, "jobs": args.jobs}
    _echo("match", config, out)
    jobs = [(p, weights, sink, args.T, args.samples, substream(args.seed, f"match/{p.name}")) for p in pairs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_match_job, jobs))
    else:
        results = [_match_job(j) for j in jobs]
    for r in results:
        _write_json(out / f"{r['pair_id']}.match.json", r)
    _write_json(out / "manifest.json", {"matches": [f"{r['pair_id']}.match.json" for r in results],
                                        "config": "match_config.json"})
    if any("nc" in r["metrics"] for r in results):
        log.info("mean node correctness %.4f", np.mean([r["metrics"]["nc"] for r in results if "nc" in r["metrics"]]))
    return EXIT_OK


# ----------------------------------------------------------------- eval


def _mean_stderr(xs) -> dict:
    xs = np.asarray(xs, dtype=float)
    se = float(xs.std(ddof=1) / np.sqrt(len(xs))) if len(xs) > 1 else 0.0
    return {"mean": float(xs.mean()), "stderr": se}


def score_matching(pair, assignment) -> dict:
    """Metrics of a stored assignment (file orientation) against the pair's truth."""
    if pair.ground_truth is None:
        return {}
    n_s, n_t = (pair.n_t, pair.n_s) if pair.swapped else (pair.n_s, pair.n_t)
    if len(assignment) != n_s:
        raise DataError(f"{pair.name}: assignment has {len(assignment)} entries, source has {n_s}")
    try:
        pred = DiscreteMatching(tuple(int(j) for j in assignment), n_t)
        if pair.swapped:
            pred = DiscreteMatching(pred.reverse(), n_s)
    except (TypeError, ValueError) as e:
        raise DataError(f"{pair.name}: invalid assignment: {e}") from e
    hard, soft = hard_soft_match(pred, truth_pattern(pair.ground_truth, pair.n_s))
    return {"nc": node_correctness(pred, pair.ground_truth), "hard": hard, "soft": soft}


def cmd_eval(args) -> int:
    pairs = {p.name: p for p in load_dataset(args.data)}
    mdir = Path(args.matches)
    rows = []
    for pid, pair in pairs.items():
        path = mdir / f"{pid}.match.json"
        if not path.is_file():
            raise DataError(f"missing matching file {path}")
        try:
            doc = json.loads(path.read_text())
            assignment, objective, seconds = doc["assignment"], float(doc["objective"]), float(doc["seconds"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: {e}") from e
        scores = score_matching(pair, assignment)
        if not scores:
            raise DataError(f"{pid}: no ground truth to evaluate against")
        rows.append({"pair_id": pid, **scores, "objective": objective, "seconds": seconds})
    out = _out_dir(args.out)
    _echo("eval", {"data": str(args.data), "matches": str(mdir)}, out)
    cols = ["pair_id", "nc", "hard", "soft", "objective", "seconds"]
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    summary = {k: _mean_stderr([r[k] for r in rows]) for k in cols[1:]}
    report = {"pairs": len(rows), "summary": summary, "rows": rows,
              "notes": ["hard=1 for an empty truth pattern (vacuously satisfied)",
                        f"assignment value {DUMMY} denotes the dummy node"]}
    _write_json(out / "report.json", report)
    nc = summary["nc"]
    print(f"node correctness {nc['mean']:.4f} +/- {nc['stderr']:.4f} over {len(rows)} pairs")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochmatch", description="Stochastic graph matching.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate Barabasi-Albert pairs")
    g.add_argument("--nodes", type=int, default=100)
    g.add_argument("--noise", type=float, default=0.05, help="fraction of edges added to the target")
    g.add_argument("--pairs", type=int, default=10)
    g.add_argument("--attach", type=int, default=DEFAULT_ATTACH)
    g.add_argument("--max-degree", type=int, default=DEFAULT_MAX_DEGREE, help="degree one-hot cap")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def sinkhorn_flags(q, iters_flag, iters_default):
        q.add_argument("--temperature", type=float, default=1.0)
        q.add_argument(iters_flag, type=int, default=iters_default, dest=iters_flag[2:].replace("-", "_"))
        q.add_argument("--no-dummy", action="store_true", help="forbid dummy assignments")
        q.add_argument("--no-stochastic", action="store_true", help="turn Gumbel noise off")

    t = sub.add_parser("train", help="train the encoder")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--T", type=int, default=4, help="refinement steps")
    t.add_argument("--samples", type=int, default=10, help="Monte Carlo samples per estimate")
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--layers", type=int, default=5)
    t.add_argument("--lambda", type=float, default=1.0, dest="lam", help="weight of the supervised term")
    t.add_argument("--supervised", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    sinkhorn_flags(t, "--sinkhorn-iters", 10)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("match", help="refine and decode every pair")
    m.add_argument("--data", required=True)
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--T", type=int, default=4)
    m.add_argument("--samples", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--out", required=True)
    sinkhorn_flags(m, "--eval-iters", 100)
    m.set_defaults(func=cmd_match)

    e = sub.add_parser("eval", help="aggregate metrics into CSV and JSON")
    e.add_argument("--data", required=True)
    e.add_argument("--matches", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    ad.saturation.count = 0
    try:
        code = args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PairFormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if ad.saturation.count:
        log.warning("%d clamped log/division inputs", ad.saturation.count)
    return code


if __name__ == "__main__":
    sys.exit(main())
