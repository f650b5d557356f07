"""Command line entry point: ``acodm generate-corpus | run | report | sweep``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .corpus import CorpusSpec, generate, save_corpus
from .lm_env import DivergenceError
from .orchestrator import (MODES, ConfigError, RunConfig, _build, compare_report, config_from_dict,
                           load_config, report_csv, report_table, run)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("acodm")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def cmd_generate_corpus(args) -> int:
    if args.config:
        data = json.loads(Path(args.config).read_text())
        spec = config_from_dict(data).corpus if "corpus" in data else _build(CorpusSpec, data, "corpus")
    else:
        spec = CorpusSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    spec.validate()
    corpus = generate(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, args.out)
    print(f"wrote {args.out}: k={corpus.k} vocab={corpus.vocab_size} "
          f"docs/domain={spec.docs_per_domain} digest={corpus.digest()[:12]}")
    return EXIT_OK


def _run_one(cfg: RunConfig, out: str) -> tuple[str, float]:
    Path(out).mkdir(parents=True, exist_ok=True)
    result = run(cfg, out)
    return out, float(result.final_val_loss.mean())


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.output_dir
    out, loss = _run_one(cfg, out)
    print(f"{cfg.mode} seed={cfg.seed}: final mean val loss {loss:.4f} -> {out}")
    return EXIT_OK


def _sweep_job(payload: tuple[dict, str]) -> tuple[str, float | None, str]:
    data, out = payload
    cfg = config_from_dict(data)
    try:
        out, loss = _run_one(cfg, out)
        return out, loss, "ok"
    except DivergenceError as e:
        return out, None, f"diverged: {e}"


def cmd_sweep(args) -> int:
    base = _config(args)
    modes = args.modes or [base.mode]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}")
    jobs = []
    for mode in modes:
        for seed in args.seeds:
            data = replace(base, mode=mode, seed=seed).to_dict()
            jobs.append((data, str(Path(args.out) / f"{mode}-s{seed}")))
    # each job rebuilds its config from plain data, so runs share no mutable state
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(_sweep_job, jobs))
    status = EXIT_OK
    for out, loss, msg in results:
        print(f"{out}: {msg}" + (f" final mean val loss {loss:.4f}" if loss is not None else ""))
        if msg != "ok":
            status = EXIT_DIVERGED
    return status


def cmd_report(args) -> int:
    try:
        rows, threshold = compare_report(args.metrics, baseline=args.baseline, threshold=args.threshold)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    print(report_table(rows, threshold), end="")
    if args.csv:
        Path(args.csv).write_text(report_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acodm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-corpus", help="write a synthetic multi-domain corpus file")
    g.add_argument("--config", help="JSON with corpus fields, or a full run config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_corpus)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (defaults to output_dir in the config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run several seeds/modes as independent processes")
    s.add_argument("--config")
    s.add_argument("--modes", nargs="+")
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep, mode=None, seed=None)

    rep = sub.add_parser("report", help="compare metric files by steps-to-threshold")
    rep.add_argument("metrics", nargs="+", help="metrics.csv files or run directories")
    rep.add_argument("--baseline", type=int, default=0, help="index of the reference run")
    rep.add_argument("--threshold", type=float)
    rep.add_argument("--csv", help="also write the report as CSV here")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
