"""Command-line entry point for the benchmark harness.

Exit codes: 0 = all declared thresholds passed, 1 = a threshold failed,
2 = bad configuration.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .harness import AUDIT_LEVELS, SKETCH_POLICY, ConfigError, load_config, run_experiment


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="subgen-bench",
        description=(
            "Run seeded streaming-attention benchmarks: the sublinear sketch "
            "vs. exact attention and eviction baselines at matched memory."
        ),
    )
    p.add_argument("--config", required=True, help="TOML config file (see README for the schema)")
    p.add_argument(
        "--seed",
        type=int,
        action="append",
        help="run seed; repeat the flag for several (overrides [run] seeds)",
    )
    p.add_argument("--out", help="output directory (overrides [run] output_dir)")
    p.add_argument("--audit", choices=AUDIT_LEVELS, help="override [run] audit_level")
    p.add_argument(
        "--policy",
        action="append",
        help="baseline policy to compare; repeatable (overrides [run] policies)",
    )
    p.add_argument("--n", type=int, help="override stream length")
    p.add_argument("--epsilon", type=float, help="override accuracy target")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    overrides = {
        "seeds": args.seed,
        "output_dir": args.out,
        "audit_level": args.audit,
        "policies": args.policy,
        "n": args.n,
        "epsilon": args.epsilon,
    }
    try:
        cfg = load_config(args.config, overrides)
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    for name, stats in result.summary["policies"].items():
        tag = " (sketch)" if name == SKETCH_POLICY else ""
        print(
            f"{name}{tag}: p50={stats['p50']:.4g} p90={stats['p90']:.4g} "
            f"vectors={stats['final_vectors_stored_max']}"
        )
    for gate, info in result.summary["thresholds"].items():
        print(f"threshold {gate}: {'pass' if info['pass'] else 'FAIL'}")
    print(f"outputs: {result.paths['metrics']}, {result.paths['summary']}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
