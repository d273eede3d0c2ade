"""``bench run`` / ``bench verify`` command line."""

from __future__ import annotations

import argparse
import sys

from .bench import BenchConfig, ChecksumMismatch, emit_report, run_bench, verify_config


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Forward tuple method vs Hessian baseline")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="time and count every method on a config")
    run.add_argument("--config", required=True)
    run.add_argument("--format", choices=("json", "csv", "md"), default="json")
    run.add_argument("--out", default="-")
    run.add_argument("--sequential", action="store_true", help="ignore the worker-count environment variable")
    run.add_argument("--seed", type=int, default=None)
    ver = sub.add_parser("verify", help="check every method against finite differences")
    ver.add_argument("--config", required=True)
    ver.add_argument("--points", type=int, default=4)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = BenchConfig.load(args.config)
    except (OSError, ValueError, KeyError) as exc:
        print(f"bench: invalid config: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        if args.seed is not None:
            cfg.seed = args.seed
        if args.sequential:
            cfg.sequential = True
        try:
            result = run_bench(cfg)
        except ChecksumMismatch as exc:
            print(str(exc), file=sys.stderr)
            return 3
        text = emit_report(result, args.format)
        if args.out == "-":
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)
        return 0
    failures = 0
    for label, rep in verify_config(cfg, args.points):
        status = "ok" if rep.ok else "FAIL"
        failures += not rep.ok
        print(f"{status:4s} {label:24s} dof={rep.dof:.12g} hessian={rep.hessian:.12g} fd={rep.fd:.8g} "
              f"exact_err={rep.exact_err:.2e} fd_err={rep.fd_err:.2e}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
