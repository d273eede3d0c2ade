"""Run the shipped benchmark configs and write desk-scale versions of the two result tables.

Usage::

    python scripts/run_tables.py                      # all configs, default batch/repeats
    python scripts/run_tables.py --quick              # batch 32, 2 repeats
    python scripts/run_tables.py --configs configs/block_mlp.json --out results/

For each config this writes ``<stem>.json`` and ``<stem>.md`` to the output
directory and prints the markdown table.
"""

from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path

from dofprop.bench import BenchConfig, emit_report, run_bench

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--configs", nargs="*", type=Path, default=sorted((ROOT / "configs").glob("*.json")))
    p.add_argument("--out", type=Path, default=ROOT / "results")
    p.add_argument("--quick", action="store_true", help="batch 32 and 2 repeats")
    args = p.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.configs:
        cfg = BenchConfig.load(path)
        if args.quick:
            cfg = dataclasses.replace(cfg, batch=32, repeats=2)
        result = run_bench(cfg)
        (args.out / f"{path.stem}.json").write_text(emit_report(result, "json"))
        md = emit_report(result, "md")
        (args.out / f"{path.stem}.md").write_text(md)
        print(f"## {path.stem}\n\n{md}")
        for s in result.summaries:
            print(f"  {s.kind:22s} dof vs {s.baseline:8s} flops x{s.flop_ratio:.2f}  memory x{s.memory_ratio:.2f}  "
                  f"time x{s.time_ratio:.2f}")
        print()


if __name__ == "__main__":
    main()
