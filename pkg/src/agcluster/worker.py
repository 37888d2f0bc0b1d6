"""Entry point for one worker process in socket deployment.

Launch contract: ``--rank``, ``--comm-sz`` and ``--endpoints host:port,...``
(or the ``AGC_RANK``, ``AGC_COMM_SZ``, ``AGC_ENDPOINTS`` environment
variables). Rank 0 is always the merge master. On success the worker
prints one JSON line with its timings and transfers; on failure it prints
``rank R failed in <phase>: <message>`` to stderr and exits with 3.
"""

from __future__ import annotations

import argparse
import os
import sys

from .merge import MergeStrategy
from .netmodel import SpecError, load_spec
from .parallel import WorkerConfig, WorkerError, child_report, run_worker
from .scenario import resolve_preset
from .transport import SocketTransport, parse_endpoints


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agcluster-worker", description=__doc__.splitlines()[0])
    ap.add_argument("--rank", type=int, default=_env_int("AGC_RANK"))
    ap.add_argument("--comm-sz", type=int, default=_env_int("AGC_COMM_SZ"))
    ap.add_argument("--endpoints", default=os.environ.get("AGC_ENDPOINTS"))
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec")
    src.add_argument("--preset")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--threshold", type=int)
    ap.add_argument("--strategy", default="sequential", choices=[s.value for s in MergeStrategy])
    ap.add_argument("--out-dir")
    ap.add_argument("--max-states", type=int)
    ap.add_argument("--timeout", type=float, default=300.0)
    return ap


def _env_int(name: str):
    v = os.environ.get(name)
    return int(v) if v is not None else None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    rank = args.rank if args.rank is not None else -1
    if args.rank is None or args.comm_sz is None or not args.endpoints:
        print(f"rank {rank} failed in startup: rank, comm size and endpoints are required", file=sys.stderr)
        return 2
    try:
        spec = load_spec(args.spec) if args.spec else resolve_preset(args.preset, args.seed).spec
        endpoints = parse_endpoints(args.endpoints)
        if len(endpoints) != args.comm_sz:
            raise ValueError(f"{len(endpoints)} endpoints for comm size {args.comm_sz}")
        config = WorkerConfig(args.comm_sz, args.threads, args.threshold, rank, "socket", args.strategy)
    except (SpecError, ValueError, OSError) as exc:
        print(f"rank {rank} failed in startup: {exc}", file=sys.stderr)
        return 2
    try:
        transport = SocketTransport(rank, endpoints, timeout=args.timeout)
    except OSError as exc:
        print(f"rank {rank} failed in startup: cannot listen on {endpoints[rank]}: {exc}", file=sys.stderr)
        return 3
    try:
        report = run_worker(spec, config, transport, args.out_dir, args.max_states)
    except WorkerError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    finally:
        transport.close()
    print(child_report(report, transport.log.transfers), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
