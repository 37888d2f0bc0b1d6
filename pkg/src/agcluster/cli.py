"""``agcluster`` command line: generate, verify, export and profile attack graphs.

Exit codes: 0 success, 1 oracle mismatch, 2 invalid input or usage,
3 worker or transport failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .expand import CapacityError, generate_sequential
from .export import FORMATS, export_graph, memory_estimate, summary_line
from .graph import canonical_diff
from .merge import MergeError, MergeStrategy, merge_dumps, partial_path
from .netmodel import SpecError, load_spec, require_valid
from .parallel import WorkerConfig, WorkerError, run_parallel
from .scenario import UnsupportedScenarioError, predict_counts, resolve_preset
from .timing import PhaseProfile, emit_profile_report
from .transport import TransportError
from .wire import serialize_partial

log = logging.getLogger("agcluster")

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_WORKER = 0, 1, 2, 3


@dataclass
class RunManifest:
    spec_source: str
    config: dict
    strategy: str
    outputs: dict = field(default_factory=dict)
    seed: int = 0
    engine_version: str = __version__
    profile: Optional[dict] = None
    graph_size: dict = field(default_factory=dict)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agcluster", description="Parallel attack-graph generation.")
    sub = ap.add_subparsers(dest="command")
    g = sub.add_parser("generate", help="generate an attack graph")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="network spec JSON file")
    src.add_argument("--preset", help="fig1 | paper-150 | tree:<servers>x<ws>:<vuln-spec>[:<seed>]")
    g.add_argument("--seed", type=int, default=0, help="seed for fractional vulnerability assignment")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--threshold", type=int, help="phase-1 frontier threshold (default 64*workers*threads)")
    g.add_argument("--strategy", default="sequential", choices=[s.value for s in MergeStrategy])
    g.add_argument("--transport", default="memory", choices=["memory", "socket"])
    g.add_argument(
        "--deployment",
        choices=["threads", "processes"],
        help="threads: all workers in this process; processes: one process per worker (socket only). "
        "Default: processes for socket, threads for memory.",
    )
    g.add_argument("--sequential", action="store_true", help="use the single-threaded reference generator")
    g.add_argument("--export", choices=FORMATS)
    g.add_argument("--out", help="export destination (default stdout)")
    g.add_argument("--dump-dir", default=".", help="directory for partial-r<rank>.agpg with --strategy none")
    g.add_argument("--profile", help="write the phase-time report here")
    g.add_argument("--manifest", help="write a JSON run manifest here")
    g.add_argument("--predict-only", action="store_true", help="print closed-form counts (tree scenarios)")
    g.add_argument("--check-oracle", action="store_true", help="fail unless equal to the sequential generator")
    g.add_argument("--max-states", type=int)
    g.add_argument("--timeout", type=float, default=300.0)
    g.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command != "generate":
        ap.print_help()
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return cmd_generate(args)


def _load(args):
    if args.spec:
        return load_spec(args.spec), None, f"file:{args.spec}"
    preset = resolve_preset(args.preset, args.seed)
    return preset.spec, preset.params, f"preset:{args.preset}"


def cmd_generate(args) -> int:
    try:
        spec, params, source = _load(args)
        require_valid(spec)
    except SpecError as exc:
        print("invalid network spec:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    if args.predict_only:
        try:
            if params is None:
                raise UnsupportedScenarioError(f"{source} is not a tree scenario; no closed-form prediction")
            pred = predict_counts(params)
        except UnsupportedScenarioError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"predicted states: {pred.states:,}")
        print(f"predicted edges: {pred.edges:,}")
        return EXIT_OK

    strategy = MergeStrategy(args.strategy)
    deployment = args.deployment or ("processes" if args.transport == "socket" else "threads")
    try:
        config = WorkerConfig(args.workers, args.threads, args.threshold, 0, args.transport, strategy)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if deployment == "processes" and args.transport != "socket":
        print("error: process deployment requires --transport socket", file=sys.stderr)
        return EXIT_INPUT

    t0 = time.perf_counter()
    try:
        if args.sequential:
            graph = generate_sequential(spec, args.max_states)
            profile = PhaseProfile(phase1_total=time.perf_counter() - t0)
            profile.total_time = profile.phase1_total
            profile.states, profile.edges = graph.n_states, graph.n_edges
        else:
            spec_flags = ["--spec", args.spec] if args.spec else ["--preset", args.preset, "--seed", str(args.seed)]
            result = run_parallel(
                spec,
                config,
                deployment=deployment,
                spec_source=spec_flags,
                out_dir=args.dump_dir if strategy is MergeStrategy.NONE else None,
                max_states=args.max_states,
                timeout=args.timeout,
            )
            graph, profile = result.graph, result.profile
            if strategy is MergeStrategy.NONE:
                paths = [partial_path(args.dump_dir, r) for r in range(config.comm_sz)]
                print(f"wrote {len(paths)} partial dumps to {args.dump_dir}", file=sys.stderr)
                if args.check_oracle or args.export:
                    graph = merge_dumps(paths, spec, spec.checksum())
    except (WorkerError, TransportError, MergeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WORKER
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WORKER

    status = EXIT_OK
    # keep stdout clean when it carries the export itself
    info = sys.stderr if args.export and not args.out else sys.stdout
    if graph is not None:
        print(summary_line(graph), file=info)
    report = emit_profile_report(profile)
    info.write(report)
    if args.profile:
        Path(args.profile).write_text(report, encoding="utf-8")

    if args.check_oracle:
        ref = generate_sequential(spec)
        diff = canonical_diff(graph, ref)
        if diff is None:
            print("oracle check: ok", file=info)
        else:
            print(f"oracle check: MISMATCH ({diff})", file=sys.stderr)
            status = EXIT_MISMATCH

    outputs = {}
    if args.export:
        if args.out:
            export_graph(graph, args.export, args.out, spec)
            outputs[args.export] = args.out
        else:
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / "export"
                export_graph(graph, args.export, path, spec)
                sys.stdout.write(path.read_text(encoding="utf-8"))
    if args.profile:
        outputs["profile"] = args.profile
    if args.manifest:
        manifest = RunManifest(
            spec_source=source,
            config={k: (v.value if isinstance(v, MergeStrategy) else v) for k, v in dataclasses.asdict(config).items()}
            | {"deployment": deployment, "sequential": args.sequential},
            strategy=strategy.value,
            outputs=outputs,
            seed=args.seed,
            profile=profile.to_dict(),
        )
        if graph is not None:
            manifest.graph_size = {
                "serialized_bytes": len(serialize_partial(graph, 0)),
                "in_memory_bytes_estimate": memory_estimate(graph),
            }
        Path(args.manifest).write_text(json.dumps(dataclasses.asdict(manifest), indent=2), encoding="utf-8")
    return status


if __name__ == "__main__":
    sys.exit(main())
