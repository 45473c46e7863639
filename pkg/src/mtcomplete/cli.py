"""Command-line entry point: ``mtcomplete {synth,mask,complete,eval}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from mtcomplete.experiment import MaskSpec, SynthSpec, generate_mask, rse, synth_coupled
from mtcomplete.fileio import (
    ConfigError,
    FileFormatError,
    RunConfig,
    atomic_write,
    read_mask,
    read_tensor,
    tensor_bytes,
    write_mask,
    write_tensor,
)
from mtcomplete.solver import SolveReport, ValidationError, solve

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3

log = logging.getLogger("mtcomplete")


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def format_report(report: SolveReport, lam: float, runtime: float) -> str:
    lines = [
        f"sweeps_run {report.sweeps_run}",
        f"converged {str(report.converged).lower()}",
        f"final_objective {_g17(report.final_objective)}",
        f"lambda {_g17(lam)}",
        f"runtime_seconds {runtime:.6f}",
        "objective_trace",
    ]
    lines += [f"{t + 1} {_g17(f)}" for t, f in enumerate(report.objective_trace)]
    return "\n".join(lines) + "\n"


def cmd_synth(args) -> int:
    path = Path(args.spec)
    doc = json.loads(path.read_text())
    try:
        outputs = [path.parent / p for p in doc.pop("outputs")]
        spec = SynthSpec(**doc)
    except KeyError:
        raise ConfigError("synth spec: missing required field 'outputs'")
    except TypeError as exc:
        raise ConfigError(f"synth spec: {exc}") from exc
    tensors = synth_coupled(spec)
    if len(outputs) != len(tensors):
        raise ConfigError(f"synth spec: {len(outputs)} outputs for {len(tensors)} tensors")
    for out, t in zip(outputs, tensors):
        write_tensor(out, t)
    return EXIT_OK


def cmd_mask(args) -> int:
    t = read_tensor(args.tensor)
    w = generate_mask(t.shape, MaskSpec(args.fraction, args.seed))
    write_mask(args.output, w)
    return EXIT_OK


def cmd_complete(args) -> int:
    cfg_file = RunConfig.load(args.config)
    cfg_file.check_lengths()
    xs = [read_tensor(p) for p in cfg_file.tensors]
    ws = [read_mask(p) for p in cfg_file.masks]
    data = list(zip(xs, ws))
    plan = cfg_file.plan_for([x.shape for x in xs])
    cfg = cfg_file.solver_config(data)

    start = time.perf_counter()
    state, report = solve(plan, data, cfg)
    runtime = time.perf_counter() - start
    log.info("finished %d sweeps in %.3fs, objective %.6g",
             report.sweeps_run, runtime, report.final_objective)

    # encode everything first so a failure cannot leave a partial set of outputs
    blobs = [(out, tensor_bytes(y)) for out, y in zip(cfg_file.outputs, state.Y)]
    blobs.append((cfg_file.report, format_report(report, cfg.lam, runtime).encode()))
    for out, blob in blobs:
        with atomic_write(out) as fh:
            fh.write(blob)
    return EXIT_OK


def cmd_eval(args) -> int:
    est = read_tensor(args.estimate)
    truth = read_tensor(args.truth)
    print(format(rse(est, truth), "#.6g"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtcomplete", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate coupled ground-truth tensors")
    s.add_argument("spec", help="JSON synth spec")
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("mask", help="sample an observation mask for a tensor")
    m.add_argument("tensor")
    m.add_argument("--fraction", type=float, required=True, help="missing fraction in [0, 1]")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_mask)

    c = sub.add_parser("complete", help="jointly complete tensors from a JSON run config")
    c.add_argument("config")
    c.set_defaults(func=cmd_complete)

    e = sub.add_parser("eval", help="print the relative error of an estimate")
    e.add_argument("estimate")
    e.add_argument("truth")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileFormatError, ConfigError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
