"""Command-line front end.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags; later sources win.

Exit codes: 0 success, 1 diagnostics found a bad processor or switch
pattern, 2 bad input (parse, capacity, missing file), 3 fault threshold
exceeded during training.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .engine import TrainRun, diagnostic_mode, open_epoch_log, train
from .machine import CapacityError, FaultPlan, Machine, MachineConfig, switch_selftest
from .patterns import XOR, PatternFileError, generate_patterns, read_patterns, write_patterns
from .perfmodel import (ASSUMPTIONS, MEASURED_MCPS, from_topology, optimal_procs, sweep,
                        write_sweep_csv)
from .reduction import register_patterns
from .topology import (TopologyError, capacity_check, layered, nettalk,
                       parse_topology, partition_bundles)

EXIT_DIAGNOSTIC = 1
EXIT_INPUT = 2
EXIT_FAULTS = 3

TOPOLOGY_PRESETS = {"nettalk": nettalk, "xor": lambda: layered(2, 2, 1)}
NETTALK_CASES = 12022

DEFAULTS = {
    "topology": "xor", "data": None, "procs": 1, "strategy": None, "bundle": 1024,
    "lr": 0.1, "momentum": 0.9, "epochs": 1, "seed": 0, "precision": "f64",
    "update": "epoch", "fault_plan": None, "out": None, "sigmoid": "exact",
    "clamp": 1.0e3, "group_size": None, "max_faults": None, "stop_error": None,
    "sram_words": 16384, "dram_words": 524288, "cases": None, "sweep": None,
    "inputs": None, "outputs": None, "count": None, "sequence_lengths": None,
}
INT_KEYS = {"procs", "bundle", "epochs", "seed", "group_size", "max_faults", "sram_words",
            "dram_words", "cases", "inputs", "outputs", "count"}
FLOAT_KEYS = {"lr", "momentum", "stop_error"}


class CliError(Exception):
    pass


def read_config(path) -> dict:
    conf = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise CliError(f"{path}:{n}: unknown key {key!r}")
        conf[key] = value
    return conf


def _coerce(key, value):
    if value is None or not isinstance(value, str):
        return value
    if value.lower() in ("none", ""):
        return None
    if key in INT_KEYS:
        return int(value)
    if key in FLOAT_KEYS:
        return float(value)
    if key == "clamp":
        return None if value.lower() in ("off", "false") else float(value)
    return value


def settings(args) -> dict:
    s = dict(DEFAULTS)
    if args.config:
        s.update(read_config(args.config))
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            s[k] = v
    try:
        return {k: _coerce(k, v) for k, v in s.items()}
    except ValueError as exc:
        raise CliError(f"bad setting: {exc}") from None


def load_topology(spec: str):
    if spec in TOPOLOGY_PRESETS:
        return TOPOLOGY_PRESETS[spec]()
    if spec.startswith("layers:"):
        return layered(*(int(v) for v in spec[len("layers:"):].split(",")))
    path = Path(spec)
    if not path.exists():
        raise CliError(f"topology file {spec} not found (presets: {', '.join(TOPOLOGY_PRESETS)})")
    return parse_topology(path.read_text())


def load_data(spec, t, seed: int):
    if spec is None or spec == "xor":
        if (t.n_inputs, t.n_outputs) != (2, 1):
            raise CliError("the xor data preset needs a 2-input, 1-output topology")
        return XOR
    if spec.startswith("random:"):
        return generate_patterns(t.n_inputs, t.n_outputs, int(spec.split(":", 1)[1]), seed)
    path = Path(spec)
    if not path.exists():
        raise CliError(f"pattern file {spec} not found")
    return read_patterns(path)


def machine_config(s, procs=None) -> MachineConfig:
    return MachineConfig(num_procs=procs or s["procs"], sram_words=s["sram_words"],
                         dram_words=s["dram_words"])


def make_run(s, t) -> TrainRun:
    plan = FaultPlan.read(s["fault_plan"]) if s["fault_plan"] else FaultPlan()
    return TrainRun(t, machine_config(s), strategy=s["strategy"] or "tree",
                    bundle_size=s["bundle"],
                    lr=s["lr"], momentum=s["momentum"], clamp_bound=s["clamp"],
                    sigmoid=s["sigmoid"], update=s["update"], seed=s["seed"],
                    epochs=s["epochs"], precision=s["precision"], group_size=s["group_size"],
                    fault_plan=plan)


def _out_dir(s) -> Path:
    out = Path(s["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands --------------------------------------------------------------

def cmd_compile(s, stdout) -> int:
    t = load_topology(s["topology"])
    cases = s["cases"] if s["cases"] is not None else 0
    mc = machine_config(s)
    per_proc = -(-cases // mc.num_procs)
    print(f"W={t.num_weights} W_i={t.num_input_weights} U={t.num_units}", file=stdout)
    for i, layer in enumerate(t.layers):
        print(f"layer {i} {layer.name} size={layer.size}", file=stdout)
    report = capacity_check(t, mc, s["bundle"], per_proc)
    bundles = partition_bundles(t, s["bundle"])
    print(f"bundles={len(bundles)} (B={s['bundle']})", file=stdout)
    for b in bundles:
        blk = t.weight_blocks[b.block]
        print(f"  bundle block={b.block} {t.layers[blk.src_layer].name}->"
              f"{t.layers[blk.dst_layer].name} src={b.src_start}:{b.src_stop} "
              f"dst={b.dst_start}:{b.dst_stop} weights={b.start}:{b.stop}", file=stdout)
    for line in report.lines():
        print(line, file=stdout)
    if not report.ok:
        raise CapacityError("capacity check failed")
    return 0


def cmd_gendata(s, stdout) -> int:
    if s["inputs"] is None or s["outputs"] is None:
        t = load_topology(s["topology"])
        n_in, n_out = t.n_inputs, t.n_outputs
    else:
        n_in, n_out = s["inputs"], s["outputs"]
    count = s["count"]
    if count is None:
        count = NETTALK_CASES if s["topology"] == "nettalk" else 0
    lengths = ([int(v) for v in s["sequence_lengths"].split(",")]
               if s["sequence_lengths"] else None)
    ps = generate_patterns(n_in, n_out, count, s["seed"], lengths)
    out = Path(s["out"] or "patterns.bpat")
    if out.suffix == "" or out.is_dir():
        out.mkdir(parents=True, exist_ok=True)
        out = out / "patterns.bpat"
    write_patterns(out, ps)
    print(f"wrote {count} patterns ({n_in} in / {n_out} out) to {out}", file=stdout)
    return 0


def cmd_train(s, stdout) -> int:
    t = load_topology(s["topology"])
    ps = load_data(s["data"], t, s["seed"])
    run = make_run(s, t)
    out = _out_dir(s)
    with open(out / "epochs.csv", "w", newline="") as fh:
        cluster, results = train(run, ps, log=open_epoch_log(fh), stop_error=s["stop_error"])
    np.save(out / "weights.npy", cluster.weights[0])
    faults = sum(r.faults for r in results)
    final = results[-1].error if results else float("nan")
    print(f"epochs={len(results)} final_error={final!r} faults={faults} "
          f"cycles_per_epoch={results[-1].report.total if results else 0}", file=stdout)
    if s["max_faults"] is not None and faults > s["max_faults"]:
        print(f"fault count {faults} exceeds threshold {s['max_faults']}", file=sys.stderr)
        return EXIT_FAULTS
    return 0


def cmd_model(s, stdout) -> int:
    t = load_topology(s["topology"] if s["topology"] != "xor" else "nettalk")
    cases = s["cases"] if s["cases"] is not None else NETTALK_CASES
    if s["sweep"]:
        lo, hi = (int(v) for v in s["sweep"].split(":"))
        procs = range(lo, hi + 1)
    else:
        procs = sorted(MEASURED_MCPS)
    strategies = ("ring", "tree") if s["strategy"] in (None, "both") else (s["strategy"],)
    x = from_topology(t, cases, 1, s["bundle"], machine_config(s, 1), update=s["update"])
    rows = sweep(x, procs, strategies)
    if s["out"]:
        path = Path(s["out"])
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            write_sweep_csv(rows, fh)
    else:
        write_sweep_csv(rows, stdout)
    print(f"# model assumes {ASSUMPTIONS}; measured_mcps holds reference measurements", file=sys.stderr)
    for strat in strategies:
        if strat in ("ring", "tree"):
            formula, best = optimal_procs(replace(x, strategy=strat))
            print(f"# optimal P ({strat}): closed form {formula:.1f}, brute-force argmin {best}",
                  file=sys.stderr)
    return 0


def cmd_diagnose(s, stdout) -> int:
    t = load_topology(s["topology"])
    ps = load_data(s["data"], t, s["seed"])
    run = make_run(s, t)
    machine = Machine(run.machine, run.fault_plan)
    sw = machine.switch
    register_patterns(run.strategy, sw)
    machine.set_epoch(0)
    ok = True
    for pid, passed in switch_selftest(sw, s["seed"]).items():
        print(f"switch {sw.pattern_name(pid)} {'ok' if passed else 'FAILED'}", file=stdout)
        ok &= passed
    if not ok:
        print("switch self-test failed; training not attempted", file=stdout)
        return EXIT_DIAGNOSTIC
    res = diagnostic_mode(run, ps, machine, epochs=max(s["epochs"], 1))
    print(f"approved {sorted(res.approved)}", file=stdout)
    if res.disapproved:
        print(f"disapproved {sorted(res.disapproved)}", file=stdout)
        return EXIT_DIAGNOSTIC
    return 0


COMMANDS = {"compile": cmd_compile, "gendata": cmd_gendata, "train": cmd_train,
            "model": cmd_model, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--topology", help="preset (nettalk, xor), layers:a,b,c, or file")
    common.add_argument("--data", help="xor, random:N, or a .bpat/.csv pattern file")
    common.add_argument("--procs", type=int)
    common.add_argument("--strategy", choices=("ring", "tree", "pipelined", "both"))
    common.add_argument("--bundle", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--momentum", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--precision", choices=("f32", "f64"))
    common.add_argument("--update", choices=("epoch", "group"))
    common.add_argument("--fault-plan", dest="fault_plan")
    common.add_argument("--out")
    common.add_argument("--sigmoid", choices=("exact", "lut", "base2"))
    common.add_argument("--clamp", help="clamp bound, or 'off'")
    common.add_argument("--group-size", dest="group_size", type=int)
    common.add_argument("--max-faults", dest="max_faults", type=int)
    common.add_argument("--stop-error", dest="stop_error", type=float)
    common.add_argument("--sram-words", dest="sram_words", type=int)
    common.add_argument("--dram-words", dest="dram_words", type=int)
    common.add_argument("--cases", type=int)
    common.add_argument("--sweep", help="P range lo:hi for the model command")
    common.add_argument("--inputs", type=int)
    common.add_argument("--outputs", type=int)
    common.add_argument("--count", type=int)
    common.add_argument("--sequence-lengths", dest="sequence_lengths")

    parser = argparse.ArgumentParser(prog="simdprop",
                                     description="Case-parallel backprop on a virtual SIMD machine")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        s = settings(args)
        return COMMANDS[args.command](s, stdout)
    except TopologyError as exc:
        print(f"topology error: {exc}", file=sys.stderr)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
    except (CliError, PatternFileError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
