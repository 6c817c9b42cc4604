"""The virtual SIMD machine: configuration, cycle accounting, switch, faults.

This is a cost model plus capacity checker, not an instruction interpreter.
Weight loops are assumed to keep the 25-deep pipeline full, so every
floating point operation costs one cycle amortized.  DRAM transfers and
switch sends can each start only once every four cycles.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np


class CapacityError(RuntimeError):
    """A resident allocation would exceed a processor's memory."""


@dataclass(frozen=True)
class MachineConfig:
    num_procs: int = 1
    reg_words: int = 256
    sram_words: int = 16384
    dram_words: int = 524288
    clock_hz: float = 2.0e7
    fp_op: int = 1
    sram_access: int = 1
    dram_issue_interval: int = 4
    switch_issue_interval: int = 4
    pipeline_depth: int = 25
    table_reserve: int = 1024
    max_permutations: int = 1024

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.table_reserve >= self.sram_words:
            raise ValueError("table_reserve must leave some free SRAM")

    @property
    def free_sram(self) -> int:
        """M: SRAM words left after the sigmoid tables and constants."""
        return self.sram_words - self.table_reserve

    def cost(self, op_kind: str) -> int:
        try:
            return {"fp": self.fp_op, "sram": self.sram_access,
                    "dram": self.dram_issue_interval,
                    "switch": self.switch_issue_interval}[op_kind]
        except KeyError:
            raise ValueError(f"unknown op kind {op_kind!r}") from None


PHASES = ("forward", "backward", "dram_transfer", "switch_comm", "update")


@dataclass
class CycleReport:
    """Cycles per processor for one epoch, split by phase.

    ``unmodeled`` collects simulated work the closed-form model leaves out
    (the scalar error reduction and the tree's extra buddy round); it is
    reported but not part of ``total``.  Weight-update arithmetic overlaps
    with switch traffic, so ``update`` stays at zero under this cost model.
    """

    forward: int = 0
    backward: int = 0
    dram_transfer: int = 0
    switch_comm: int = 0
    update: int = 0
    unmodeled: int = 0

    @property
    def total(self) -> int:
        return sum(getattr(self, p) for p in PHASES)

    def seconds(self, clock_hz: float = 2.0e7) -> float:
        return self.total / clock_hz

    def phases(self) -> dict[str, int]:
        return {p: getattr(self, p) for p in PHASES}

    def __add__(self, other: "CycleReport") -> "CycleReport":
        return CycleReport(*(getattr(self, f.name) + getattr(other, f.name)
                             for f in fields(self)))


def account(report: CycleReport, phase: str, op_kind: str, count: int,
            config: MachineConfig | None = None) -> CycleReport:
    """Charge ``count`` operations of ``op_kind`` to ``phase``."""
    if phase not in PHASES and phase != "unmodeled":
        raise ValueError(f"unknown phase {phase!r}")
    cost = (config or MachineConfig()).cost(op_kind)
    setattr(report, phase, getattr(report, phase) + int(count) * cost)
    return report


# -- faults ----------------------------------------------------------------

FAULT_KINDS = ("corrupt_delta", "corrupt_weight", "corrupt_switch_value")


@dataclass(frozen=True)
class Fault:
    """One deterministic fault.

    ``epoch`` is 1-based for training epochs, 0 for the start-up self-test
    and negative for "every epoch".  ``index`` is the weight index for
    delta/weight faults and the switch pattern id for switch faults.
    """

    proc: int
    epoch: int
    kind: str
    magnitude: float
    index: int = 0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.proc < 0:
            raise ValueError("fault processor index must be >= 0")

    def active(self, epoch: int) -> bool:
        return self.epoch < 0 or self.epoch == epoch


@dataclass
class FaultPlan:
    faults: list[Fault] = field(default_factory=list)

    def validate(self, num_procs: int) -> None:
        for f in self.faults:
            if f.proc >= num_procs:
                raise ValueError(f"fault on processor {f.proc} but only {num_procs} exist")

    def active(self, epoch: int, kind: str) -> list[Fault]:
        return [f for f in self.faults if f.kind == kind and f.active(epoch)]

    @classmethod
    def read(cls, source) -> "FaultPlan":
        """CSV with columns proc,epoch,kind,magnitude[,index]."""
        text = source.getvalue() if isinstance(source, io.StringIO) else Path(source).read_text()
        rows = csv.DictReader(line for line in text.splitlines()
                              if line.strip() and not line.startswith("#"))
        return cls([Fault(int(r["proc"]), int(r["epoch"]), r["kind"].strip(),
                          float(r["magnitude"]), int(r.get("index") or 0)) for r in rows])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["proc", "epoch", "kind", "magnitude", "index"])
            for f in self.faults:
                w.writerow([f.proc, f.epoch, f.kind, repr(f.magnitude), f.index])


# -- switch ----------------------------------------------------------------

class Switch:
    """Ideal 1-to-1 permutation network over ``num_procs`` processors.

    Patterns are registered once and addressed by integer id.  Every
    exchange is synchronous: all processors send and receive in one step.
    """

    def __init__(self, num_procs: int, config: MachineConfig | None = None):
        if num_procs < 1:
            raise ValueError("need at least one processor")
        self.num_procs = num_procs
        self.config = config or MachineConfig(num_procs=num_procs)
        self.patterns: list[np.ndarray] = []
        self.names: dict[str, int] = {}
        self.exchanges = 0
        self.words = 0
        self.faults: list[Fault] = []
        self.epoch = 0

    def register(self, perm, name: str | None = None) -> int:
        perm = np.asarray(perm, dtype=np.intp)
        if perm.shape != (self.num_procs,) or not np.array_equal(np.sort(perm),
                                                                 np.arange(self.num_procs)):
            raise ValueError(f"pattern {name or ''} is not a bijection on {self.num_procs} processors")
        if len(self.patterns) >= self.config.max_permutations:
            raise CapacityError(f"switch holds at most {self.config.max_permutations} patterns")
        self.patterns.append(perm)
        pid = len(self.patterns) - 1
        if name is not None:
            self.names[name] = pid
        return pid

    def ensure(self, name: str, perm) -> int:
        """Id of pattern ``name``, registering it on first use."""
        if name in self.names:
            return self.names[name]
        return self.register(perm, name)

    def pattern_name(self, pid: int) -> str:
        for name, i in self.names.items():
            if i == pid:
                return name
        return f"#{pid}"

    def reset_counters(self) -> None:
        self.exchanges = 0
        self.words = 0


def switch_exchange(sw: Switch, pattern_id: int, values) -> np.ndarray:
    """Route ``values[p]`` to processor ``perm[p]``; one value (or vector) per processor."""
    if not 0 <= pattern_id < len(sw.patterns):
        raise KeyError(f"unknown switch pattern {pattern_id}")
    values = np.asarray(values)
    if values.shape[0] != sw.num_procs:
        raise ValueError(f"expected {sw.num_procs} rows, got {values.shape[0]}")
    perm = sw.patterns[pattern_id]
    out = np.empty_like(values)
    out[perm] = values
    for f in sw.faults:
        if f.index == pattern_id and f.active(sw.epoch):
            dst = perm[f.proc]
            if out.ndim == 1:
                out[dst] += f.magnitude
            else:
                out[dst].flat[0] += f.magnitude
    sw.exchanges += 1
    sw.words += int(np.prod(values.shape[1:], dtype=np.int64))
    return out


def switch_selftest(sw: Switch, seed: int = 0) -> dict[int, bool]:
    """Send distinct seeded values over every pattern and check where they land."""
    rng = np.random.default_rng(seed)
    results = {}
    for pid, perm in enumerate(sw.patterns):
        sent = rng.permutation(sw.num_procs).astype(np.float64) + rng.random()
        got = switch_exchange(sw, pid, sent)
        expected = np.empty_like(sent)
        expected[perm] = sent
        results[pid] = bool(np.array_equal(got, expected))
    return results


class Machine:
    """A configured machine: cost table, switch, and per-processor memory ledger."""

    def __init__(self, config: MachineConfig, fault_plan: FaultPlan | None = None):
        self.config = config
        self.switch = Switch(config.num_procs, config)
        self.fault_plan = fault_plan or FaultPlan()
        self.fault_plan.validate(config.num_procs)
        self.switch.faults = [f for f in self.fault_plan.faults
                              if f.kind == "corrupt_switch_value"]
        self.sram_used = 0
        self.dram_used = 0

    @property
    def num_procs(self) -> int:
        return self.config.num_procs

    def allocate(self, sram: int = 0, dram: int = 0) -> None:
        """Reserve words on every processor, refusing to overcommit."""
        if self.sram_used + sram + self.config.table_reserve > self.config.sram_words:
            raise CapacityError(
                f"SRAM overcommitted: {self.sram_used + sram} words requested, "
                f"{self.config.free_sram} free")
        if self.dram_used + dram > self.config.dram_words:
            raise CapacityError(
                f"DRAM overcommitted: {self.dram_used + dram} words requested, "
                f"{self.config.dram_words} available")
        self.sram_used += sram
        self.dram_used += dram

    def set_epoch(self, epoch: int) -> None:
        self.switch.epoch = epoch
