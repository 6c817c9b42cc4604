"""Closed-form cycle model for one training epoch.

With ``c = ceil(C / P)`` cases per processor, group size
``g = floor((M - 2B) / (2U))`` and ``G = ceil(c / g)`` groups:

    forward    2 W c
    backward   (2 W_i + 4 (W - W_i)) c
    transfers  (12 W + 4 (W - W_i)) G
    comm       tree 4 W ceil(log2 P), ring 4 W P,
               pipelined ring 8 (P - 1) ceil(W / P)

Comm is paid once per update, so per-group updating multiplies it by G.
The model assumes at least 12 units per layer (full pipelines) and leaves
out host and controller overhead, which is why it sits above measurement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

from .machine import CycleReport, MachineConfig
from .topology import Topology

ASSUMPTIONS = ">= 12 units per layer; host/controller overhead and pattern I/O not modeled"

# Measured MCPS on NETTALK (processors -> (tree, ring)); reference measurements, not model output.
MEASURED_MCPS: dict[int, tuple[int, int | None]] = {
    8: (26, 26),
    16: (55, 53),
    32: (112, 107),
    64: (216, 170),
    128: (415, 222),
    256: (753, 180),
    356: (901, None),
    512: (1231, 84),
}

SWEEP_COLUMNS = ("P", "strategy", "B", "forward", "backward", "transfer", "comm",
                 "total_cycles", "seconds", "mcps", "megaflops", "measured_mcps", "ratio")


@dataclass(frozen=True)
class PerfInputs:
    W: int
    W_i: int
    B: int
    C: int
    U: int
    M: int
    P: int
    strategy: str = "tree"
    update: str = "epoch"
    group_size: int | None = None
    clock_hz: float = 2.0e7
    dram_interval: int = 4
    switch_interval: int = 4

    def __post_init__(self):
        if not 0 <= self.W_i <= self.W:
            raise ValueError("need 0 <= W_i <= W")
        if self.M <= 2 * self.B:
            raise ValueError("need M > 2B")
        if self.P < 1 or self.C < 0 or self.U < 1:
            raise ValueError("need P >= 1, C >= 0, U >= 1")
        if self.strategy not in ("ring", "tree", "pipelined"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.update not in ("epoch", "group"):
            raise ValueError(f"unknown update granularity {self.update!r}")

    @property
    def cases_per_proc(self) -> int:
        return -(-self.C // self.P)

    @property
    def group_size_effective(self) -> int:
        g = self.group_size if self.group_size is not None else (self.M - 2 * self.B) // (2 * self.U)
        if g < 1:
            raise ValueError(f"group size {g} < 1")
        return g

    @property
    def groups(self) -> int:
        return -(-self.cases_per_proc // self.group_size_effective)


NETTALK_INPUTS = PerfInputs(W=13826, W_i=12240, B=1024, C=12022, U=290, M=15360, P=356)


def from_topology(t: Topology, cases: int, procs: int, bundle: int = 1024,
                  machine: MachineConfig | None = None, **kw) -> PerfInputs:
    m = machine or MachineConfig()
    if t.copy_pairs:
        kw.setdefault("group_size", 1)
    return PerfInputs(W=t.num_weights, W_i=t.num_input_weights, B=bundle, C=cases,
                      U=t.num_units, M=m.free_sram, P=procs, clock_hz=m.clock_hz,
                      dram_interval=m.dram_issue_interval,
                      switch_interval=m.switch_issue_interval, **kw)


def comm_per_update(strategy: str, p: int, w: int, interval: int = 4) -> int:
    if strategy == "tree":
        return interval * w * math.ceil(math.log2(p)) if p > 1 else 0
    if strategy == "ring":
        return interval * w * p
    if strategy == "pipelined":
        return interval * 2 * (p - 1) * math.ceil(w / p)
    raise ValueError(f"unknown strategy {strategy!r}")


def cycles_per_epoch(x: PerfInputs) -> CycleReport:
    w, wi = x.W, x.W_i
    c, big_g = x.cases_per_proc, x.groups
    updates = big_g if x.update == "group" and big_g > 0 else 1
    return CycleReport(
        forward=2 * w * c,
        backward=(2 * wi + 4 * (w - wi)) * c,
        dram_transfer=x.dram_interval * (3 * w + (w - wi)) * big_g,
        switch_comm=comm_per_update(x.strategy, x.P, w, x.switch_interval) * updates,
        update=0,
    )


def mcps(x: PerfInputs, report: CycleReport | None = None, valid_cases: int | None = None) -> float:
    """Connections (true-unit ones included) times patterns, per microsecond."""
    report = report or cycles_per_epoch(x)
    if report.total <= 0:
        raise ValueError("epoch time must be positive")
    cases = x.C if valid_cases is None else valid_cases
    return x.W * cases / (report.total / x.clock_hz) / 1e6


def megaflops_factor(w: int, w_i: int) -> float:
    if w <= 0:
        raise ValueError("W must be positive")
    return 4 + 2 * (w - w_i) / w


def megaflops(mcps_value: float, w: int, w_i: int) -> float:
    return mcps_value * megaflops_factor(w, w_i)


def optimal_procs_formula(x: PerfInputs) -> float:
    w, wi = x.W, x.W_i
    q = x.C / (4 * w) * ((6 * w - 2 * wi) + 2 * x.U / (x.M - 2 * x.B) * (16 * w - 4 * wi))
    if x.strategy == "ring":
        return math.sqrt(q)
    if x.strategy == "tree":
        return q
    raise ValueError("the closed form exists for ring and tree only")


def optimal_procs(x: PerfInputs, p_max: int = 4096) -> tuple[float, int]:
    """(closed-form approximation, brute-force argmin of T over 1..p_max)."""
    formula = optimal_procs_formula(x)
    best = min(range(1, p_max + 1), key=lambda p: (cycles_per_epoch(replace(x, P=p)).total, p))
    return formula, best


def bounds_estimates(x: PerfInputs = NETTALK_INPUTS, procs: int = 512) -> tuple[float, float]:
    """(MCPS updating after every case per processor, MCPS with free comm and transfers)."""
    per_case = replace(x, P=procs, update="group", group_size=1, strategy="tree")
    a = mcps(per_case)
    compute = replace(x, P=procs)
    r = cycles_per_epoch(compute)
    r.dram_transfer = 0
    r.switch_comm = 0
    b = mcps(compute, r)
    return a, b


def sweep(x: PerfInputs, procs, strategies=("ring", "tree")) -> list[dict]:
    rows = []
    for s in strategies:
        for p in procs:
            xi = replace(x, P=p, strategy=s)
            r = cycles_per_epoch(xi)
            m = mcps(xi, r)
            measured = MEASURED_MCPS.get(p, (None, None))[0 if s == "tree" else 1] \
                if s in ("tree", "ring") else None
            rows.append({
                "P": p, "strategy": s, "B": x.B, "forward": r.forward, "backward": r.backward,
                "transfer": r.dram_transfer, "comm": r.switch_comm, "total_cycles": r.total,
                "seconds": r.seconds(x.clock_hz), "mcps": m,
                "megaflops": megaflops(m, x.W, x.W_i),
                "measured_mcps": measured, "ratio": None if measured is None else m / measured,
            })
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_sweep_csv(rows, fh) -> None:
    """Header-first CSV; ``measured_mcps`` holds the measured reference figures."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
