"""Case-parallel pooled-update training on the virtual SIMD machine.

Every processor holds the whole network and a shard of the training
patterns.  All processors execute the same instruction stream, so the
simulation keeps per-processor arrays stacked along a leading axis of
length P and advances them in lockstep.

Inside an epoch each shard is processed in groups of ``g`` cases.  For a
group, every weight bundle is brought from DRAM into SRAM once on the way
forward and once on the way back, and used for all ``g`` cases while it is
resident.  The arithmetic is arranged so that each value is accumulated in
exactly the order the scalar reference uses; blocking therefore changes the
cycle count and nothing else.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .activation import SIGMOID_VARIANTS, get_sigmoid, sigmoid_deriv
from .machine import CapacityError, CycleReport, FaultPlan, Machine, MachineConfig, account
from .patterns import Pattern, PatternSet
from .reduction import STRATEGIES, allreduce, register_patterns
from .reference import DEFAULT_LR, DEFAULT_MOMENTUM, NetworkState, init_weights
from .topology import Topology, partition_bundles, pattern_words

PRECISIONS = {"f32": np.float32, "f64": np.float64}
UPDATE_MODES = ("epoch", "group")


@dataclass
class TrainRun:
    topology: Topology
    machine: MachineConfig = field(default_factory=MachineConfig)
    strategy: str = "tree"
    bundle_size: int = 1024
    lr: float = DEFAULT_LR
    momentum: float = DEFAULT_MOMENTUM
    clamp_bound: float | None = 1.0e3
    sigmoid: str = "exact"
    update: str = "epoch"
    seed: int = 0
    epochs: int = 1
    precision: str = "f64"
    group_size: int | None = None
    fault_plan: FaultPlan = field(default_factory=FaultPlan)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.update not in UPDATE_MODES:
            raise ValueError(f"update must be one of {UPDATE_MODES}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.sigmoid not in SIGMOID_VARIANTS:
            raise ValueError(f"unknown sigmoid variant {self.sigmoid!r}")
        if self.clamp_bound is not None and not self.clamp_bound > 0:
            raise ValueError("clamp_bound must be positive (or None to disable clamping)")
        if self.bundle_size < 1 or self.epochs < 0:
            raise ValueError("bundle_size must be >= 1 and epochs >= 0")

    @property
    def dtype(self):
        return np.dtype(PRECISIONS[self.precision])

    @property
    def max_group_size(self) -> int:
        """Cases whose activations and errors fit beside two bundle caches."""
        m = self.machine.free_sram
        return (m - 2 * self.bundle_size) // (2 * self.topology.num_units)

    @property
    def group_size_effective(self) -> int:
        g_max = self.max_group_size
        if g_max < 1:
            raise CapacityError(
                f"group size {g_max} < 1: {self.topology.num_units} units and bundle "
                f"{self.bundle_size} do not fit in {self.machine.free_sram} free SRAM words")
        if self.group_size is not None:
            if not 1 <= self.group_size <= g_max:
                raise CapacityError(f"group size {self.group_size} outside 1..{g_max}")
            g = self.group_size
        else:
            g = g_max
        # copied activations must come from the case just finished
        return 1 if self.topology.copy_pairs else g

    def with_procs(self, num_procs: int) -> "TrainRun":
        return replace(self, machine=replace(self.machine, num_procs=num_procs))


@dataclass
class ProcShard:
    index: int
    patterns: PatternSet
    state: NetworkState | None = None
    fault_count: int = 0

    def __len__(self) -> int:
        return len(self.patterns)


def _as_set(patterns) -> PatternSet:
    return patterns if isinstance(patterns, PatternSet) else PatternSet.from_patterns(patterns)


def _pad(ps: PatternSet, length: int) -> PatternSet:
    if len(ps) == length:
        return ps
    pad = PatternSet.padding(length - len(ps), ps.n_inputs, ps.n_outputs, ps.inputs.dtype)
    return PatternSet.concat([ps, pad])


def distribute_cases(patterns, num_procs: int) -> list[ProcShard]:
    """Deal patterns round-robin; pad every shard to ceil(C / P) with invalid patterns."""
    if num_procs < 1:
        raise ValueError("need at least one processor")
    ps = _as_set(patterns)
    length = -(-len(ps) // num_procs)
    return [ProcShard(p, _pad(ps.take(range(p, len(ps), num_procs)), length))
            for p in range(num_procs)]


def distribute_sequences(sequences, num_procs: int) -> list[ProcShard]:
    """Place whole sequences, longest first, on the least-loaded processor."""
    if num_procs < 1:
        raise ValueError("need at least one processor")
    seqs = [_as_set(s) for s in sequences]
    if not seqs:
        raise ValueError("no sequences to distribute")
    for i, s in enumerate(seqs):
        if len(s) == 0:
            raise ValueError(f"sequence {i} is empty")
        if s.continuation[0] != 0.0 or np.any(s.continuation[1:] != 1.0):
            raise ValueError(
                f"sequence {i} must start with continuation 0.0 and continue with 1.0")
    order = sorted(range(len(seqs)), key=lambda i: (-len(seqs[i]), i))
    owned: list[list[int]] = [[] for _ in range(num_procs)]
    load = [0] * num_procs
    for i in order:
        p = min(range(num_procs), key=lambda q: (load[q], q))
        owned[p].append(i)
        load[p] += len(seqs[i])
    length = max(load)
    n_in, n_out = seqs[0].n_inputs, seqs[0].n_outputs
    dtype = seqs[0].inputs.dtype
    shards = []
    for p in range(num_procs):
        # balancing picks the processor; presentation keeps the input order
        parts = [seqs[i] for i in sorted(owned[p])] or [PatternSet.empty(n_in, n_out, dtype)]
        shards.append(ProcShard(p, _pad(PatternSet.concat(parts), length)))
    return shards


def clamp_deltas(deltas, bound: float):
    """Zero entries that are non-finite or larger than ``bound`` in magnitude.

    Works on one vector or a stack of them; counts are per vector.
    """
    if not bound > 0:
        raise ValueError("bound must be positive")
    d = np.asarray(deltas)
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(d) | (np.abs(d) > bound)
    out = np.where(bad, d.dtype.type(0), d)
    count = bad.sum(axis=-1)
    return out, (int(count) if np.ndim(count) == 0 else count)


def copy_activations(t: Topology, activations, pattern: Pattern | float):
    """Elman copy step: ``a[to] = a[from] * continuation`` for every copy pair."""
    a = np.array(activations, copy=True)
    flag = pattern.continuation_flag if isinstance(pattern, Pattern) else float(pattern)
    prev = a.copy()
    for frm, to in t.copy_pairs:
        a[..., to] = prev[..., frm] * a.dtype.type(flag)
    return a


@dataclass
class EpochResult:
    error: float
    report: CycleReport
    faults: int
    proc_errors: np.ndarray


class Cluster:
    """P processors with stacked weights, weight changes and shards."""

    def __init__(self, run: TrainRun, shards: list[ProcShard], machine: Machine | None = None):
        t = run.topology
        p = len(shards)
        if p < 1:
            raise ValueError("need at least one shard")
        if len({len(s) for s in shards}) != 1:
            raise ValueError("all shards must have the same length")
        if run.machine.num_procs != p:
            run = run.with_procs(p)
        self.run = run
        self.topology = t
        self.machine = machine or Machine(run.machine, run.fault_plan)
        if self.machine.num_procs != p:
            raise ValueError(f"machine has {self.machine.num_procs} processors, got {p} shards")
        self.shards = shards
        self.num_procs = p
        self.dtype = run.dtype
        self.g = run.group_size_effective
        self.bundles = partition_bundles(t, run.bundle_size)
        self.length = len(shards[0])
        for s in shards:
            if s.patterns.n_inputs != t.n_inputs or s.patterns.n_outputs != t.n_outputs:
                raise ValueError("pattern dimensions do not match the topology")
        self.machine.allocate(
            sram=2 * run.bundle_size + 2 * t.num_units * self.g,
            dram=3 * t.num_weights + self.length * pattern_words(t))
        register_patterns(run.strategy, self.machine.switch)

        dt = self.dtype
        w0 = init_weights(t, run.seed, dt)
        self.weights = np.tile(w0, (p, 1))
        self.deltas = np.zeros_like(self.weights)
        self.prev_deltas = np.zeros_like(self.weights)
        self.activations = np.zeros((p, t.num_units), dt)
        if t.has_true_unit:
            self.activations[:, t.true_unit] = 1
        self.errors = np.zeros((p, t.num_units), dt)
        for k, s in enumerate(shards):
            s.state = NetworkState(self.weights[k], self.deltas[k], self.prev_deltas[k],
                                   self.activations[k], self.errors[k])
        self.inputs = np.stack([s.patterns.inputs for s in shards]).astype(dt)
        self.targets = np.stack([s.patterns.targets for s in shards]).astype(dt)
        self.continuation = np.stack([s.patterns.continuation for s in shards]).astype(dt)
        self.valid = np.stack([s.patterns.valid for s in shards]).astype(dt)
        self.f = get_sigmoid(run.sigmoid, dt)
        self.epoch = 0
        self.last_deltas = None  # reduced (and clamped) weight changes of the last update

    # -- bookkeeping ------------------------------------------------------

    @property
    def num_groups(self) -> int:
        return -(-self.length // self.g)

    @property
    def num_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    def uniform(self) -> bool:
        """True when every processor's weights are bit-identical to processor 0's."""
        w = self.weights.view(np.uint8).reshape(self.num_procs, -1)
        return bool((w == w[0]).all())

    def _charge(self, report, phase, kind, count):
        account(report, phase, kind, count, self.run.machine)

    # -- one group of cases -----------------------------------------------

    def _finalize_layer(self, act, net, layer):
        units = self.topology.layer_units(layer)
        sl = slice(units.start, units.stop)
        act[..., sl] = self.f(net[..., sl])

    def _forward(self, cases: slice, report: CycleReport):
        t = self.topology
        dt = self.dtype
        n = cases.stop - cases.start
        act = np.zeros((self.num_procs, n, t.num_units), dt)
        net = np.zeros_like(act)
        if t.copy_pairs:
            # g == 1: the previous case of this processor is in self.activations
            cont = self.continuation[:, cases.start]
            for frm, to in t.copy_pairs:
                act[:, 0, to] = self.activations[:, frm] * cont
        inp = t.layer_units(0)
        act[..., inp.start:inp.stop] = self.inputs[:, cases]
        if t.has_true_unit:
            act[..., t.true_unit] = 1
        blocks = t.weight_blocks
        current = None
        for b in self.bundles:
            blk = blocks[b.block]
            if blk.dst_layer != current:
                if current is not None:
                    self._finalize_layer(act, net, current)
                current = blk.dst_layer
            self._charge(report, "dram_transfer", "dram", b.size)
            wb = self.weights[:, b.start:b.stop].reshape(self.num_procs, b.n_src, b.n_dst)
            acc = net[..., b.dst_start:b.dst_stop]
            for k, s in enumerate(range(b.src_start, b.src_stop)):
                acc += act[:, :, s, None] * wb[:, None, k, :]
            self._charge(report, "forward", "fp", 2 * b.size * n)
        if current is not None:
            self._finalize_layer(act, net, current)
        return act

    def _backward(self, cases: slice, act, report: CycleReport):
        t = self.topology
        dt = self.dtype
        n = cases.stop - cases.start
        out = t.layer_units(t.output_layer)
        o = act[..., out.start:out.stop]
        diff = o - self.targets[:, cases]
        valid = self.valid[:, cases]
        sumsq = np.zeros(diff.shape[:2], dt)
        for j in range(diff.shape[2]):
            sumsq = sumsq + diff[..., j] * diff[..., j]
        e = dt.type(0.5) * sumsq * valid
        err = np.zeros_like(act)
        err[..., out.start:out.stop] = diff * sigmoid_deriv(o) * valid[..., None]
        errsum = np.zeros_like(act)
        done = {t.output_layer}
        blocks = t.weight_blocks
        for b in reversed(self.bundles):
            blk = blocks[b.block]
            if blk.dst_layer not in done:
                u = t.layer_units(blk.dst_layer)
                err[..., u.start:u.stop] = errsum[..., u.start:u.stop] * sigmoid_deriv(
                    act[..., u.start:u.stop])
                done.add(blk.dst_layer)
            # weight changes always; the weights too unless errors stop here
            self._charge(report, "dram_transfer", "dram", b.size * (1 if blk.is_input else 2))
            wb = self.weights[:, b.start:b.stop].reshape(self.num_procs, b.n_src, b.n_dst)
            ed = err[..., b.dst_start:b.dst_stop]
            if not blk.is_input:
                acc = errsum[..., b.src_start:b.src_stop]
                for k in range(b.n_dst):
                    acc += wb[:, None, :, k] * ed[:, :, k, None]
            db = self.deltas[:, b.start:b.stop].reshape(self.num_procs, b.n_src, b.n_dst)
            src = act[..., b.src_start:b.src_stop]
            for c in range(n):
                db += src[:, c, :, None] * ed[:, c, None, :]
            self._charge(report, "backward", "fp", (2 if blk.is_input else 4) * b.size * n)
            self._charge(report, "dram_transfer", "dram", b.size)
        return e

    def _group(self, cases: slice, report: CycleReport, proc_errors):
        act = self._forward(cases, report)
        e = self._backward(cases, act, report)
        for c in range(e.shape[1]):
            proc_errors = proc_errors + e[:, c]
        self.activations[:] = act[:, -1]
        return proc_errors

    # -- reduction and update ---------------------------------------------

    def _inject(self, kind: str, target: np.ndarray) -> None:
        for f in self.machine.fault_plan.active(self.epoch, kind):
            target[f.proc, f.index] += target.dtype.type(f.magnitude)

    def _reduce_update(self, report: CycleReport, communicate: bool, first: bool) -> np.ndarray:
        if first:
            self._inject("corrupt_delta", self.deltas)
        if communicate:
            total = allreduce(self.run.strategy, self.deltas, self.machine.switch, report)
        else:
            total = self.deltas.copy()
        if self.run.clamp_bound is not None:
            total, counts = clamp_deltas(total, self.run.clamp_bound)
        else:
            counts = np.zeros(self.num_procs, dtype=np.int64)
        self.last_deltas = total
        dt = self.dtype.type
        change = dt(-self.run.lr) * total + dt(self.run.momentum) * self.prev_deltas
        self.weights += change
        self.prev_deltas[:] = change
        self.deltas[:] = 0
        return counts

    def train_epoch(self, communicate: bool = True) -> EpochResult:
        """Run one epoch; ``communicate=False`` lets every processor update on its own."""
        self.epoch += 1
        self.machine.set_epoch(self.epoch)
        if np.any(self.deltas):
            raise RuntimeError("weight changes must be zero at the start of an epoch")
        self._inject("corrupt_weight", self.weights)
        report = CycleReport()
        proc_errors = np.zeros(self.num_procs, self.dtype)
        faults = np.zeros(self.num_procs, dtype=np.int64)
        first = True
        for g0 in range(0, self.length, self.g):
            proc_errors = self._group(slice(g0, min(g0 + self.g, self.length)),
                                      report, proc_errors)
            if self.run.update == "group":
                faults += self._reduce_update(report, communicate, first)
                first = False
        if self.run.update == "epoch" or self.length == 0:
            faults += self._reduce_update(report, communicate, first)
        if communicate:
            totals = allreduce(self.run.strategy, proc_errors, self.machine.switch,
                               report, phase="unmodeled")
            error = float(totals[0])
        else:
            error = float(proc_errors[0])
        for s, k in zip(self.shards, faults):
            s.fault_count += int(k)
        return EpochResult(error, report, int(faults.max()), proc_errors)


def train_epoch_parallel(cluster: Cluster) -> EpochResult:
    return cluster.train_epoch()


def make_cluster(run: TrainRun, patterns, machine: Machine | None = None) -> Cluster:
    """Shard ``patterns`` (by sequence for recurrent topologies) and build a cluster."""
    ps = _as_set(patterns)
    p = run.machine.num_procs
    if run.topology.copy_pairs and len(ps):
        shards = distribute_sequences(ps.sequences(), p)
    else:
        shards = distribute_cases(ps, p)
    return Cluster(run, shards, machine)


def train(run: TrainRun, patterns, machine: Machine | None = None, log=None,
          stop_error: float | None = None) -> tuple[Cluster, list[EpochResult]]:
    """Train for ``run.epochs`` epochs, optionally stopping once error < ``stop_error``."""
    cluster = make_cluster(run, patterns, machine)
    results = []
    for _ in range(run.epochs):
        res = cluster.train_epoch()
        results.append(res)
        if log is not None:
            log.writerow([cluster.epoch, repr(res.error), res.faults, res.report.total])
        if stop_error is not None and res.error < stop_error:
            break
    return cluster, results


LOG_HEADER = ("epoch", "total_error", "fault_count", "cycles")


def open_epoch_log(fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LOG_HEADER)
    return w


@dataclass
class DiagnosticResult:
    approved: set[int]
    errors: np.ndarray

    @property
    def disapproved(self) -> set[int]:
        return set(range(len(self.errors))) - self.approved


def diagnostic_mode(run: TrainRun, patterns, machine: Machine | None = None,
                    epochs: int = 1) -> DiagnosticResult:
    """Train every processor alone on the same data and approve the plurality error.

    Errors are compared bit for bit.  Among equally common values the one
    produced by processor 0 wins, otherwise the one seen first.
    """
    ps = _as_set(patterns)
    p = (machine.num_procs if machine is not None else run.machine.num_procs)
    cluster = Cluster(run.with_procs(p), [ProcShard(k, ps) for k in range(p)], machine)
    res = None
    for _ in range(max(epochs, 1)):
        res = cluster.train_epoch(communicate=False)
    keys = [e.tobytes() for e in res.proc_errors]
    counts = Counter(keys)
    best = max(counts.values())
    tied = [k for k in dict.fromkeys(keys) if counts[k] == best]
    winner = keys[0] if keys[0] in tied else tied[0]
    return DiagnosticResult({k for k, key in enumerate(keys) if key == winner},
                            res.proc_errors.copy())
