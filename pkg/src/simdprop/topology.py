"""Network topology: parsing, connection layout, bundles and capacity limits.

Units are numbered globally, layer-major, in declaration order.  When the
true unit is enabled it is appended to the input layer (so its global index
is ``layers[0].size``) and every later layer is shifted by one.

Weights are stored block by block; inside a block they are source-major,
``index = offset + (s - s0) * n_dst + (d - d0)``.  A bundle is therefore a
contiguous run of whole source rows, which keeps every destination's net
input inside one bundle pass.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter


class TopologyError(ValueError):
    """Invalid topology description."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column or 1}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Layer:
    name: str
    size: int


@dataclass(frozen=True)
class WeightBlock:
    """A fully connected run of weights between two unit ranges."""

    src_layer: int
    dst_layer: int
    src_start: int
    src_stop: int
    dst_start: int
    dst_stop: int
    offset: int
    is_input: bool  # source is the input layer; counts toward W_i

    @property
    def n_src(self) -> int:
        return self.src_stop - self.src_start

    @property
    def n_dst(self) -> int:
        return self.dst_stop - self.dst_start

    @property
    def size(self) -> int:
        return self.n_src * self.n_dst

    def index(self, s: int, d: int) -> int:
        return self.offset + (s - self.src_start) * self.n_dst + (d - self.dst_start)


@dataclass(frozen=True)
class Bundle:
    block: int
    src_start: int
    src_stop: int
    dst_start: int
    dst_stop: int
    start: int  # first weight index
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def n_src(self) -> int:
        return self.src_stop - self.src_start

    @property
    def n_dst(self) -> int:
        return self.dst_stop - self.dst_start

    def pairs(self) -> list[tuple[int, int]]:
        """(source, dest) unit pairs in storage order."""
        return [(s, d) for s in range(self.src_start, self.src_stop)
                for d in range(self.dst_start, self.dst_stop)]


@dataclass(frozen=True)
class Topology:
    layers: tuple[Layer, ...]
    blocks: tuple[tuple[int, int], ...]
    has_true_unit: bool = True
    copy_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        object.__setattr__(self, "copy_pairs", tuple(tuple(p) for p in self.copy_pairs))
        _validate(self)

    # -- unit layout ---------------------------------------------------

    @cached_property
    def layer_offsets(self) -> tuple[int, ...]:
        offsets, pos = [], 0
        for i, layer in enumerate(self.layers):
            offsets.append(pos)
            pos += layer.size
            if i == 0 and self.has_true_unit:
                pos += 1
        return tuple(offsets)

    def layer_units(self, layer: int) -> range:
        start = self.layer_offsets[layer]
        return range(start, start + self.layers[layer].size)

    @property
    def true_unit(self) -> int | None:
        return self.layers[0].size if self.has_true_unit else None

    @property
    def num_units(self) -> int:
        """U, including the true unit."""
        return sum(layer.size for layer in self.layers) + int(self.has_true_unit)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].size

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].size

    @property
    def output_layer(self) -> int:
        return len(self.layers) - 1

    @cached_property
    def computed_layers(self) -> tuple[int, ...]:
        """Layers whose activations come from incoming weights, in order."""
        return tuple(sorted({dst for _, dst in self.blocks}))

    @cached_property
    def context_layers(self) -> tuple[int, ...]:
        """Non-input layers with no incoming weights (filled by copy pairs)."""
        fed = set(self.computed_layers)
        return tuple(i for i in range(1, len(self.layers)) if i not in fed)

    def layer_of(self, unit: int) -> int:
        if self.has_true_unit and unit == self.true_unit:
            return 0
        for i in range(len(self.layers)):
            if unit in self.layer_units(i):
                return i
        raise IndexError(f"unit {unit} out of range")

    # -- weights -------------------------------------------------------

    @cached_property
    def weight_blocks(self) -> tuple[WeightBlock, ...]:
        """Compiled weight blocks ordered by (dest layer, source layer).

        The true unit joins an existing input->L block as its last source;
        layers fed only from elsewhere get a separate one-row bias block.
        """
        specs = []
        for src, dst in self.blocks:
            units = self.layer_units(src)
            stop = units.stop + (1 if src == 0 and self.has_true_unit else 0)
            specs.append((dst, src, units.start, stop, src == 0))
        if self.has_true_unit:
            from_input = {dst for src, dst in self.blocks if src == 0}
            for dst in self.computed_layers:
                if dst not in from_input:
                    tu = self.true_unit
                    specs.append((dst, 0, tu, tu + 1, False))
        # bias blocks sort with the input layer, after a real input block
        specs.sort(key=lambda s: (s[0], s[1], s[2] == self.true_unit))
        out, offset = [], 0
        for dst, src, s0, s1, is_input in specs:
            dst_units = self.layer_units(dst)
            blk = WeightBlock(src, dst, s0, s1, dst_units.start, dst_units.stop, offset, is_input)
            out.append(blk)
            offset += blk.size
        return tuple(out)

    @property
    def num_weights(self) -> int:
        return sum(b.size for b in self.weight_blocks)

    @property
    def num_input_weights(self) -> int:
        """W_i: weights whose source is the input layer (true unit included)."""
        return sum(b.size for b in self.weight_blocks if b.is_input)

    def connections(self) -> list[tuple[int, int, int]]:
        """All (weight index, source unit, dest unit) triples."""
        return [(b.index(s, d), s, d) for b in self.weight_blocks
                for s in range(b.src_start, b.src_stop)
                for d in range(b.dst_start, b.dst_stop)]

    @property
    def max_dst_size(self) -> int:
        return max((b.n_dst for b in self.weight_blocks), default=0)


def _validate(t: Topology) -> None:
    if not t.layers:
        raise TopologyError("no layers declared")
    names = [layer.name for layer in t.layers]
    if len(set(names)) != len(names):
        raise TopologyError("duplicate layer name")
    for layer in t.layers:
        if layer.size < 1:
            raise TopologyError(f"layer {layer.name!r} has size {layer.size} < 1")
    n = len(t.layers)
    if len(set(t.blocks)) != len(t.blocks):
        raise TopologyError("duplicate connection")
    graph: dict[int, set[int]] = {i: set() for i in range(n)}
    for src, dst in t.blocks:
        if not (0 <= src < n and 0 <= dst < n):
            raise TopologyError(f"connection ({src}, {dst}) names an unknown layer")
        graph[dst].add(src)
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise TopologyError(f"cycle detected among layers {exc.args[1]}") from None
    for src, dst in t.blocks:
        if src >= dst:
            raise TopologyError(
                f"connection {names[src]} -> {names[dst]} goes backwards; "
                "declare layers in feed-forward order")
    if 0 in {dst for _, dst in t.blocks}:
        raise TopologyError("the input layer cannot receive connections")
    if t.output_layer not in t.computed_layers:
        raise TopologyError("the last layer must receive connections")
    fed = set(t.computed_layers)
    total = t.num_units
    for frm, to in t.copy_pairs:
        if not (0 <= frm < total and 0 <= to < total):
            raise TopologyError(f"copy pair ({frm}, {to}) out of range")
        if t.has_true_unit and t.true_unit in (frm, to):
            raise TopologyError("copy pairs cannot involve the true unit")
        lf, lt = t.layer_of(frm), t.layer_of(to)
        if lf <= lt:
            raise TopologyError(
                f"copy pair ({frm}, {to}) must copy to a strictly earlier layer")
        if lt in fed:
            raise TopologyError(
                f"copy destination {to} is a computed unit; use an input or context layer")


# -- bundles ---------------------------------------------------------------

def partition_bundles(t: Topology, max_bundle: int) -> list[Bundle]:
    """Split each weight block into bundles of whole source rows."""
    bundles = []
    for bi, blk in enumerate(t.weight_blocks):
        rows = max_bundle // blk.n_dst
        if rows < 1:
            raise TopologyError(
                f"bundle size {max_bundle} cannot hold one row of {blk.n_dst} weights "
                f"(block {t.layers[blk.src_layer].name} -> {t.layers[blk.dst_layer].name})")
        for s0 in range(blk.src_start, blk.src_stop, rows):
            s1 = min(s0 + rows, blk.src_stop)
            start = blk.index(s0, blk.dst_start)
            bundles.append(Bundle(bi, s0, s1, blk.dst_start, blk.dst_stop,
                                  start, start + (s1 - s0) * blk.n_dst))
    return bundles


def backward_ordering(b: Bundle) -> list[int]:
    """Weight indices of ``b`` sorted by destination unit, then source unit.

    Consecutive touches of the same source unit end up ``n_dst`` apart,
    which keeps the per-source error accumulations out of each other's way.
    """
    return [b.start + (s - b.src_start) * b.n_dst + (d - b.dst_start)
            for d in range(b.dst_start, b.dst_stop)
            for s in range(b.src_start, b.src_stop)]


# -- capacity --------------------------------------------------------------

@dataclass(frozen=True)
class LimitEntry:
    name: str
    usage: int
    limit: int

    @property
    def margin(self) -> int:
        return self.limit - self.usage

    @property
    def ok(self) -> bool:
        return self.usage <= self.limit


@dataclass
class CapacityReport:
    entries: list[LimitEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def __getitem__(self, name: str) -> LimitEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [f"{e.name:<10} usage={e.usage} limit={e.limit} margin={e.margin} "
                f"{'ok' if e.ok else 'FAIL'}" for e in self.entries]


def pattern_words(t: Topology) -> int:
    """DRAM words per stored pattern: inputs, targets and the two flags."""
    return t.n_inputs + t.n_outputs + 2


def capacity_check(t: Topology, machine, max_bundle: int, cases_per_proc: int) -> CapacityReport:
    """Check DRAM, SRAM unit and bundle-row limits for one processor.

    ``machine`` is a MachineConfig.  DRAM holds the patterns plus weights,
    weight changes and previous weight changes (three words per weight).
    SRAM holds the tables, two bundle caches and two words per unit.
    """
    w = t.num_weights
    dram_usage = 3 * w + cases_per_proc * pattern_words(t)
    unit_limit = (machine.sram_words - machine.table_reserve - 2 * max_bundle) // 2
    return CapacityReport([
        LimitEntry("dram", dram_usage, machine.dram_words),
        LimitEntry("units", t.num_units, unit_limit),
        LimitEntry("bundle", t.max_dst_size, max_bundle),
    ])


# -- text format -----------------------------------------------------------

_NAME = r"[A-Za-z_][A-Za-z0-9_.-]*"
_UNIT_REF = re.compile(rf"^({_NAME})\[(\d+)\]$")
_NAME_RE = re.compile(rf"^{_NAME}$")


def _tokens(line: str):
    for m in re.finditer(r"\S+", line):
        yield m.group(0), m.start() + 1


def parse_topology(text: str) -> Topology:
    layers: list[Layer] = []
    index: dict[str, int] = {}
    blocks: list[tuple[int, int]] = []
    copies: list[tuple[tuple[str, int, int, int], tuple[str, int, int, int]]] = []
    true_unit = True

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = list(_tokens(line))
        if not toks:
            continue
        (word, col), args = toks[0], toks[1:]

        def need(n):
            if len(args) != n:
                where = args[n][1] if len(args) > n else len(line.rstrip()) + 1
                raise TopologyError(f"'{word}' takes {n} argument(s), got {len(args)}",
                                    lineno, where)

        def layer_ref(tok):
            name, c = tok
            if name not in index:
                raise TopologyError(f"unknown layer {name!r}", lineno, c)
            return index[name]

        if word == "layer":
            need(2)
            (name, c1), (size, c2) = args
            if not _NAME_RE.match(name):
                raise TopologyError(f"bad layer name {name!r}", lineno, c1)
            if name in index:
                raise TopologyError(f"layer {name!r} declared twice", lineno, c1)
            if not re.fullmatch(r"-?\d+", size):
                raise TopologyError(f"layer size must be an integer, got {size!r}", lineno, c2)
            if int(size) < 1:
                raise TopologyError(f"layer size must be >= 1, got {size}", lineno, c2)
            index[name] = len(layers)
            layers.append(Layer(name, int(size)))
        elif word == "connect":
            need(2)
            src, dst = layer_ref(args[0]), layer_ref(args[1])
            if (src, dst) in blocks:
                raise TopologyError("duplicate connection", lineno, args[0][1])
            if src == dst:
                raise TopologyError("cycle detected: layer connects to itself", lineno, args[0][1])
            blocks.append((src, dst))
        elif word == "true_unit":
            need(1)
            val, c = args[0]
            if val not in ("on", "off"):
                raise TopologyError(f"expected 'on' or 'off', got {val!r}", lineno, c)
            true_unit = val == "on"
        elif word == "copy":
            need(2)
            refs = []
            for tok, c in args:
                m = _UNIT_REF.match(tok)
                if not m:
                    raise TopologyError(f"expected <layer>[<index>], got {tok!r}", lineno, c)
                refs.append((m.group(1), int(m.group(2)), lineno, c))
            copies.append((refs[0], refs[1]))
        else:
            raise TopologyError(f"unknown directive {word!r}", lineno, col)

    if not layers:
        raise TopologyError("no layers declared")

    def resolve(ref, offsets):
        name, i, lineno, c = ref
        if name not in index:
            raise TopologyError(f"unknown layer {name!r}", lineno, c)
        li = index[name]
        if i >= layers[li].size:
            raise TopologyError(f"unit index {i} out of range for layer {name!r}", lineno, c)
        return offsets[li] + i

    offsets, pos = [], 0
    for i, layer in enumerate(layers):
        offsets.append(pos)
        pos += layer.size + (1 if i == 0 and true_unit else 0)
    pairs = []
    for a, b in copies:
        pairs.append((resolve(a, offsets), resolve(b, offsets)))
    return Topology(tuple(layers), tuple(blocks), true_unit, tuple(pairs))


def format_topology(t: Topology) -> str:
    lines = [f"layer {layer.name} {layer.size}" for layer in t.layers]
    lines.append(f"true_unit {'on' if t.has_true_unit else 'off'}")
    lines += [f"connect {t.layers[s].name} {t.layers[d].name}" for s, d in t.blocks]
    for frm, to in t.copy_pairs:
        refs = []
        for u in (frm, to):
            li = t.layer_of(u)
            refs.append(f"{t.layers[li].name}[{u - t.layer_offsets[li]}]")
        lines.append(f"copy {refs[0]} {refs[1]}")
    return "\n".join(lines) + "\n"


def layered(*sizes: int, true_unit: bool = True, names: list[str] | None = None) -> Topology:
    """A plain chain of fully connected layers."""
    names = names or [f"l{i}" for i in range(len(sizes))]
    return Topology(tuple(Layer(n, s) for n, s in zip(names, sizes)),
                    tuple((i, i + 1) for i in range(len(sizes) - 1)), true_unit)


NETTALK_TEXT = """\
# 203 input units plus the true unit, 60 hidden, 26 output
layer input 203
layer hidden 60
layer output 26
true_unit on
connect input hidden
connect hidden output
"""


def nettalk() -> Topology:
    return parse_topology(NETTALK_TEXT)
