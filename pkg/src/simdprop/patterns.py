"""Training patterns, pattern files, and synthetic data generation.

Binary pattern files are little-endian: a 16-byte header
(``b"BPAT"``, uint32 version, uint32 n_inputs, uint32 n_outputs) followed by
one float32 record per pattern: inputs, targets, continuation flag, valid flag.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"BPAT"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class PatternFileError(ValueError):
    pass


@dataclass
class Pattern:
    input: np.ndarray
    target: np.ndarray
    continuation_flag: float = 0.0
    valid_flag: float = 1.0

    def __post_init__(self):
        for flag in (self.continuation_flag, self.valid_flag):
            if flag not in (0.0, 1.0):
                raise ValueError(f"pattern flags must be 0.0 or 1.0, got {flag}")


@dataclass
class PatternSet:
    """Patterns stored as parallel arrays (one row per pattern)."""

    inputs: np.ndarray
    targets: np.ndarray
    continuation: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        n = len(self.inputs)
        if not (len(self.targets) == len(self.continuation) == len(self.valid) == n):
            raise ValueError("pattern arrays have mismatched lengths")
        for flags in (self.continuation, self.valid):
            if not np.isin(flags, (0.0, 1.0)).all():
                raise ValueError("pattern flags must be 0.0 or 1.0")

    def __len__(self) -> int:
        return len(self.inputs)

    def __getitem__(self, i: int) -> Pattern:
        return Pattern(self.inputs[i], self.targets[i],
                       float(self.continuation[i]), float(self.valid[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.targets.shape[1]

    @property
    def num_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    @classmethod
    def from_arrays(cls, inputs, targets, continuation=None, valid=None, dtype=np.float64):
        inputs = np.asarray(inputs, dtype=dtype).reshape(len(inputs), -1)
        targets = np.asarray(targets, dtype=dtype).reshape(len(targets), -1)
        n = len(inputs)
        cont = np.zeros(n, dtype) if continuation is None else np.asarray(continuation, dtype)
        val = np.ones(n, dtype) if valid is None else np.asarray(valid, dtype)
        return cls(inputs, targets, cont, val)

    @classmethod
    def from_patterns(cls, patterns, dtype=np.float64) -> "PatternSet":
        patterns = list(patterns)
        return cls.from_arrays([p.input for p in patterns], [p.target for p in patterns],
                               [p.continuation_flag for p in patterns],
                               [p.valid_flag for p in patterns], dtype)

    @classmethod
    def empty(cls, n_inputs: int, n_outputs: int, dtype=np.float64) -> "PatternSet":
        return cls(np.zeros((0, n_inputs), dtype), np.zeros((0, n_outputs), dtype),
                   np.zeros(0, dtype), np.zeros(0, dtype))

    @classmethod
    def padding(cls, count: int, n_inputs: int, n_outputs: int, dtype=np.float64) -> "PatternSet":
        """``count`` all-zero patterns flagged invalid."""
        return cls(np.zeros((count, n_inputs), dtype), np.zeros((count, n_outputs), dtype),
                   np.zeros(count, dtype), np.zeros(count, dtype))

    def astype(self, dtype) -> "PatternSet":
        return PatternSet(*(a.astype(dtype) for a in
                            (self.inputs, self.targets, self.continuation, self.valid)))

    def take(self, idx) -> "PatternSet":
        idx = np.asarray(idx, dtype=np.intp)
        return PatternSet(self.inputs[idx], self.targets[idx],
                          self.continuation[idx], self.valid[idx])

    @staticmethod
    def concat(sets) -> "PatternSet":
        sets = list(sets)
        return PatternSet(*(np.concatenate([getattr(s, f) for s in sets])
                            for f in ("inputs", "targets", "continuation", "valid")))

    def sequences(self) -> list["PatternSet"]:
        """Split at every pattern whose continuation flag is 0."""
        starts = [i for i in range(len(self)) if self.continuation[i] == 0.0]
        if len(self) and (not starts or starts[0] != 0):
            raise ValueError("first pattern must start a sequence (continuation 0.0)")
        bounds = starts + [len(self)]
        return [self.take(range(a, b)) for a, b in zip(bounds, bounds[1:])]


# -- files -----------------------------------------------------------------

def write_patterns(path, ps: PatternSet) -> None:
    record = np.concatenate([ps.inputs, ps.targets, ps.continuation[:, None], ps.valid[:, None]],
                            axis=1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ps.n_inputs, ps.n_outputs))
        fh.write(record.tobytes())


def read_patterns(path, dtype=np.float64) -> PatternSet:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_patterns_csv(path, dtype)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise PatternFileError(f"{path}: truncated header")
    magic, version, n_in, n_out = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise PatternFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise PatternFileError(f"{path}: unsupported version {version}")
    width = n_in + n_out + 2
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size % width:
        raise PatternFileError(f"{path}: body is not a whole number of records")
    rec = body.reshape(-1, width).astype(dtype)
    return PatternSet(rec[:, :n_in], rec[:, n_in:n_in + n_out],
                      rec[:, -2].copy(), rec[:, -1].copy())


def read_patterns_csv(source, dtype=np.float64) -> PatternSet:
    """CSV with header columns ``x0..``, ``y0..`` and optional ``cont``, ``valid``."""
    text = Path(source).read_text() if not isinstance(source, io.StringIO) else source.getvalue()
    rows = [r for r in csv.reader(line for line in text.splitlines()
                                  if line.strip() and not line.lstrip().startswith("#"))]
    if not rows:
        raise PatternFileError("empty CSV pattern file")
    header = [h.strip() for h in rows[0]]
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    ys = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xs or not ys:
        raise PatternFileError("CSV header needs x* and y* columns")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    data = data.reshape(len(rows) - 1, len(header))
    col = {h: i for i, h in enumerate(header)}
    n = len(data)
    cont = data[:, col["cont"]] if "cont" in col else np.zeros(n)
    valid = data[:, col["valid"]] if "valid" in col else np.ones(n)
    return PatternSet.from_arrays(data[:, xs], data[:, ys], cont, valid, dtype)


def generate_patterns(n_inputs: int, n_outputs: int, count: int, seed: int = 0,
                      sequence_lengths: list[int] | None = None) -> PatternSet:
    """Seeded uniform inputs in [0, 1] with binary targets.

    With ``sequence_lengths`` the patterns are cut into sequences of those
    lengths (cycled until ``count`` is reached) and flagged accordingly.
    """
    rng = np.random.default_rng(seed)
    inputs = rng.random((count, n_inputs), dtype=np.float32)
    targets = rng.integers(0, 2, size=(count, n_outputs)).astype(np.float32)
    cont = np.zeros(count, np.float32)
    if sequence_lengths:
        if any(n < 1 for n in sequence_lengths):
            raise ValueError("sequence lengths must be >= 1")
        pos, k = 0, 0
        while pos < count:
            n = sequence_lengths[k % len(sequence_lengths)]
            cont[pos + 1:pos + n] = 1.0
            pos += n
            k += 1
    return PatternSet(inputs, targets, cont, np.ones(count, np.float32))


XOR = PatternSet.from_arrays([[0, 0], [0, 1], [1, 0], [1, 1]], [[0], [1], [1], [0]])
