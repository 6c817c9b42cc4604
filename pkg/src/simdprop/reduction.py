"""Weight-change summation across processors over the permutation switch.

All three all-reduce strategies leave bit-identical vectors on every
processor: each element is added up in a single order that does not
depend on which processor is looking at it.  Passing ``canonical=False``
to the ring or tree variants instead adds values in arrival order, as the
original hardware did; results may then differ in the last bits between
processors.

Cycle charges follow the closed-form model.  A vector of W values costs
``switch_issue_interval`` cycles per value per step:

* ring: W * P steps, counting the initial load of each processor's own value;
* tree: W * ceil(log2 P); the extra buddy round needed when P is not a
  power of two goes to the report's ``unmodeled`` bucket;
* pipelined ring: one value per step, 2 (P - 1) steps per chunk of P weights.
"""

from __future__ import annotations

import numpy as np

from .machine import CycleReport, Switch, account, switch_exchange

STRATEGIES = ("ring", "tree", "pipelined")


def ceil_log2(p: int) -> int:
    return (p - 1).bit_length()


def _as_matrix(vectors) -> tuple[np.ndarray, tuple]:
    x = np.array(vectors, copy=True)
    if x.ndim == 0:
        raise ValueError("need one vector per processor")
    shape = x.shape
    return x.reshape(shape[0], -1), shape


def _charge(report, sw: Switch, phase: str, words: int) -> None:
    if report is not None and words:
        account(report, phase, "switch", words, sw.config)


def _check(sw: Switch, x: np.ndarray) -> None:
    if x.shape[0] != sw.num_procs:
        raise ValueError(f"got {x.shape[0]} vectors for {sw.num_procs} processors")


def ring_allreduce(vectors, sw: Switch, report: CycleReport | None = None,
                   phase: str = "switch_comm", canonical: bool = True) -> np.ndarray:
    """Circulate every processor's values once around a ring, P - 1 exchanges."""
    x, shape = _as_matrix(vectors)
    _check(sw, x)
    p = x.shape[0]
    rid = sw.ensure(f"ring+1/{p}", [(q + 1) % p for q in range(p)])
    neighbor = x.copy()
    if canonical:
        # received[q, origin] lets every processor add in origin order
        received = np.empty((p, p, x.shape[1]), dtype=x.dtype)
        received[np.arange(p), np.arange(p)] = x
    else:
        total = np.zeros_like(x) + x
    for r in range(1, p):
        neighbor = switch_exchange(sw, rid, neighbor)
        if canonical:
            received[np.arange(p), (np.arange(p) - r) % p] = neighbor
        else:
            total = total + neighbor
    if canonical:
        total = np.zeros_like(x)
        for origin in range(p):
            total = total + received[:, origin]
    _charge(report, sw, phase, x.shape[1] * p)
    return total.reshape(shape)


def tree_allreduce(vectors, sw: Switch, report: CycleReport | None = None,
                   phase: str = "switch_comm", canonical: bool = True) -> np.ndarray:
    """Recursive doubling on the largest power-of-two block, with leftover buddies.

    Processors ``n >= 2**floor(log2 P)`` first hand their values to buddy
    ``n - 2**floor(log2 P)`` and get the finished total back at the end.
    """
    x, shape = _as_matrix(vectors)
    _check(sw, x)
    p = x.shape[0]
    low = 1 << (p.bit_length() - 1)
    rounds = 0
    if low != p:
        gid = sw.ensure(f"buddy-gather/{p}", [(q - low) % p for q in range(p)])
        recv = switch_exchange(sw, gid, x)
        rounds += 1
        nb = p - low
        x[:nb] = x[:nb] + recv[:nb]
    for i in range(low.bit_length() - 1):
        step = 1 << i
        if canonical:
            pid = sw.ensure(f"xor{step}/{p}", [q ^ step if q < low else q for q in range(p)])
            recv = switch_exchange(sw, pid, x)
            upper = (np.arange(low) & step) != 0
            own, other = x[:low], recv[:low]
            # both partners form lower-half + upper-half, so they agree exactly
            x[:low] = np.where(upper[:, None], other + own, own + other)
        else:
            pid = sw.ensure(f"cyc{step}/{p}", [(q + step) % low if q < low else q
                                               for q in range(p)])
            recv = switch_exchange(sw, pid, x)
            x[:low] = x[:low] + recv[:low]
        rounds += 1
    if low != p:
        sid = sw.ensure(f"buddy-scatter/{p}", [(q + low) % p for q in range(p)])
        recv = switch_exchange(sw, sid, x)
        rounds += 1
        x[low:] = recv[low:]
    modeled = ceil_log2(p)
    _charge(report, sw, phase, x.shape[1] * modeled)
    _charge(report, sw, "unmodeled", x.shape[1] * (rounds - modeled))
    return x.reshape(shape)


def pipelined_ring_allreduce(vectors, sw: Switch, report: CycleReport | None = None,
                             phase: str = "switch_comm") -> np.ndarray:
    """Reduce-scatter then all-gather around a ring, P weights at a time.

    On step i of a chunk, processor q receives the partial sum of slot
    (q + i + 1) mod P from processor q + 1 and adds its own value; after
    P - 1 steps it owns the total of slot q - 1, and P - 1 more steps
    circulate the totals.
    """
    x, shape = _as_matrix(vectors)
    _check(sw, x)
    p, w = x.shape
    nchunks = -(-w // p)
    padded = np.zeros((p, nchunks * p), dtype=x.dtype)
    padded[:, :w] = x
    chunks = padded.reshape(p, nchunks, p)
    out = np.empty_like(chunks)
    q = np.arange(p)
    sid = sw.ensure(f"ring-1/{p}", [(k - 1) % p for k in range(p)])
    for c in range(nchunks):
        own = chunks[:, c, :]
        partial = own[q, q]
        for i in range(p - 1):
            recv = switch_exchange(sw, sid, partial)
            partial = recv + own[q, (q + i + 1) % p]
        total = out[:, c, :]
        total[q, (q - 1) % p] = partial
        cur = partial
        for i in range(p - 1):
            cur = switch_exchange(sw, sid, cur)
            total[q, (q + i) % p] = cur
    _charge(report, sw, phase, 2 * (p - 1) * nchunks)
    return out.reshape(p, -1)[:, :w].reshape(shape)


def allreduce(strategy: str, vectors, sw: Switch, report: CycleReport | None = None,
              phase: str = "switch_comm") -> np.ndarray:
    if strategy == "ring":
        return ring_allreduce(vectors, sw, report, phase)
    if strategy == "tree":
        return tree_allreduce(vectors, sw, report, phase)
    if strategy == "pipelined":
        return pipelined_ring_allreduce(vectors, sw, report, phase)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def exchange_rounds(strategy: str, p: int, w: int = 1) -> int:
    """Number of switch exchanges a strategy performs for P processors and W weights."""
    if strategy == "ring":
        return p - 1
    if strategy == "tree":
        low = 1 << (p.bit_length() - 1)
        return ceil_log2(p) if low == p else (low.bit_length() - 1) + 2
    if strategy == "pipelined":
        return 2 * (p - 1) * -(-w // p)
    raise ValueError(f"unknown strategy {strategy!r}")


def register_patterns(strategy: str, sw: Switch) -> list[int]:
    """Register every switch pattern ``strategy`` uses on ``sw``; returns their ids."""
    scratch = Switch(sw.num_procs, sw.config)
    allreduce(strategy, np.zeros((sw.num_procs, 1)), scratch)
    by_id = sorted(scratch.names.items(), key=lambda kv: kv[1])
    return [sw.ensure(name, scratch.patterns[pid]) for name, pid in by_id]


def intra_tree_sum(x, return_depth: bool = False):
    """Sum an array by pairwise halving so the dependency chain is log2(n) deep."""
    x = np.asarray(x)
    n = len(x)
    if n < 1:
        raise ValueError("need at least one value")
    size = 1 << (n - 1).bit_length()
    buf = np.zeros(size, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    buf[:n] = x
    depth = np.zeros(size, dtype=np.intp)
    for i in range((size - 1).bit_length()):
        step = 1 << i
        j = np.arange(0, size, 2 * step)
        buf[j] = buf[j] + buf[j + step]
        depth[j] = np.maximum(depth[j], depth[j + step]) + 1
    total = buf[0]
    return (total, int(depth[0])) if return_depth else total
