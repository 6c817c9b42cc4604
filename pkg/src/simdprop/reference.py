"""Scalar pooled-update backpropagation, used as ground truth.

Everything here walks individual connections in plain loops.  The
accumulation orders are fixed and documented because the parallel engine is
checked against this module bit for bit:

* net input of unit d: incoming blocks in block order, sources ascending;
* back-propagated error of unit s: outgoing blocks in reverse block order,
  destinations ascending;
* weight changes: patterns in presentation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activation import get_sigmoid, sigmoid_deriv
from .patterns import Pattern
from .topology import Topology

DEFAULT_LR = 0.1
DEFAULT_MOMENTUM = 0.9


@dataclass
class NetworkState:
    weights: np.ndarray
    deltas: np.ndarray
    prev_deltas: np.ndarray
    activations: np.ndarray
    errors: np.ndarray

    @property
    def dtype(self):
        return self.weights.dtype

    def copy(self) -> "NetworkState":
        return NetworkState(*(a.copy() for a in (self.weights, self.deltas, self.prev_deltas,
                                                 self.activations, self.errors)))


def init_weights(t: Topology, seed: int = 0, dtype=np.float64) -> np.ndarray:
    """Uniform weights in [-0.5, 0.5]; the same seed gives the same network."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5, 0.5, t.num_weights).astype(dtype)


def init_state(t: Topology, seed: int = 0, dtype=np.float64, weights=None) -> NetworkState:
    w = init_weights(t, seed, dtype) if weights is None else np.array(weights, dtype=dtype)
    if w.shape != (t.num_weights,):
        raise ValueError(f"expected {t.num_weights} weights, got {w.shape}")
    acts = np.zeros(t.num_units, dtype)
    if t.has_true_unit:
        acts[t.true_unit] = 1
    return NetworkState(w, np.zeros_like(w), np.zeros_like(w), acts, np.zeros(t.num_units, dtype))


def _check(t: Topology, s: NetworkState, p: Pattern):
    if len(s.weights) != t.num_weights or len(s.activations) != t.num_units:
        raise ValueError("network state does not match topology")
    if len(p.input) != t.n_inputs or len(p.target) != t.n_outputs:
        raise ValueError(
            f"pattern has {len(p.input)}/{len(p.target)} values, topology wants "
            f"{t.n_inputs}/{t.n_outputs}")


def forward(t: Topology, s: NetworkState, p: Pattern, f=None) -> np.ndarray:
    """Present one pattern; returns the output-layer activations."""
    _check(t, s, p)
    dt = s.dtype.type
    f = f or get_sigmoid("exact", s.dtype)
    a, w = s.activations, s.weights
    if t.copy_pairs:
        prev = a.copy()
        flag = dt(p.continuation_flag)
        for frm, to in t.copy_pairs:
            a[to] = prev[frm] * flag
    for i, u in enumerate(t.layer_units(0)):
        a[u] = p.input[i]
    if t.has_true_unit:
        a[t.true_unit] = 1
    for layer in t.computed_layers:
        blocks = [b for b in t.weight_blocks if b.dst_layer == layer]
        for d in t.layer_units(layer):
            net = dt(0)
            for b in blocks:
                for src in range(b.src_start, b.src_stop):
                    net = net + w[b.index(src, d)] * a[src]
            a[d] = dt(f(net))
    return a[list(t.layer_units(t.output_layer))].copy()


def backward(t: Topology, s: NetworkState, p: Pattern):
    """Gradient of E_p = 1/2 sum (o - target)^2 for the pattern just presented.

    Adds the gradient into ``s.deltas`` and returns ``(gradient, E_p)``.
    """
    _check(t, s, p)
    dt = s.dtype.type
    a, w, err = s.activations, s.weights, s.errors
    err[:] = 0
    out = list(t.layer_units(t.output_layer))
    sumsq = dt(0)
    for i, d in enumerate(out):
        diff = a[d] - dt(p.target[i])
        sumsq = sumsq + diff * diff
        err[d] = diff * sigmoid_deriv(a[d])
    e_p = dt(0.5) * sumsq
    for layer in reversed(t.computed_layers):
        if layer == t.output_layer:
            continue
        outgoing = [b for b in reversed(t.weight_blocks) if b.src_layer == layer]
        for src in t.layer_units(layer):
            acc = dt(0)
            for b in outgoing:
                for d in range(b.dst_start, b.dst_stop):
                    acc = acc + w[b.index(src, d)] * err[d]
            err[src] = acc * sigmoid_deriv(a[src])
    grad = np.zeros_like(w)
    for b in t.weight_blocks:
        for src in range(b.src_start, b.src_stop):
            for d in range(b.dst_start, b.dst_stop):
                grad[b.index(src, d)] = err[d] * a[src]
    s.deltas += grad
    return grad, e_p


def pattern_error(t: Topology, s: NetworkState, p: Pattern, f=None):
    out = forward(t, s, p, f)
    diff = out - np.asarray(p.target, dtype=s.dtype)
    sumsq = s.dtype.type(0)
    for v in diff:
        sumsq = sumsq + v * v
    return s.dtype.type(0.5) * sumsq


def apply_update(s: NetworkState, lr: float, momentum: float) -> None:
    """w += -lr * sum_grad + momentum * prev_change; deltas are then cleared."""
    dt = s.dtype.type
    change = dt(-lr) * s.deltas + dt(momentum) * s.prev_deltas
    s.weights += change
    s.prev_deltas[:] = change
    s.deltas[:] = 0


def train_epoch_pooled(t: Topology, s: NetworkState, patterns, lr: float = DEFAULT_LR,
                       momentum: float = DEFAULT_MOMENTUM, f=None):
    """One epoch with a single pooled update; returns the summed pattern error."""
    if np.any(s.deltas):
        raise ValueError("weight changes must be zero at the start of an epoch")
    total = s.dtype.type(0)
    for p in patterns:
        if p.valid_flag == 0.0:
            continue
        forward(t, s, p, f)
        _, e_p = backward(t, s, p)
        total = total + e_p
    apply_update(s, lr, momentum)
    return total


def finite_diff_grad(t: Topology, s: NetworkState, p: Pattern, eps: float = 1e-5, f=None):
    """Central-difference dE_p/dw for every weight (64-bit)."""
    work = s.copy()
    work.weights = work.weights.astype(np.float64)
    work.activations = work.activations.astype(np.float64)
    work.errors = work.errors.astype(np.float64)
    work.deltas = work.deltas.astype(np.float64)
    work.prev_deltas = work.prev_deltas.astype(np.float64)
    saved = work.activations.copy()
    grad = np.zeros(t.num_weights)
    for k in range(t.num_weights):
        orig = work.weights[k]
        work.weights[k] = orig + eps
        work.activations[:] = saved
        up = pattern_error(t, work, p, f)
        work.weights[k] = orig - eps
        work.activations[:] = saved
        down = pattern_error(t, work, p, f)
        work.weights[k] = orig
        grad[k] = (up - down) / (2 * eps)
    return grad
