"""Encoders and the constantly-shifted inner-product similarity (C-SIPS).

The expected link weight between two nodes is

    mu(x_i, x_j) = exp(<f_{d_i}(x_i), f_{d_j}(x_j)> - gamma[d_i, d_j])

where ``f_d`` is the encoder of view ``d`` (a linear map or a one-hidden-layer
tanh network) and ``gamma`` holds one offset per unordered view pair,
including same-view pairs.  All parameters live in one flat vector ``theta``;
a layout table maps named blocks to slices of it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError

__all__ = [
    "EncoderSpec",
    "Layout",
    "ModelParams",
    "init_params",
    "zero_params",
    "encode",
    "mu",
    "mu_and_logmu_grad",
    "pair_log_mu",
    "embed_nodes",
    "save_checkpoint",
    "load_checkpoint",
    "CLAMP",
]

# bound applied to inner products inside loss evaluation
CLAMP = 50.0

CHECKPOINT_FORMAT = "betage-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "mlp1"):
            raise ValidationError(f"unknown encoder kind {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValidationError("encoder dimensions must be positive")
        if self.kind == "mlp1" and (self.hidden_dim is None or self.hidden_dim < 1):
            raise ValidationError("mlp1 encoder needs hidden_dim >= 1")
        if self.kind == "linear" and self.hidden_dim is not None:
            object.__setattr__(self, "hidden_dim", None)

    def block_shapes(self):
        p, k, h = self.input_dim, self.output_dim, self.hidden_dim
        if self.kind == "linear":
            return [("W", (k, p))]
        return [("W1", (h, p)), ("b1", (h,)), ("W2", (k, h)), ("b2", (k,))]

    def to_dict(self):
        return {"kind": self.kind, "input_dim": self.input_dim,
                "output_dim": self.output_dim, "hidden_dim": self.hidden_dim}


class Layout:
    """Shape table mapping block names to slices of the flat parameter vector.

    Encoder blocks are named ``"enc{d}.{W|W1|b1|W2|b2}"`` and offsets
    ``"gamma{d}_{e}"`` for ``d <= e`` (0-based views).
    """

    def __init__(self, specs):
        specs = tuple(specs)
        if not specs:
            raise ValidationError("at least one encoder spec is required")
        k = {s.output_dim for s in specs}
        if len(k) != 1:
            raise ValidationError(f"all views must share the output dimension, got {sorted(k)}")
        self.specs = specs
        self.entries = {}
        off = 0
        for d, spec in enumerate(specs):
            for name, shape in spec.block_shapes():
                size = int(np.prod(shape))
                self.entries[f"enc{d}.{name}"] = (off, shape)
                off += size
        self.psi_size = off
        nv = len(specs)
        self.gamma_index = np.zeros((nv, nv), dtype=np.int64)
        for d in range(nv):
            for e in range(d, nv):
                self.entries[f"gamma{d}_{e}"] = (off, ())
                self.gamma_index[d, e] = self.gamma_index[e, d] = off
                off += 1
        self.size = off
        self._flat = [(name, o, int(np.prod(shape)), shape)
                      for name, (o, shape) in self.entries.items()]
        self.gamma_positions = np.arange(self.psi_size, self.size)

    @property
    def n_views(self):
        return len(self.specs)

    def slice(self, name):
        off, shape = self.entries[name]
        return slice(off, off + int(np.prod(shape)))

    def unpack(self, theta):
        """Named views into ``theta`` (no copies)."""
        return {name: theta[off:off + size].reshape(shape)
                for name, off, size, shape in self._flat}

    def pack(self, blocks):
        theta = np.zeros(self.size)
        for name, (off, shape) in self.entries.items():
            arr = np.asarray(blocks[name], dtype=float)
            if arr.shape != shape:
                raise ValidationError(f"block {name} has shape {arr.shape}, expected {shape}")
            theta[off:off + arr.size] = arr.ravel()
        return theta

    def view_blocks(self, blocks, d):
        return {name: blocks[f"enc{d}.{name}"] for name, _ in self.specs[d].block_shapes()}

    def psi_mask(self):
        m = np.zeros(self.size, dtype=bool)
        m[:self.psi_size] = True
        return m

    def to_list(self):
        return [{"name": name, "offset": off, "shape": list(shape)}
                for name, (off, shape) in self.entries.items()]


class ModelParams:
    """Immutable snapshot of a flat parameter vector plus its layout."""

    def __init__(self, specs, theta, layout=None):
        if isinstance(specs, EncoderSpec):
            specs = (specs,)
        self.layout = layout if layout is not None else Layout(specs)
        theta = np.array(theta, dtype=float)
        if theta.shape != (self.layout.size,):
            raise ValidationError(f"theta has length {theta.size}, layout needs {self.layout.size}")
        if not np.all(np.isfinite(theta)):
            raise NumericError("parameter vector has non-finite entries")
        theta.setflags(write=False)
        self.theta = theta

    @property
    def specs(self):
        return self.layout.specs

    @property
    def size(self):
        return self.layout.size

    def blocks(self):
        return self.layout.unpack(self.theta)

    def block(self, name):
        return self.blocks()[name]

    def gamma(self, d=0, e=0):
        return float(self.theta[self.layout.gamma_index[d, e]])

    def with_theta(self, theta):
        return ModelParams(self.specs, theta, self.layout)

    def __repr__(self):
        kinds = ",".join(s.kind for s in self.specs)
        return f"ModelParams({kinds}, size={self.size})"


def _as_specs(specs):
    return (specs,) if isinstance(specs, EncoderSpec) else tuple(specs)


def init_params(specs, rng):
    """Glorot-uniform encoder weights, zero biases and zero offsets."""
    layout = Layout(_as_specs(specs))
    theta = np.zeros(layout.size)
    for spec_d, spec in enumerate(layout.specs):
        for name, shape in spec.block_shapes():
            if len(shape) == 2:
                s = math.sqrt(6.0 / (shape[0] + shape[1]))
                theta[layout.slice(f"enc{spec_d}.{name}")] = rng.uniform(-s, s, size=shape).ravel()
    return ModelParams(layout.specs, theta, layout)


def zero_params(specs):
    layout = Layout(_as_specs(specs))
    return ModelParams(layout.specs, np.zeros(layout.size), layout)


# -- encoder forward / backward on row batches --------------------------------

def _forward(spec, blk, X):
    if spec.kind == "linear":
        return X @ blk["W"].T, None
    A1 = np.tanh(X @ blk["W1"].T + blk["b1"])
    Y = np.tanh(A1 @ blk["W2"].T + blk["b2"])
    return Y, A1


def _backward(spec, blk, X, Y, A1, dY):
    if spec.kind == "linear":
        return {"W": dY.T @ X}
    dZ2 = dY * (1.0 - Y * Y)
    dA1 = dZ2 @ blk["W2"]
    dZ1 = dA1 * (1.0 - A1 * A1)
    return {"W1": dZ1.T @ X, "b1": dZ1.sum(axis=0), "W2": dZ2.T @ A1, "b2": dZ2.sum(axis=0)}


def _check_x(params, x, view):
    if not 0 <= view < params.layout.n_views:
        raise ValidationError(f"view {view} out of range")
    x = np.asarray(x, dtype=float).ravel()
    p = params.specs[view].input_dim
    if x.size != p:
        raise ValidationError(f"view {view} expects dimension {p}, got {x.size}")
    return x


def encode(params, x, view=0):
    """Feature vector f_view(x) for one data vector."""
    x = _check_x(params, x, view)
    blk = params.layout.view_blocks(params.blocks(), view)
    y, _ = _forward(params.specs[view], blk, x[None, :])
    return y[0]


def _inner_and_offset(params, xi, xj, di, dj):
    yi, yj = encode(params, xi, di), encode(params, xj, dj)
    inner = float(np.dot(yi, yj))
    return inner, params.gamma(di, dj)


def _exp_checked(inner, gamma):
    with np.errstate(over="ignore"):
        val = float(np.exp(inner - gamma))
    if not math.isfinite(val):
        raise NumericError(f"mu overflowed at inner product {inner!r}", inner=inner, gamma=gamma)
    return val


def mu(params, x_i, x_j, d_i=0, d_j=0):
    """C-SIPS expected weight; never clamped."""
    inner, gamma = _inner_and_offset(params, x_i, x_j, d_i, d_j)
    return _exp_checked(inner, gamma)


def mu_and_logmu_grad(params, x_i, x_j, d_i=0, d_j=0):
    """Return ``mu`` and the gradient of ``log mu`` with respect to theta."""
    xi, xj = _check_x(params, x_i, d_i), _check_x(params, x_j, d_j)
    layout = params.layout
    blocks = params.blocks()
    grad = np.zeros(layout.size)
    gviews = layout.unpack(grad)
    towers = []
    for x, d in ((xi, d_i), (xj, d_j)):
        blk = layout.view_blocks(blocks, d)
        y, a1 = _forward(params.specs[d], blk, x[None, :])
        towers.append((x[None, :], d, blk, y, a1))
    yi, yj = towers[0][3], towers[1][3]
    inner = float(np.dot(yi[0], yj[0]))
    value = _exp_checked(inner, params.gamma(d_i, d_j))
    for (x, d, blk, y, a1), dy in zip(towers, (yj, yi)):
        for name, g in _backward(params.specs[d], blk, x, y, a1, dy).items():
            gviews[f"enc{d}.{name}"] += g
    grad[layout.gamma_index[d_i, d_j]] = -1.0
    return value, grad


# -- vectorised pair evaluation used by the losses ------------------------------

def embed_nodes(params, d, nodes=None):
    """Feature vectors for ``nodes`` (default: all nodes), one row each."""
    if nodes is None:
        nodes = np.arange(d.n)
    Y, _ = _embed(params, d, np.asarray(nodes, dtype=np.int64))
    return Y


def _embed(params, d, nodes):
    layout = params.layout
    if d.n_views != layout.n_views:
        raise ValidationError(f"dataset has {d.n_views} views, model has {layout.n_views}")
    for v, spec in enumerate(layout.specs):
        if d.dims[v] != spec.input_dim:
            raise ValidationError(f"view {v} has dimension {d.dims[v]}, encoder expects {spec.input_dim}")
    blocks = params.blocks()
    K = layout.specs[0].output_dim
    Y = np.empty((nodes.size, K))
    cache = []
    node_views = d.views[nodes]
    for v, spec in enumerate(layout.specs):
        sel = np.flatnonzero(node_views == v)
        if sel.size == 0:
            continue
        X = d.blocks[v][d.rows[nodes[sel]]]
        blk = layout.view_blocks(blocks, v)
        Yv, A1 = _forward(spec, blk, X)
        Y[sel] = Yv
        cache.append((v, sel, X, Yv, A1, blk))
    return Y, cache


def pair_log_mu(params, d, i, j, clamp=True):
    """Evaluate ``log mu`` on pair arrays and return a gradient closure.

    Returns ``(s, clamp_events, vjp)`` where ``s[k] = log mu(x_i[k], x_j[k])``
    and ``vjp(c)`` returns ``sum_k c[k] * d s[k] / d theta`` as a flat vector.
    With ``clamp`` the inner products are clipped to ``[-CLAMP, CLAMP]`` and
    clipped pairs contribute no encoder gradient.
    """
    i = np.asarray(i, dtype=np.int64).ravel()
    j = np.asarray(j, dtype=np.int64).ravel()
    m = i.size
    layout = params.layout
    if 2 * m >= d.n:
        # dense regime: embedding every node is cheaper than deduplicating
        nodes, ii, jj = np.arange(d.n), i, j
    else:
        nodes, inv = np.unique(np.concatenate([i, j]), return_inverse=True)
        ii, jj = inv[:m], inv[m:]
    Y, cache = _embed(params, d, nodes)
    Yi, Yj = Y[ii], Y[jj]
    inner = np.einsum("ij,ij->i", Yi, Yj)
    if clamp:
        live = np.abs(inner) <= CLAMP
        events = int(m - np.count_nonzero(live))
        if events:
            inner = np.clip(inner, -CLAMP, CLAMP)
    else:
        live, events = None, 0
    if layout.n_views == 1:
        gpos = None
        s = inner - params.theta[layout.psi_size]
    else:
        gpos = layout.gamma_index[d.views[i], d.views[j]]
        s = inner - params.theta[gpos]

    def vjp(c):
        c = np.asarray(c, dtype=float)
        grad = np.zeros(layout.size)
        if gpos is None:
            grad[layout.psi_size] = -c.sum()
        else:
            grad[layout.gamma_positions] -= np.bincount(
                gpos - layout.psi_size, weights=c, minlength=layout.gamma_positions.size)
        ce = c if live is None else np.where(live, c, 0.0)
        u, K = Y.shape
        dY = np.empty((u, K))
        for k in range(K):
            dY[:, k] = (np.bincount(ii, weights=ce * Yj[:, k], minlength=u)
                        + np.bincount(jj, weights=ce * Yi[:, k], minlength=u))
        gviews = layout.unpack(grad)
        for v, sel, X, Yv, A1, blk in cache:
            for name, g in _backward(layout.specs[v], blk, X, Yv, A1, dY[sel]).items():
                gviews[f"enc{v}.{name}"] += g
        return grad

    return s, events, vjp


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(params, path, extra=None):
    """Write a JSON checkpoint.

    Layout: ``{"format", "version", "encoders": [spec per view],
    "blocks": [{"name", "offset", "shape"}], "theta": [floats], "extra"}``.
    Floats are written with ``repr`` precision so reloading is exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoders": [s.to_dict() for s in params.specs],
        "blocks": params.layout.to_list(),
        "theta": [float(t) for t in params.theta],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a betage checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    specs = tuple(EncoderSpec(**s) for s in doc["encoders"])
    params = ModelParams(specs, doc["theta"])
    if params.layout.to_list() != doc["blocks"]:
        raise ValidationError(f"{path}: block table does not match the encoder specs")
    return params
