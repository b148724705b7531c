"""Dense and tensor-train recurrent cells (LSTM, GRU).

Every cell operates on batched autograd variables: inputs are
(batch, M), hidden states (batch, D).  TT cells come in two flavors:
per-gate (one TT matrix per weight matrix) and fused (all gate
matrices stacked row-wise into a single gD x M / gD x D TT matrix
whose leading core acts as a g x r_0 gate-mixing matrix).

Gate order is fixed: (c, u, f, o) for LSTM and (h, u, r) for GRU,
matching the order in which chunks are cut from the fused output.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Var, tt_layer, wrap
from .errors import ExtentMismatch, IncompatibleCheckpoint, IndexOutOfRange
from .tensor import DenseTensor, as_array, read_tten, write_tten
from .tt import TTMatrix

LSTM_GATES = ("c", "u", "f", "o")
GRU_GATES = ("h", "u", "r")


@dataclass
class RNNState:
    """Hidden state h and, for LSTM cells, memory cell state c."""

    h: Var
    c: Optional[Var] = None


def zero_state(batch: int, hidden: int, with_cell: bool) -> RNNState:
    h = ag.constant(np.zeros((batch, hidden)))
    c = ag.constant(np.zeros((batch, hidden))) if with_cell else None
    return RNNState(h, c)


def _as_batch(x) -> Var:
    x = wrap(x)
    return x.reshape(1, -1) if x.data.ndim == 1 else x


def _glorot_std(rows: int, cols: int) -> float:
    return float(np.sqrt(2.0 / (rows + cols)))


def _core_std(target_std: float, ranks: Sequence[int]) -> float:
    """Per-entry std so the reconstructed matrix has ~target variance.

    A global entry is a sum over prod(internal ranks) paths of products
    of one entry per core; solve R * s^(2n) = target^2 for s.
    """
    n = len(ranks) + 1  # cores in the chain
    paths = float(np.prod(ranks)) if len(ranks) else 1.0
    return float((target_std**2 / paths) ** (1.0 / (2 * n)))


# ---------------------------------------------------------------------------
# dense cells


class DenseLSTMCell:
    gates = LSTM_GATES

    def __init__(self, W, U, b):
        self.W = [Parameter(as_array(w), f"W_{g}") for g, w in zip(self.gates, W)]
        self.U = [Parameter(as_array(u), f"U_{g}") for g, u in zip(self.gates, U)]
        self.b = [Parameter(as_array(v), f"b_{g}") for g, v in zip(self.gates, b)]
        self.hidden = self.W[0].data.shape[0]
        self.input_size = self.W[0].data.shape[1]
        for w, u, v in zip(self.W, self.U, self.b):
            if w.data.shape != (self.hidden, self.input_size):
                raise ExtentMismatch("gate W matrices must share one shape")
            if u.data.shape != (self.hidden, self.hidden) or v.data.shape != (self.hidden,):
                raise ExtentMismatch("gate U/b shapes inconsistent with hidden size")

    @classmethod
    def random(cls, hidden: int, input_size: int, rng: np.random.Generator):
        sw = _glorot_std(hidden, input_size)
        su = _glorot_std(hidden, hidden)
        W = [sw * rng.standard_normal((hidden, input_size)) for _ in cls.gates]
        U = [su * rng.standard_normal((hidden, hidden)) for _ in cls.gates]
        b = [np.zeros(hidden) for _ in cls.gates]
        return cls(W, U, b)

    @classmethod
    def zeros(cls, hidden: int, input_size: int):
        W = [np.zeros((hidden, input_size)) for _ in cls.gates]
        U = [np.zeros((hidden, hidden)) for _ in cls.gates]
        b = [np.zeros(hidden) for _ in cls.gates]
        return cls(W, U, b)

    def parameters(self):
        return [*self.W, *self.U, *self.b]

    def initial_state(self, batch: int) -> RNNState:
        return zero_state(batch, self.hidden, with_cell=True)

    def step(self, x, state: RNNState) -> RNNState:
        x = _as_batch(x)
        if x.data.shape[1] != self.input_size:
            raise ExtentMismatch(f"input width {x.data.shape[1]} != {self.input_size}")
        pre = [
            ag.matmul(x, w.transpose(1, 0)) + ag.matmul(state.h, u.transpose(1, 0)) + v
            for w, u, v in zip(self.W, self.U, self.b)
        ]
        c_cand = pre[0].tanh()
        u_gate, f_gate, o_gate = (p.sigmoid() for p in pre[1:])
        c_new = u_gate * c_cand + f_gate * state.c
        return RNNState(o_gate * c_new.tanh(), c_new)


class DenseGRUCell:
    gates = GRU_GATES

    def __init__(self, W, U, b):
        self.W = [Parameter(as_array(w), f"W_{g}") for g, w in zip(self.gates, W)]
        self.U = [Parameter(as_array(u), f"U_{g}") for g, u in zip(self.gates, U)]
        self.b = [Parameter(as_array(v), f"b_{g}") for g, v in zip(self.gates, b)]
        self.hidden = self.W[0].data.shape[0]
        self.input_size = self.W[0].data.shape[1]
        for w, u, v in zip(self.W, self.U, self.b):
            if w.data.shape != (self.hidden, self.input_size):
                raise ExtentMismatch("gate W matrices must share one shape")
            if u.data.shape != (self.hidden, self.hidden) or v.data.shape != (self.hidden,):
                raise ExtentMismatch("gate U/b shapes inconsistent with hidden size")

    @classmethod
    def random(cls, hidden: int, input_size: int, rng: np.random.Generator):
        sw = _glorot_std(hidden, input_size)
        su = _glorot_std(hidden, hidden)
        W = [sw * rng.standard_normal((hidden, input_size)) for _ in cls.gates]
        U = [su * rng.standard_normal((hidden, hidden)) for _ in cls.gates]
        b = [np.zeros(hidden) for _ in cls.gates]
        return cls(W, U, b)

    @classmethod
    def zeros(cls, hidden: int, input_size: int):
        W = [np.zeros((hidden, input_size)) for _ in cls.gates]
        U = [np.zeros((hidden, hidden)) for _ in cls.gates]
        b = [np.zeros(hidden) for _ in cls.gates]
        return cls(W, U, b)

    def parameters(self):
        return [*self.W, *self.U, *self.b]

    def initial_state(self, batch: int) -> RNNState:
        return zero_state(batch, self.hidden, with_cell=False)

    def step(self, x, state: RNNState) -> RNNState:
        x = _as_batch(x)
        if x.data.shape[1] != self.input_size:
            raise ExtentMismatch(f"input width {x.data.shape[1]} != {self.input_size}")
        w_h, w_u, w_r = self.W
        u_h, u_u, u_r = self.U
        b_h, b_u, b_r = self.b
        upd = (ag.matmul(x, w_u.transpose(1, 0)) + ag.matmul(state.h, u_u.transpose(1, 0)) + b_u).sigmoid()
        rst = (ag.matmul(x, w_r.transpose(1, 0)) + ag.matmul(state.h, u_r.transpose(1, 0)) + b_r).sigmoid()
        h_cand = (
            ag.matmul(x, w_h.transpose(1, 0))
            + ag.matmul(rst * state.h, u_h.transpose(1, 0))
            + b_h
        ).tanh()
        return RNNState(upd * h_cand + (1.0 - upd) * state.h)


# ---------------------------------------------------------------------------
# TT weights


class TTWeight:
    """One TT-factorized weight matrix with trainable cores."""

    def __init__(self, cores, row_factorization, col_factorization, name: str):
        self.row_factorization = tuple(int(d) for d in row_factorization)
        self.col_factorization = tuple(int(m) for m in col_factorization)
        self.cores = [
            Parameter(as_array(c), f"{name}_core{k}") for k, c in enumerate(cores)
        ]
        TTMatrix([c.data for c in self.cores], self.row_factorization, self.col_factorization)

    @classmethod
    def from_tt_matrix(cls, m: TTMatrix, name: str):
        return cls(m.cores, m.row_factorization, m.col_factorization, name)

    @classmethod
    def random(cls, rng, row_factorization, col_factorization, ranks, name: str):
        full = (1,) + tuple(int(r) for r in ranks) + (1,)
        rows = int(np.prod(row_factorization))
        cols = int(np.prod(col_factorization))
        std = _core_std(_glorot_std(rows, cols), full[1:-1])
        cores = [
            std * rng.standard_normal((d, m, full[k], full[k + 1]))
            for k, (d, m) in enumerate(zip(row_factorization, col_factorization))
        ]
        return cls(cores, row_factorization, col_factorization, name)

    def tt(self) -> TTMatrix:
        return TTMatrix([c.data for c in self.cores], self.row_factorization, self.col_factorization)

    def apply(self, x: Var) -> Var:
        return tt_layer(self.cores, x)

    def parameters(self):
        return list(self.cores)

    def param_count(self) -> int:
        return int(sum(c.data.size for c in self.cores))


class FusedTTWeights:
    """Gate-concatenated TT stack: g x r_0 gate core plus shared cores.

    Encodes the gD x M matrix whose i-th row block is
    W_i = sum_a V[i, a] * M_a, with the M_a family held jointly by the
    shared cores.
    """

    def __init__(self, gate_core, shared_cores, row_factorization, col_factorization, name: str):
        self.name = name
        self.row_factorization = tuple(int(d) for d in row_factorization)
        self.col_factorization = tuple(int(m) for m in col_factorization)
        self.gate_core = Parameter(as_array(gate_core), f"{name}_gate")
        self.shared_cores = [
            Parameter(as_array(c), f"{name}_core{k + 1}") for k, c in enumerate(shared_cores)
        ]
        self.g, self.mix_rank = self.gate_core.data.shape
        prev = self.mix_rank
        for k, (core, d, m) in enumerate(
            zip(self.shared_cores, self.row_factorization, self.col_factorization)
        ):
            if core.data.shape[:2] != (d, m) or core.data.shape[2] != prev:
                raise ExtentMismatch(
                    f"shared core {k} has shape {core.data.shape}, expected ({d},{m},{prev},*)"
                )
            prev = core.data.shape[3]
        if prev != 1:
            raise ExtentMismatch("trailing TT rank must be 1")

    @classmethod
    def random(cls, rng, g, row_factorization, col_factorization, ranks, name: str):
        """ranks = (r_0, r_1, ..., r_{n-1}); the trailing rank is 1."""
        ranks = tuple(int(r) for r in ranks)
        full = ranks + (1,)
        rows = int(np.prod(row_factorization))
        cols = int(np.prod(col_factorization))
        gate = rng.standard_normal((g, ranks[0])) / np.sqrt(ranks[0])
        std = _core_std(_glorot_std(rows, cols), full[1:-1])
        shared = [
            std * rng.standard_normal((d, m, full[k], full[k + 1]))
            for k, (d, m) in enumerate(zip(row_factorization, col_factorization))
        ]
        return cls(gate, shared, row_factorization, col_factorization, name)

    @property
    def rows(self) -> int:
        return int(np.prod(self.row_factorization))

    @property
    def cols(self) -> int:
        return int(np.prod(self.col_factorization))

    @property
    def ranks(self) -> tuple[int, ...]:
        return (self.mix_rank,) + tuple(c.data.shape[3] for c in self.shared_cores)

    def full_core_vars(self):
        """Chain with the gate core reshaped to (g, 1, 1, r_0)."""
        g, r0 = self.gate_core.data.shape
        return [self.gate_core.reshape(g, 1, 1, r0), *self.shared_cores]

    def to_tt_matrix(self) -> TTMatrix:
        g, r0 = self.gate_core.data.shape
        cores = [self.gate_core.data.reshape(g, 1, 1, r0)] + [c.data for c in self.shared_cores]
        return TTMatrix(
            cores, (g,) + self.row_factorization, (1,) + self.col_factorization
        )

    def shared_family(self) -> np.ndarray:
        """The r_0 matrices M_a as an array of shape (r_0, D, M)."""
        acc = self.shared_cores[0].data  # (d1, m1, r0, r1)
        for core in self.shared_cores[1:]:
            acc = np.tensordot(acc, core.data, axes=([-1], [2]))
        acc = acc[..., 0]
        n = len(self.shared_cores)
        # axes: (d1, m1, r0, d2, m2, d3, m3, ...)
        d_axes = [0] + [3 + 2 * k for k in range(n - 1)]
        m_axes = [1] + [4 + 2 * k for k in range(n - 1)]
        acc = acc.transpose([2] + d_axes + m_axes)
        return acc.reshape(acc.shape[0], self.rows, self.cols)

    def extract_gate_matrix(self, i: int) -> DenseTensor:
        """Dense W_i = sum_a V[i, a] * M_a for one gate index."""
        if not 0 <= i < self.g:
            raise IndexOutOfRange(f"gate index {i} out of range for g={self.g}")
        fam = self.shared_family()
        return DenseTensor(np.tensordot(self.gate_core.data[i], fam, axes=([0], [0])))

    def apply(self, x: Var) -> Var:
        """TT matvec of the full gD x M stack on a (batch, M) input."""
        return tt_layer(self.full_core_vars(), x)

    def parameters(self):
        return [self.gate_core, *self.shared_cores]

    def param_count(self) -> int:
        return int(self.gate_core.data.size + sum(c.data.size for c in self.shared_cores))


def extract_gate_matrix(fw: FusedTTWeights, i: int) -> DenseTensor:
    return fw.extract_gate_matrix(i)


# ---------------------------------------------------------------------------
# TT cells


class TTLSTMCell:
    """LSTM whose weight matrices live in TT format.

    mode "per-gate": eight independent TT matrices.
    mode "fused": one gD x M stack and one gD x D stack with shared cores.
    """

    gates = LSTM_GATES

    def __init__(self, mode, hidden, input_size, biases, *, W_tt=None, U_tt=None,
                 w_stack=None, u_stack=None):
        if mode not in ("per-gate", "fused"):
            raise ExtentMismatch(f"unknown TT cell mode {mode!r}")
        self.mode = mode
        self.hidden = int(hidden)
        self.input_size = int(input_size)
        self.b = [Parameter(as_array(v), f"b_{g}") for g, v in zip(self.gates, biases)]
        self.W_tt, self.U_tt = W_tt, U_tt
        self.w_stack, self.u_stack = w_stack, u_stack
        if mode == "fused" and (w_stack.g != len(self.gates) or u_stack.g != len(self.gates)):
            raise ExtentMismatch("fused LSTM stacks need g=4")

    @classmethod
    def from_tt_matrices(cls, W_mats, U_mats, biases):
        W_tt = [TTWeight.from_tt_matrix(m, f"W_{g}") for g, m in zip(cls.gates, W_mats)]
        U_tt = [TTWeight.from_tt_matrix(m, f"U_{g}") for g, m in zip(cls.gates, U_mats)]
        hidden = W_mats[0].rows
        return cls("per-gate", hidden, W_mats[0].cols, biases, W_tt=W_tt, U_tt=U_tt)

    @classmethod
    def random_pergate(cls, hidden, input_size, in_fact, hid_fact, ranks, rng):
        W_tt = [
            TTWeight.random(rng, hid_fact, in_fact, ranks, f"W_{g}") for g in cls.gates
        ]
        U_tt = [
            TTWeight.random(rng, hid_fact, hid_fact, ranks, f"U_{g}") for g in cls.gates
        ]
        biases = [np.zeros(hidden) for _ in cls.gates]
        return cls("per-gate", hidden, input_size, biases, W_tt=W_tt, U_tt=U_tt)

    @classmethod
    def random_fused(cls, hidden, input_size, in_fact, hid_fact, ranks, rng):
        """ranks = (r_0, ..., r_{n-1}) shared by both stacks."""
        g = len(cls.gates)
        w_stack = FusedTTWeights.random(rng, g, hid_fact, in_fact, ranks, "Wstack")
        u_stack = FusedTTWeights.random(rng, g, hid_fact, hid_fact, ranks, "Ustack")
        biases = [np.zeros(hidden) for _ in cls.gates]
        return cls("fused", hidden, input_size, biases, w_stack=w_stack, u_stack=u_stack)

    def parameters(self):
        out = []
        if self.mode == "per-gate":
            for wt in [*self.W_tt, *self.U_tt]:
                out.extend(wt.parameters())
        else:
            out.extend(self.w_stack.parameters())
            out.extend(self.u_stack.parameters())
        out.extend(self.b)
        return out

    def initial_state(self, batch: int) -> RNNState:
        return zero_state(batch, self.hidden, with_cell=True)

    def _gate_preacts(self, x: Var, h: Var):
        d = self.hidden
        if self.mode == "per-gate":
            return [
                w.apply(x) + u.apply(h) + v
                for w, u, v in zip(self.W_tt, self.U_tt, self.b)
            ]
        wy = self.w_stack.apply(x)
        uy = self.u_stack.apply(h)
        return [
            wy[:, i * d : (i + 1) * d] + uy[:, i * d : (i + 1) * d] + v
            for i, v in enumerate(self.b)
        ]

    def step(self, x, state: RNNState) -> RNNState:
        x = _as_batch(x)
        if x.data.shape[1] != self.input_size:
            raise ExtentMismatch(f"input width {x.data.shape[1]} != {self.input_size}")
        pre = self._gate_preacts(x, state.h)
        c_cand = pre[0].tanh()
        u_gate, f_gate, o_gate = (p.sigmoid() for p in pre[1:])
        c_new = u_gate * c_cand + f_gate * state.c
        return RNNState(o_gate * c_new.tanh(), c_new)


class TTGRUCell:
    """Fused tensor-train GRU (g=3, chunk order h, u, r).

    The reset gate gates h_{t-1} *before* the hidden-hidden term of the
    candidate state, so the shared U stack is applied twice: once to
    h_{t-1} (update/reset chunks) and once to r * h_{t-1} (candidate
    chunk).  Weights remain fully shared between the two applications.
    """

    gates = GRU_GATES

    def __init__(self, hidden, input_size, biases, w_stack, u_stack):
        self.mode = "fused"
        self.hidden = int(hidden)
        self.input_size = int(input_size)
        self.b = [Parameter(as_array(v), f"b_{g}") for g, v in zip(self.gates, biases)]
        self.w_stack, self.u_stack = w_stack, u_stack
        if w_stack.g != 3 or u_stack.g != 3:
            raise ExtentMismatch("fused GRU stacks need g=3")

    @classmethod
    def random_fused(cls, hidden, input_size, in_fact, hid_fact, ranks, rng):
        w_stack = FusedTTWeights.random(rng, 3, hid_fact, in_fact, ranks, "Wstack")
        u_stack = FusedTTWeights.random(rng, 3, hid_fact, hid_fact, ranks, "Ustack")
        biases = [np.zeros(hidden) for _ in cls.gates]
        return cls(hidden, input_size, biases, w_stack, u_stack)

    def parameters(self):
        return [*self.w_stack.parameters(), *self.u_stack.parameters(), *self.b]

    def initial_state(self, batch: int) -> RNNState:
        return zero_state(batch, self.hidden, with_cell=False)

    def step(self, x, state: RNNState) -> RNNState:
        x = _as_batch(x)
        if x.data.shape[1] != self.input_size:
            raise ExtentMismatch(f"input width {x.data.shape[1]} != {self.input_size}")
        d = self.hidden
        b_h, b_u, b_r = self.b
        wy = self.w_stack.apply(x)
        uy = self.u_stack.apply(state.h)
        upd = (wy[:, d : 2 * d] + uy[:, d : 2 * d] + b_u).sigmoid()
        rst = (wy[:, 2 * d : 3 * d] + uy[:, 2 * d : 3 * d] + b_r).sigmoid()
        uy_gated = self.u_stack.apply(rst * state.h)
        h_cand = (wy[:, 0:d] + uy_gated[:, 0:d] + b_h).tanh()
        return RNNState(upd * h_cand + (1.0 - upd) * state.h)


# ---------------------------------------------------------------------------
# sequence running and projection


class ProjectionLayer:
    """Affine map from hidden size D to embedding size E."""

    def __init__(self, matrix, bias):
        self.matrix = Parameter(as_array(matrix), "proj_W")
        self.bias = Parameter(as_array(bias), "proj_b")
        if self.matrix.data.ndim != 2 or self.bias.data.shape != (self.matrix.data.shape[1],):
            raise ExtentMismatch("projection matrix must be D x E with length-E bias")

    @classmethod
    def random(cls, hidden, embed, rng):
        std = _glorot_std(hidden, embed)
        return cls(std * rng.standard_normal((hidden, embed)), np.zeros(embed))

    def parameters(self):
        return [self.matrix, self.bias]

    def __call__(self, h) -> Var:
        h = _as_batch(h)
        if h.data.shape[1] != self.matrix.data.shape[0]:
            raise ExtentMismatch(
                f"hidden width {h.data.shape[1]} != {self.matrix.data.shape[0]}"
            )
        return ag.matmul(h, self.matrix) + self.bias


def project(p: ProjectionLayer, h) -> Var:
    return p(h)


def run_sequence(cell, xs, state: Optional[RNNState] = None):
    """Iterate the cell over a (batch, T, M) or (T, M) input sequence.

    Returns the per-step hidden outputs as a list of (batch, D) Vars
    and the final state.
    """
    arr = xs.data if isinstance(xs, Var) else as_array(xs)
    unbatched = arr.ndim == 2
    if unbatched:
        arr = arr[None]
    batch, steps, width = arr.shape
    if width != cell.input_size:
        raise ExtentMismatch(f"input width {width} != {cell.input_size}")
    if state is None:
        state = cell.initial_state(batch)
    outputs = []
    for t in range(steps):
        state = cell.step(ag.constant(arr[:, t, :]), state)
        outputs.append(state.h)
    return outputs, state


# ---------------------------------------------------------------------------
# parameter accounting


def count_params_dense(g: int, hidden: int, input_size: int, bias: bool = True) -> int:
    """gD(M + D) weights, plus gD bias entries when requested."""
    n = g * hidden * (input_size + hidden)
    return n + (g * hidden if bias else 0)


def count_params_projection(hidden: int, embed: int) -> int:
    return hidden * embed + embed


def count_params_tt1(g: int, row_fact, col_fact, ranks) -> int:
    """Per-gate tensorization: g * sum_k r_{k-1} r_k d_k (m_k + d_k).

    ``ranks`` is the full boundary-inclusive profile (1, r_1, .., 1).
    """
    ranks = tuple(int(r) for r in ranks)
    total = sum(
        ranks[k] * ranks[k + 1] * d * (m + d)
        for k, (d, m) in enumerate(zip(row_fact, col_fact))
    )
    return g * total


def count_params_tt2_formula(g: int, row_fact, col_fact, ranks) -> int:
    """Closed-form fused count: g r_0 + sum_k r_{k-1} r_k d_k (m_k + d_k).

    ``ranks`` is (r_0, r_1, ..., r_{n-1}); the trailing rank is 1.  The
    leading g r_0 term appears once even though both the W and U stacks
    carry a gate core; compare with the exact element count.
    """
    full = tuple(int(r) for r in ranks) + (1,)
    total = sum(
        full[k] * full[k + 1] * d * (m + d)
        for k, (d, m) in enumerate(zip(row_fact, col_fact))
    )
    return g * full[0] + total


def count_params_tt2(cell, include_bias: bool = False) -> int:
    """Exact stored-element count of a fused TT cell's weight stacks."""
    if cell.mode != "fused":
        raise ExtentMismatch("count_params_tt2 applies to fused cells")
    n = cell.w_stack.param_count() + cell.u_stack.param_count()
    if include_bias:
        n += sum(b.data.size for b in cell.b)
    return n


def count_params_pergate(cell, include_bias: bool = False) -> int:
    """Exact stored-element count of a per-gate TT cell's weights."""
    if cell.mode != "per-gate":
        raise ExtentMismatch("count_params_pergate applies to per-gate cells")
    n = sum(w.param_count() for w in [*cell.W_tt, *cell.U_tt])
    if include_bias:
        n += sum(b.data.size for b in cell.b)
    return n


# ---------------------------------------------------------------------------
# checkpointing


def _cell_manifest(cell) -> dict:
    man = {
        "kind": "lstm" if isinstance(cell, (DenseLSTMCell, TTLSTMCell)) else "gru",
        "g": len(cell.gates),
        "hidden": cell.hidden,
        "input_size": cell.input_size,
        "gate_order": list(cell.gates),
        "bias_convention": "single",
    }
    if isinstance(cell, (DenseLSTMCell, DenseGRUCell)):
        man["mode"] = "dense"
    elif cell.mode == "per-gate":
        man["mode"] = "tt-pergate"
        man["in_factorization"] = list(cell.W_tt[0].col_factorization)
        man["hid_factorization"] = list(cell.W_tt[0].row_factorization)
        man["ranks"] = list(cell.W_tt[0].tt().ranks)
    else:
        man["mode"] = "tt-fused"
        man["in_factorization"] = list(cell.w_stack.col_factorization)
        man["hid_factorization"] = list(cell.w_stack.row_factorization)
        man["ranks"] = list(cell.w_stack.ranks)
    return man


def save_cell(directory, cell, extra_params=(), extra_manifest=None) -> None:
    """Write manifest.json plus one TTEN1 file per parameter."""
    os.makedirs(directory, exist_ok=True)
    man = _cell_manifest(cell)
    params = list(cell.parameters()) + list(extra_params)
    man["parameters"] = [p.name for p in params]
    if extra_manifest:
        man.update(extra_manifest)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(man, f, indent=2, sort_keys=True)
    for p in params:
        write_tten(os.path.join(directory, f"{p.name}.tten"), DenseTensor(p.data))


def load_cell(directory):
    """Rebuild a cell (and any projection) from a checkpoint directory.

    Returns (cell, manifest, params_by_name) so callers can reattach
    auxiliary parameters such as projection layers.
    """
    with open(os.path.join(directory, "manifest.json")) as f:
        man = json.load(f)
    tensors = {
        name: read_tten(os.path.join(directory, f"{name}.tten")).array
        for name in man["parameters"]
    }
    kind, mode = man["kind"], man["mode"]
    gates = LSTM_GATES if kind == "lstm" else GRU_GATES
    biases = [tensors[f"b_{g}"] for g in gates]
    if mode == "dense":
        cls = DenseLSTMCell if kind == "lstm" else DenseGRUCell
        cell = cls([tensors[f"W_{g}"] for g in gates], [tensors[f"U_{g}"] for g in gates], biases)
    else:
        hid_fact = man["hid_factorization"]
        in_fact = man["in_factorization"]
        n = len(hid_fact)
        if mode == "tt-pergate":
            if kind != "lstm":
                raise IncompatibleCheckpoint("per-gate checkpoints are LSTM-only")
            W_tt = [
                TTWeight([tensors[f"W_{g}_core{k}"] for k in range(n)], hid_fact, in_fact, f"W_{g}")
                for g in gates
            ]
            U_tt = [
                TTWeight([tensors[f"U_{g}_core{k}"] for k in range(n)], hid_fact, hid_fact, f"U_{g}")
                for g in gates
            ]
            cell = TTLSTMCell("per-gate", man["hidden"], man["input_size"], biases,
                              W_tt=W_tt, U_tt=U_tt)
        else:
            w_stack = FusedTTWeights(
                tensors["Wstack_gate"],
                [tensors[f"Wstack_core{k + 1}"] for k in range(n)],
                hid_fact, in_fact, "Wstack",
            )
            u_stack = FusedTTWeights(
                tensors["Ustack_gate"],
                [tensors[f"Ustack_core{k + 1}"] for k in range(n)],
                hid_fact, hid_fact, "Ustack",
            )
            if kind == "lstm":
                cell = TTLSTMCell("fused", man["hidden"], man["input_size"], biases,
                                  w_stack=w_stack, u_stack=u_stack)
            else:
                cell = TTGRUCell(man["hidden"], man["input_size"], biases, w_stack, u_stack)
    return cell, man, tensors
