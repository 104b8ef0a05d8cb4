"""Reverse-mode differentiation over complex tensors with dual cotangents.

Every node on the tape carries two adjoint channels, one with respect to
the node's value and one with respect to its conjugate, so the backward
sweep implements the two-term chain rule for non-holomorphic maps:

    dL/dz  +=  dL/du * du/dz   +  dL/du* * d(u*)/dz
    dL/dz* +=  dL/du * du/dz*  +  dL/du* * d(u*)/dz*

For a real-valued scalar loss the two channels are conjugate mirrors of
each other at every node, and the steepest-ascent direction is
``2 * dL/dz*``, which is what :func:`complex_gradient` returns.

The backward sweep records its own arithmetic on the same tape.  That is
what makes exact second derivatives possible: a second sweep over the
extended tape differentiates the first gradient (see :func:`hvp`).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .ctensor import CTensor, ShapeMismatchError

_C = np.complex128

REAL_LOSS_TOL = 1e-12


class UnknownOpError(ValueError):
    """Raised when recording an operation the tape does not define."""


class NonScalarLossError(ValueError):
    """Raised when backward is seeded from a non-scalar node."""


class NonRealLossError(ValueError):
    """Raised when backward is seeded from a loss with an imaginary part."""


class NonAnalyticChainError(ValueError):
    """Raised when an operation-count comparison meets a non-analytic stage."""


def _val(x) -> np.ndarray:
    if isinstance(x, CTensor):
        return x.numpy()
    return np.asarray(x, dtype=_C)


def _as_node_value(x) -> np.ndarray:
    v = _val(x)
    return np.ascontiguousarray(v) if v.ndim else v.copy()


# ---------------------------------------------------------------------------
# index maps for gather/scatter (cached; they only depend on shapes)
# ---------------------------------------------------------------------------

_IDX_CACHE: dict[tuple, np.ndarray] = {}


def _expand_last_idx(base_size: int, n: int) -> np.ndarray:
    key = ("expand", base_size, n)
    idx = _IDX_CACHE.get(key)
    if idx is None:
        idx = np.arange(base_size * n, dtype=np.intp) // n
        _IDX_CACHE[key] = idx
    return idx


def _zero_idx(size: int) -> np.ndarray:
    key = ("zero", size)
    idx = _IDX_CACHE.get(key)
    if idx is None:
        idx = np.zeros(size, dtype=np.intp)
        _IDX_CACHE[key] = idx
    return idx


class Tape:
    """Append-only record of a complex tensor computation.

    Node ids are list indices, so inputs always refer to earlier nodes and
    the tape is topologically ordered by construction.  A tape serves one
    forward pass; backward sweeps append their arithmetic to the same tape.
    """

    __slots__ = ("kind", "inputs", "val", "aux", "needs")

    def __init__(self):
        self.kind: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.val: list[np.ndarray] = []
        self.aux: list = []
        self.needs: list[bool] = []

    def __len__(self) -> int:
        return len(self.kind)

    def _push(self, kind: str, inputs: tuple[int, ...], val: np.ndarray, aux=None) -> int:
        needs = False
        for i in inputs:
            if self.needs[i]:
                needs = True
                break
        self.kind.append(kind)
        self.inputs.append(inputs)
        self.val.append(val)
        self.aux.append(aux)
        self.needs.append(needs)
        return len(self.kind) - 1

    # -- introspection ---------------------------------------------------

    def value(self, nid: int) -> CTensor:
        """Forward value of a node as a CTensor."""
        return CTensor._wrap(self.val[nid])

    def raw(self, nid: int) -> np.ndarray:
        return self.val[nid]

    # -- terminals -------------------------------------------------------

    def leaf(self, value) -> int:
        """Differentiable input node."""
        nid = self._push("leaf", (), _as_node_value(value))
        self.needs[nid] = True
        return nid

    def const(self, value) -> int:
        """Non-differentiable constant node."""
        return self._push("const", (), _as_node_value(value))

    # -- elementwise -----------------------------------------------------

    def _check_same(self, op: str, a: int, b: int) -> None:
        if self.val[a].shape != self.val[b].shape:
            raise ShapeMismatchError(
                f"{op}: operand shapes differ, {self.val[a].shape} vs {self.val[b].shape}"
            )

    def add(self, a: int, b: int) -> int:
        self._check_same("add", a, b)
        return self._push("add", (a, b), self.val[a] + self.val[b])

    def sub(self, a: int, b: int) -> int:
        self._check_same("sub", a, b)
        return self._push("sub", (a, b), self.val[a] - self.val[b])

    def neg(self, a: int) -> int:
        return self._push("neg", (a,), -self.val[a])

    def mul(self, a: int, b: int) -> int:
        self._check_same("mul", a, b)
        return self._push("mul", (a, b), self.val[a] * self.val[b])

    def div(self, a: int, b: int) -> int:
        self._check_same("div", a, b)
        return self._push("div", (a, b), self.val[a] / self.val[b])

    def smul(self, a: int, c: complex) -> int:
        """Multiply by a fixed (non-differentiable) complex scalar."""
        c = complex(c)
        return self._push("smul", (a,), self.val[a] * _C(c), c)

    def conj(self, a: int) -> int:
        return self._push("conj", (a,), np.conj(self.val[a]))

    def exp(self, a: int) -> int:
        return self._push("exp", (a,), np.exp(self.val[a]))

    def log(self, a: int) -> int:
        return self._push("log", (a,), np.log(self.val[a]))

    def sqrt(self, a: int) -> int:
        return self._push("sqrt", (a,), np.sqrt(self.val[a]))

    def cabs(self, a: int) -> int:
        """Elementwise modulus |z| (real-carrying); derivative 0 at z = 0."""
        return self._push("cabs", (a,), np.abs(self.val[a]).astype(_C))

    def mdiv(self, a: int, b: int) -> int:
        """Masked divide: a/b where b != 0, else 0.  Supports the modulus
        pullback, which must stay finite at exact zeros."""
        self._check_same("mdiv", a, b)
        vb = self.val[b]
        mask = vb != 0
        out = np.zeros(vb.shape, dtype=_C)
        np.divide(self.val[a], vb, out=out, where=mask)
        return self._push("mdiv", (a, b), out)

    def crelu(self, a: int) -> int:
        """relu on the real part plus j times relu on the imaginary part."""
        v = self.val[a]
        out = np.maximum(v.real, 0.0) + 1j * np.maximum(v.imag, 0.0)
        return self._push("crelu", (a,), out)

    # -- linear algebra ----------------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        va, vb = self.val[a], self.val[b]
        if va.ndim != 2 or vb.ndim != 2:
            raise ShapeMismatchError(f"matmul needs rank-2 operands, got ranks {va.ndim} and {vb.ndim}")
        if va.shape[1] != vb.shape[0]:
            raise ShapeMismatchError(f"matmul: inner dimensions disagree, {va.shape} x {vb.shape}")
        return self._push("matmul", (a, b), va @ vb)

    def bmm(self, a: int, b: int) -> int:
        va, vb = self.val[a], self.val[b]
        if va.ndim != 3 or vb.ndim != 3:
            raise ShapeMismatchError(f"bmm needs rank-3 operands, got ranks {va.ndim} and {vb.ndim}")
        if va.shape[0] != vb.shape[0] or va.shape[2] != vb.shape[1]:
            raise ShapeMismatchError(f"bmm: shapes disagree, {va.shape} x {vb.shape}")
        return self._push("bmm", (a, b), va @ vb)

    def transpose(self, a: int) -> int:
        va = self.val[a]
        if va.ndim != 2:
            raise ShapeMismatchError(f"transpose needs a rank-2 tensor, got rank {va.ndim}")
        return self._push("transpose", (a,), np.ascontiguousarray(va.T))

    def btranspose(self, a: int) -> int:
        va = self.val[a]
        if va.ndim != 3:
            raise ShapeMismatchError(f"btranspose needs a rank-3 tensor, got rank {va.ndim}")
        return self._push("btranspose", (a,), np.ascontiguousarray(np.swapaxes(va, 1, 2)))

    # -- structure ---------------------------------------------------------

    def reshape(self, a: int, shape: Sequence[int]) -> int:
        shape = tuple(shape)
        return self._push("reshape", (a,), self.val[a].reshape(shape), self.val[a].shape)

    def take(self, a: int, idx: np.ndarray, out_shape: Sequence[int]) -> int:
        """Gather: out.flat[i] = a.flat[idx[i]].  idx is a fixed index map."""
        out_shape = tuple(out_shape)
        out = self.val[a].ravel()[idx].reshape(out_shape)
        return self._push("take", (a,), out, idx)

    def scatter(self, a: int, idx: np.ndarray, out_shape: Sequence[int]) -> int:
        """Scatter-add: out.flat[idx[i]] += a.flat[i].  Adjoint of take."""
        out_shape = tuple(out_shape)
        buf = np.zeros(max(1, int(np.prod(out_shape, dtype=np.int64))), dtype=_C)
        np.add.at(buf, idx, self.val[a].ravel())
        return self._push("scatter", (a,), buf.reshape(out_shape), idx)

    # -- generic recording -------------------------------------------------

    def record(self, op_kind: str, inputs: Sequence[int], **aux) -> int:
        """Record an operation by name; forward value is computed eagerly."""
        for i in inputs:
            if not 0 <= i < len(self.kind):
                raise UnknownOpError(f"record: input id {i} is not on the tape")
        method = _RECORDABLE.get(op_kind)
        if method is None:
            raise UnknownOpError(f"record: unknown op_kind {op_kind!r}")
        return method(self, *inputs, **aux)


_RECORDABLE: dict[str, Callable] = {
    "add": Tape.add,
    "sub": Tape.sub,
    "neg": Tape.neg,
    "mul": Tape.mul,
    "div": Tape.div,
    "smul": Tape.smul,
    "conj": Tape.conj,
    "exp": Tape.exp,
    "log": Tape.log,
    "sqrt": Tape.sqrt,
    "cabs": Tape.cabs,
    "mdiv": Tape.mdiv,
    "crelu": Tape.crelu,
    "matmul": Tape.matmul,
    "bmm": Tape.bmm,
    "transpose": Tape.transpose,
    "btranspose": Tape.btranspose,
    "reshape": Tape.reshape,
    "take": Tape.take,
    "scatter": Tape.scatter,
}


# ---------------------------------------------------------------------------
# graph convenience builders
# ---------------------------------------------------------------------------

def g_re(g: Tape, x: int) -> int:
    """(x + x*) / 2, the real part kept in complex storage."""
    return g.smul(g.add(x, g.conj(x)), 0.5)


def g_im(g: Tape, x: int) -> int:
    """(x - x*) / 2j, the imaginary part kept in complex storage."""
    return g.smul(g.sub(x, g.conj(x)), -0.5j)


def g_abs2(g: Tape, x: int) -> int:
    return g.mul(x, g.conj(x))


def g_abs(g: Tape, x: int) -> int:
    return g.cabs(x)


def g_sum(g: Tape, x: int) -> int:
    """Sum of all elements, as a rank-0 node."""
    return g.scatter(x, _zero_idx(g.val[x].size), ())


def g_mean(g: Tape, x: int) -> int:
    return g.smul(g_sum(g, x), 1.0 / g.val[x].size)


def g_reduce_last(g: Tape, x: int) -> int:
    """Sum over the last axis."""
    shape = g.val[x].shape
    n = shape[-1]
    return g.scatter(x, _expand_last_idx(g.val[x].size // n, n), shape[:-1])


def g_expand_last(g: Tape, x: int, n: int) -> int:
    """Repeat along a new trailing axis of length n."""
    shape = g.val[x].shape
    return g.take(x, _expand_last_idx(g.val[x].size, n), shape + (n,))


def g_dot_const(g: Tape, x: int, w) -> int:
    """sum(x * w) for a fixed coefficient tensor w, as a rank-0 node."""
    return g_sum(g, g.mul(x, g.const(w)))


# ---------------------------------------------------------------------------
# pullbacks: one function per op, emitting per-input (value, conj) channels
# ---------------------------------------------------------------------------
#
# Conventions: cv = dL/du, cc = dL/du*.  Either may be None (structural
# zero).  Each pullback returns (input_id, pv, pc) triples where pv feeds
# the input's value channel and pc its conjugate channel.

def _madd(g: Tape, a: int | None, b: int | None) -> int | None:
    if a is None:
        return b
    if b is None:
        return a
    return g.add(a, b)


def _mneg(g: Tape, a: int | None) -> int | None:
    return None if a is None else g.neg(a)


def _pull_add(g, nid, cv, cc, need):
    a, b = g.inputs[nid]
    out = []
    if need[0]:
        out.append((a, cv, cc))
    if need[1]:
        out.append((b, cv, cc))
    return out


def _pull_sub(g, nid, cv, cc, need):
    a, b = g.inputs[nid]
    out = []
    if need[0]:
        out.append((a, cv, cc))
    if need[1]:
        out.append((b, _mneg(g, cv), _mneg(g, cc)))
    return out


def _pull_neg(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    return [(a, _mneg(g, cv), _mneg(g, cc))]


def _pull_conj(g, nid, cv, cc, need):
    # conjugation swaps the two adjoint channels
    (a,) = g.inputs[nid]
    return [(a, cc, cv)]


def _pull_mul(g, nid, cv, cc, need):
    a, b = g.inputs[nid]
    out = []
    if need[0]:
        pv = None if cv is None else g.mul(cv, b)
        pc = None if cc is None else g.mul(cc, g.conj(b))
        out.append((a, pv, pc))
    if need[1]:
        pv = None if cv is None else g.mul(cv, a)
        pc = None if cc is None else g.mul(cc, g.conj(a))
        out.append((b, pv, pc))
    return out


def _pull_div(g, nid, cv, cc, need):
    a, b = g.inputs[nid]
    out = []
    if need[0]:
        pv = None if cv is None else g.div(cv, b)
        pc = None if cc is None else g.div(cc, g.conj(b))
        out.append((a, pv, pc))
    if need[1]:
        # d(a/b)/db = -u/b with u the node value
        pv = None if cv is None else g.neg(g.div(g.mul(cv, nid), b))
        pc = None if cc is None else g.neg(g.div(g.mul(cc, g.conj(nid)), g.conj(b)))
        out.append((b, pv, pc))
    return out


def _pull_smul(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    c = g.aux[nid]
    pv = None if cv is None else g.smul(cv, c)
    pc = None if cc is None else g.smul(cc, c.conjugate())
    return [(a, pv, pc)]


def _pull_exp(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    pv = None if cv is None else g.mul(cv, nid)
    pc = None if cc is None else g.mul(cc, g.conj(nid))
    return [(a, pv, pc)]


def _pull_log(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    pv = None if cv is None else g.div(cv, a)
    pc = None if cc is None else g.div(cc, g.conj(a))
    return [(a, pv, pc)]


def _pull_sqrt(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    d = g.smul(nid, 2.0)
    pv = None if cv is None else g.div(cv, d)
    pc = None if cc is None else g.div(cc, g.conj(d))
    return [(a, pv, pc)]


def _pull_cabs(g, nid, cv, cc, need):
    # d|z|/dz = z*/(2|z|), d|z|/dz* = z/(2|z|); both channels collapse onto
    # t = cv + cc because |z| is real.  Masked divide keeps z = 0 at zero.
    (a,) = g.inputs[nid]
    t = _madd(g, cv, cc)
    if t is None:
        return [(a, None, None)]
    two_u = g.smul(nid, 2.0)
    pv = g.mdiv(g.mul(t, g.conj(a)), two_u)
    pc = g.mdiv(g.mul(t, a), two_u)
    return [(a, pv, pc)]


def _pull_mdiv(g, nid, cv, cc, need):
    a, b = g.inputs[nid]
    out = []
    if need[0]:
        pv = None if cv is None else g.mdiv(cv, b)
        pc = None if cc is None else g.mdiv(cc, g.conj(b))
        out.append((a, pv, pc))
    if need[1]:
        pv = None if cv is None else g.neg(g.mdiv(g.mul(cv, nid), b))
        pc = None if cc is None else g.neg(g.mdiv(g.mul(cc, g.conj(nid)), g.conj(b)))
        out.append((b, pv, pc))
    return out


def _pull_crelu(g, nid, cv, cc, need):
    # du/dz = (m_re + m_im)/2 and du/dz* = (m_re - m_im)/2 with the two
    # half-plane masks; both are real, so conjugations drop out.
    (a,) = g.inputs[nid]
    v = g.val[a]
    mre = (v.real > 0).astype(_C)
    mim = (v.imag > 0).astype(_C)
    p = g.const((mre + mim) * 0.5)
    q = g.const((mre - mim) * 0.5)
    pv = _madd(g, None if cv is None else g.mul(cv, p), None if cc is None else g.mul(cc, q))
    pc = _madd(g, None if cv is None else g.mul(cv, q), None if cc is None else g.mul(cc, p))
    return [(a, pv, pc)]


def _pull_matmul(g, nid, cv, cc, need):
    a, b = g.inputs[nid]
    out = []
    if need[0]:
        pv = None if cv is None else g.matmul(cv, g.transpose(b))
        pc = None if cc is None else g.matmul(cc, g.transpose(g.conj(b)))
        out.append((a, pv, pc))
    if need[1]:
        pv = None if cv is None else g.matmul(g.transpose(a), cv)
        pc = None if cc is None else g.matmul(g.transpose(g.conj(a)), cc)
        out.append((b, pv, pc))
    return out


def _pull_bmm(g, nid, cv, cc, need):
    a, b = g.inputs[nid]
    out = []
    if need[0]:
        pv = None if cv is None else g.bmm(cv, g.btranspose(b))
        pc = None if cc is None else g.bmm(cc, g.btranspose(g.conj(b)))
        out.append((a, pv, pc))
    if need[1]:
        pv = None if cv is None else g.bmm(g.btranspose(a), cv)
        pc = None if cc is None else g.bmm(g.btranspose(g.conj(a)), cc)
        out.append((b, pv, pc))
    return out


def _pull_transpose(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    pv = None if cv is None else g.transpose(cv)
    pc = None if cc is None else g.transpose(cc)
    return [(a, pv, pc)]


def _pull_btranspose(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    pv = None if cv is None else g.btranspose(cv)
    pc = None if cc is None else g.btranspose(cc)
    return [(a, pv, pc)]


def _pull_reshape(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    shape = g.aux[nid]
    pv = None if cv is None else g.reshape(cv, shape)
    pc = None if cc is None else g.reshape(cc, shape)
    return [(a, pv, pc)]


def _pull_take(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    idx = g.aux[nid]
    shape = g.val[a].shape
    pv = None if cv is None else g.scatter(cv, idx, shape)
    pc = None if cc is None else g.scatter(cc, idx, shape)
    return [(a, pv, pc)]


def _pull_scatter(g, nid, cv, cc, need):
    (a,) = g.inputs[nid]
    idx = g.aux[nid]
    shape = g.val[a].shape
    pv = None if cv is None else g.take(cv, idx, shape)
    pc = None if cc is None else g.take(cc, idx, shape)
    return [(a, pv, pc)]


_PULLBACKS: dict[str, Callable] = {
    "add": _pull_add,
    "sub": _pull_sub,
    "neg": _pull_neg,
    "mul": _pull_mul,
    "div": _pull_div,
    "smul": _pull_smul,
    "conj": _pull_conj,
    "exp": _pull_exp,
    "log": _pull_log,
    "sqrt": _pull_sqrt,
    "cabs": _pull_cabs,
    "mdiv": _pull_mdiv,
    "crelu": _pull_crelu,
    "matmul": _pull_matmul,
    "bmm": _pull_bmm,
    "transpose": _pull_transpose,
    "btranspose": _pull_btranspose,
    "reshape": _pull_reshape,
    "take": _pull_take,
    "scatter": _pull_scatter,
}


# ---------------------------------------------------------------------------
# backward sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualCotangent:
    """Adjoint pair of one node: (dL/dz, dL/dz*), both shaped like the node."""

    wrt_value: CTensor
    wrt_conj: CTensor


class Cotangents:
    """Result of a backward sweep: node id -> DualCotangent.

    Nodes that do not influence the loss have zero cotangents; they are
    materialized lazily.
    """

    def __init__(self, tape: Tape, node_pairs: dict[int, tuple[int | None, int | None]]):
        self._tape = tape
        self._pairs = node_pairs

    def node_ids(self):
        return self._pairs.keys()

    def _channel(self, nid: int, slot: int) -> np.ndarray:
        pair = self._pairs.get(nid)
        cid = None if pair is None else pair[slot]
        if cid is None:
            return np.zeros(self._tape.val[nid].shape, dtype=_C)
        return self._tape.val[cid]

    def wrt_value(self, nid: int) -> CTensor:
        return CTensor._wrap(self._channel(nid, 0))

    def wrt_conj(self, nid: int) -> CTensor:
        return CTensor._wrap(self._channel(nid, 1))

    def pair(self, nid: int) -> DualCotangent:
        return DualCotangent(self.wrt_value(nid), self.wrt_conj(nid))

    def node_pair_ids(self, nid: int) -> tuple[int | None, int | None]:
        return self._pairs.get(nid, (None, None))

    def max_conjugate_gap(self) -> float:
        """max |wrt_conj - conj(wrt_value)| over all touched nodes."""
        gap = 0.0
        for nid in self._pairs:
            dv = self._channel(nid, 0)
            dc = self._channel(nid, 1)
            gap = max(gap, float(np.max(np.abs(dc - np.conj(dv)), initial=0.0)))
        return gap


def backward_graph(
    g: Tape,
    out_id: int,
    seed: tuple[complex | None, complex | None] = (1.0, None),
    naive: bool = False,
    stop: frozenset[int] | set[int] | None = None,
) -> dict[int, tuple[int | None, int | None]]:
    """Sweep the tape in reverse from ``out_id``, recording the adjoint
    arithmetic on the same tape.

    ``seed`` gives the (value, conjugate) adjoints of the output node; None
    means a structural zero.  With ``naive=True`` only the value channel is
    propagated, which drops every conjugate-path term of the chain rule
    (the classical, holomorphic-only rule).  Nodes in ``stop`` are treated
    as free variables: they accumulate adjoints but are not differentiated
    through.

    Returns a map node id -> (value-channel node id, conj-channel node id).
    Node ids are processed in descending order, so every adjoint is fully
    accumulated before it is propagated.
    """
    shape = g.val[out_id].shape
    sv, sc = seed
    if naive:
        sc = None
    sv_id = None if sv is None else g.const(np.full(shape, _C(sv)))
    sc_id = None if sc is None else g.const(np.full(shape, _C(sc)))
    cot: dict[int, tuple[int | None, int | None]] = {out_id: (sv_id, sc_id)}

    heap = [-out_id]
    while heap:
        nid = -heapq.heappop(heap)
        kind = g.kind[nid]
        if kind == "leaf" or kind == "const":
            continue
        if stop is not None and nid in stop:
            continue
        cv, cc = cot[nid]
        if cv is None and cc is None:
            continue
        ins = g.inputs[nid]
        need = tuple(g.needs[i] for i in ins)
        if not any(need):
            continue
        for inp, pv, pc in _PULLBACKS[kind](g, nid, cv, cc, need):
            if not g.needs[inp]:
                continue
            if naive:
                pc = None
            if pv is None and pc is None:
                continue
            prev = cot.get(inp)
            if prev is None:
                cot[inp] = (pv, pc)
                heapq.heappush(heap, -inp)
            else:
                cot[inp] = (_madd(g, prev[0], pv), _madd(g, prev[1], pc))
    return cot


def _check_real_scalar(g: Tape, loss_id: int) -> None:
    v = g.val[loss_id]
    if v.size != 1:
        raise NonScalarLossError(f"loss node must be scalar, got shape {v.shape}")
    im = abs(float(v.reshape(-1)[0].imag))
    if im > REAL_LOSS_TOL:
        raise NonRealLossError(f"loss has imaginary part {im:.3e} above tolerance {REAL_LOSS_TOL}")


def backward(g: Tape, loss_id: int) -> Cotangents:
    """Dual-channel reverse sweep from a real-valued scalar loss.

    The loss node is seeded with the pair (1/2, 1/2): a real scalar reads
    as (L + L*)/2, which splits the unit adjoint evenly across the two
    channels and keeps ``wrt_conj == conj(wrt_value)`` at every node,
    including the loss itself.
    """
    _check_real_scalar(g, loss_id)
    pairs = backward_graph(g, loss_id, seed=(0.5, 0.5))
    return Cotangents(g, pairs)


def complex_gradient(g: Tape, loss_id: int, param_id: int, cots: Cotangents | None = None) -> CTensor:
    """Steepest-ascent direction 2 * dL/dz* of a real loss at a node."""
    if not 0 <= param_id < len(g):
        raise UnknownOpError(f"param node {param_id} is not on the tape")
    if cots is None:
        cots = backward(g, loss_id)
    return CTensor._wrap(2.0 * cots.wrt_conj(param_id).numpy())


# ---------------------------------------------------------------------------
# Hessian-vector products via double backprop
# ---------------------------------------------------------------------------

_HVP_CALLS = 0


def hvp_call_count() -> int:
    return _HVP_CALLS


def hvp(
    loss_builder: Callable[[Tape, dict[str, int]], int],
    theta: Mapping[str, CTensor],
    v: Mapping[str, CTensor],
) -> tuple[dict[str, CTensor], dict[str, CTensor]]:
    """Products of the two curvature blocks of a real loss with ``v``.

    With g = 2 dL/dz* the gradient map, the blocks are

        H_vv  = (d g / d theta)^*          (value-value block)
        H_cv  = (d conj(g) / d theta)^*    (conj-value block)

    and the returned pair is (H_vv v, H_cv v).  Both are obtained by
    differentiating the recorded gradient a second time; symmetry of the
    mixed second derivatives turns the needed Jacobian-vector products
    into vector-Jacobian products on the extended tape.
    """
    global _HVP_CALLS
    _HVP_CALLS += 1

    g = Tape()
    leaves = {name: g.leaf(t) for name, t in theta.items()}
    loss_id = loss_builder(g, leaves)
    _check_real_scalar(g, loss_id)
    first = backward_graph(g, loss_id, seed=(0.5, 0.5))

    def _second(channel_slot: int, vec_of) -> dict[str, CTensor]:
        s = None
        for name, leaf in leaves.items():
            pair = first.get(leaf)
            cid = None if pair is None else pair[channel_slot]
            if cid is None:
                continue
            term = g_dot_const(g, g.smul(cid, 2.0), vec_of(name))
            s = term if s is None else g.add(s, term)
        out: dict[str, CTensor] = {}
        if s is None:
            for name, t in theta.items():
                out[name] = CTensor.zeros(t.shape)
            return out
        second = backward_graph(g, s, seed=(1.0, None))
        for name, leaf in leaves.items():
            pair = second.get(leaf, (None, None))
            if pair[0] is None:
                out[name] = CTensor.zeros(theta[name].shape)
            else:
                out[name] = CTensor._wrap(g.val[pair[0]].copy())
        return out

    # H_vv v: differentiate sum(g * v) along the value channel.
    h_vv = _second(1, lambda name: v[name].numpy())
    # H_cv v: differentiate sum(conj(g) * conj(v)) and conjugate the result.
    h_cv_raw = _second(0, lambda name: np.conj(v[name].numpy()))
    h_cv = {name: CTensor._wrap(np.conj(t.numpy())) for name, t in h_cv_raw.items()}
    return h_vv, h_cv


# ---------------------------------------------------------------------------
# finite-difference oracles
# ---------------------------------------------------------------------------

FD_STEP = 1e-6


def fd_real_loss_partials(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP):
    """Central-difference partials of a real scalar f wrt Re(x) and Im(x)."""
    x = np.asarray(x, dtype=_C)
    dre = np.zeros(x.shape, dtype=np.float64)
    dim = np.zeros(x.shape, dtype=np.float64)
    flat = x.ravel()
    for i in range(flat.size):
        for step, out in ((h, dre), (1j * h, dim)):
            xp = flat.copy()
            xm = flat.copy()
            xp[i] += step
            xm[i] -= step
            fp = float(f(xp.reshape(x.shape)))
            fm = float(f(xm.reshape(x.shape)))
            out.ravel()[i] = (fp - fm) / (2.0 * h)
    return dre, dim


def fd_complex_gradient(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Finite-difference estimate of the steepest-ascent direction 2 dL/dz*."""
    dre, dim = fd_real_loss_partials(f, x, h)
    return dre + 1j * dim


def fd_wirtinger_pair(f, x: np.ndarray, h: float = FD_STEP):
    """Finite-difference estimates of (dL/dz, dL/dz*) for a real loss."""
    dre, dim = fd_real_loss_partials(f, x, h)
    return (dre - 1j * dim) / 2.0, (dre + 1j * dim) / 2.0


def rel_error(got: np.ndarray, want: np.ndarray, rel: float = 1e-5, floor: float = 1e-8) -> float:
    """Largest elementwise error, scaled so that a return value <= ``rel``
    is exactly the acceptance test |got - want| <= max(rel*|want|, floor)."""
    got = np.asarray(got)
    want = np.asarray(want)
    denom = np.maximum(np.abs(want), floor / rel)
    return float(np.max(np.abs(got - want) / denom, initial=0.0))


# ---------------------------------------------------------------------------
# Cauchy-Riemann checking
# ---------------------------------------------------------------------------

def cr_jacobian_blocks(fn: Callable[[CTensor], CTensor], point: CTensor, h: float = FD_STEP):
    """Central-difference estimates of the four real Jacobian blocks
    (dRe f/dRe x, dIm f/dIm x, dRe f/dIm x, dIm f/dRe x)."""
    x = point.numpy()
    n = x.size
    y0 = fn(point).numpy()
    m = y0.size
    drr = np.zeros((m, n))
    dii = np.zeros((m, n))
    dri = np.zeros((m, n))
    dir_ = np.zeros((m, n))
    flat = x.ravel()
    for j in range(n):
        for step, re_block, im_block in ((h, drr, dir_), (1j * h, dri, dii)):
            xp = flat.copy()
            xm = flat.copy()
            xp[j] += step
            xm[j] -= step
            yp = fn(CTensor._wrap(xp.reshape(x.shape))).numpy().ravel()
            ym = fn(CTensor._wrap(xm.reshape(x.shape))).numpy().ravel()
            if not (np.all(np.isfinite(yp.view(np.float64))) and np.all(np.isfinite(ym.view(np.float64)))):
                raise FloatingPointError("cr_check: function produced non-finite output")
            d = (yp - ym) / (2.0 * h)
            re_block[:, j] = d.real
            im_block[:, j] = d.imag
    return drr, dii, dri, dir_


def cr_check(fn: Callable[[CTensor], CTensor], point: CTensor, tol: float, h: float = FD_STEP) -> bool:
    """True iff fn satisfies the Cauchy-Riemann equalities at ``point``:
    dRe f/dRe x == dIm f/dIm x and dRe f/dIm x == -dIm f/dRe x, elementwise
    within ``tol``."""
    drr, dii, dri, dir_ = cr_jacobian_blocks(fn, point, h)
    return bool(np.max(np.abs(drr - dii), initial=0.0) <= tol
                and np.max(np.abs(dri + dir_), initial=0.0) <= tol)


# ---------------------------------------------------------------------------
# derivative cost comparison: single-term complex chain vs stacked-real chain
# ---------------------------------------------------------------------------

class AnalyticChain:
    """Composite of elementwise analytic stages acting on an m-vector.

    Stage kinds: ("affine", a, b) computes a*z + b; ("square",) computes
    z**2; ("conj",) is deliberately non-analytic and only exists so that
    rejection can be exercised.
    """

    def __init__(self, m: int, stages: list[tuple]):
        self.m = m
        self.stages = stages

    @property
    def analytic(self) -> bool:
        return all(s[0] != "conj" for s in self.stages)

    def forward(self, x: np.ndarray) -> list[np.ndarray]:
        """Stage inputs, one per stage (last entry feeds the final stage)."""
        zs = [x]
        z = x
        for s in self.stages:
            if s[0] == "affine":
                z = s[1] * z + s[2]
            elif s[0] == "square":
                z = z * z
            elif s[0] == "conj":
                z = np.conj(z)
            else:
                raise NonAnalyticChainError(f"unknown stage {s[0]!r}")
            zs.append(z)
        return zs[:-1]

    def local_derivative(self, k: int, z_in: np.ndarray) -> np.ndarray:
        s = self.stages[k]
        if s[0] == "affine":
            return np.broadcast_to(s[1], z_in.shape).astype(_C)
        if s[0] == "square":
            return 2.0 * z_in
        raise NonAnalyticChainError("derivative of a non-analytic stage")


def make_analytic_chain(m: int, depth: int, rng: np.random.Generator) -> AnalyticChain:
    """Chain with ``depth`` derivative compositions (depth + 1 stages)."""
    stages: list[tuple] = []
    for k in range(depth + 1):
        if k % 2 == 1:
            stages.append(("square",))
        else:
            a = rng.standard_normal(m) + 1j * rng.standard_normal(m)
            b = rng.standard_normal(m) + 1j * rng.standard_normal(m)
            stages.append(("affine", a * 0.5, b * 0.1))
    return AnalyticChain(m, stages)


def opcount_compare(chain: AnalyticChain, m: int, x: np.ndarray | None = None):
    """Count scalar multiply-accumulates for both derivative routes.

    Route one composes the diagonal complex derivatives with the
    single-term chain rule (4 MACs per element per composition).  Route
    two stacks real and imaginary parts and composes 2x2 real Jacobian
    blocks (8 MACs per element per composition).  Returns
    (count_cd, count_iq, deriv_cd, deriv_iq) where the derivative vectors
    must agree for analytic chains.
    """
    if m != chain.m:
        raise ShapeMismatchError(f"opcount_compare: chain is over m={chain.m}, got m={m}")
    if not chain.analytic:
        raise NonAnalyticChainError("opcount_compare requires an analytic chain")
    if x is None:
        x = np.full(m, 0.3 + 0.2j, dtype=_C)
    stage_in = chain.forward(x)
    locs = [chain.local_derivative(k, stage_in[k]) for k in range(len(chain.stages))]

    count_cd = 0
    d = locs[0].copy()
    for loc in locs[1:]:
        for i in range(m):
            a, b = d[i].real, d[i].imag
            c, s = loc[i].real, loc[i].imag
            re = c * a - s * b
            im = c * b + s * a
            count_cd += 4
            d[i] = re + 1j * im

    count_iq = 0
    blocks = np.zeros((m, 2, 2))
    for i in range(m):
        c, s = locs[0][i].real, locs[0][i].imag
        blocks[i] = [[c, s], [-s, c]]
    for loc in locs[1:]:
        for i in range(m):
            c, s = loc[i].real, loc[i].imag
            jk = np.array([[c, s], [-s, c]])
            prod = np.zeros((2, 2))
            for r in range(2):
                for col in range(2):
                    prod[r, col] = jk[r, 0] * blocks[i][0, col] + jk[r, 1] * blocks[i][1, col]
                    count_iq += 2
            blocks[i] = prod
    d_iq = blocks[:, 0, 0] + 1j * blocks[:, 0, 1]
    return count_cd, count_iq, d, d_iq
