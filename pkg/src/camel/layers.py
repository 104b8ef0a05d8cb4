"""Complex-valued layers: convolution, fully connected, softmax, attention,
multi-head attention, normalization, activations, and the full recognition
network (embedding -> conv block -> attention block -> FC block -> head).

Each layer exists twice: a ``build_*`` function that records the layer onto
a tape (used by training), and a small eager wrapper with the public
CTensor signature (used by callers and by the numerical checkers).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ctensor import CTensor, ShapeMismatchError
from .wirtinger import (
    Tape,
    g_abs,
    g_expand_last,
    g_im,
    g_re,
    g_reduce_last,
    g_sum,
)

_C = np.complex128

LIFTS = ("abs", "re", "im")
ACTIVATIONS = ("crelu", "ctanh", "csigmoid")


class ConfigError(ValueError):
    """Raised for inconsistent architecture or layer configuration."""


@dataclass
class ArchConfig:
    """Architecture hyperparameters of the recognition network."""

    n_classes: int
    frame_len: int = 128
    conv_channels: int = 128
    conv_kernel: int = 3
    conv_stride: int = 1
    conv_blocks: int = 1
    attn_dim: int = 64
    n_heads: int = 8
    fc_hidden: int = 64
    fc_blocks: int = 1
    softmax_lift: str = "abs"
    activation: str = "crelu"
    norm_eps: float = 1e-5
    use_attention: bool = True
    real_input: bool = False

    def __post_init__(self):
        for name in ("n_classes", "frame_len", "conv_channels", "conv_kernel",
                     "conv_stride", "conv_blocks", "attn_dim", "n_heads",
                     "fc_hidden", "fc_blocks"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ArchConfig.{name} must be positive")
        if self.attn_dim % self.n_heads != 0:
            raise ConfigError(f"attn_dim {self.attn_dim} not divisible by n_heads {self.n_heads}")
        if self.softmax_lift not in LIFTS:
            raise ConfigError(f"softmax_lift must be one of {LIFTS}, got {self.softmax_lift!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.norm_eps < 0:
            raise ConfigError("norm_eps must be non-negative")

    @property
    def in_channels(self) -> int:
        return 2 if self.real_input else 1

    def conv_out_len(self) -> int:
        t = self.frame_len
        for _ in range(self.conv_blocks):
            if self.conv_kernel > t:
                raise ConfigError(f"conv kernel {self.conv_kernel} longer than input length {t}")
            t = (t - self.conv_kernel) // self.conv_stride + 1
        return t

    def feature_dim(self) -> int:
        width = self.attn_dim if self.use_attention else self.conv_channels
        return self.conv_out_len() * width


@dataclass
class MhaParams:
    """Projection matrices of multi-head attention.

    wq/wk/wv/wo are (d x d); column block k*(d/n_heads) .. (k+1)*(d/n_heads)
    of wq/wk/wv is head k's projection.
    """

    wq: CTensor
    wk: CTensor
    wv: CTensor
    wo: CTensor
    n_heads: int


@dataclass
class NormState:
    """Running statistics of one normalization layer (inference mode)."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def for_channels(cls, n: int, momentum: float = 0.1) -> "NormState":
        return cls(np.zeros(n, dtype=_C), np.ones(n, dtype=np.float64), momentum)

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        m = self.momentum
        self.mean = (1 - m) * self.mean + m * mean
        self.var = (1 - m) * self.var + m * var.real


# ---------------------------------------------------------------------------
# cached index maps
# ---------------------------------------------------------------------------

_IDX: dict[tuple, np.ndarray] = {}


def _cached(key, build):
    idx = _IDX.get(key)
    if idx is None:
        idx = build()
        _IDX[key] = idx
    return idx


def _conv_patch_idx(n: int, ci: int, t: int, k: int, stride: int):
    to = (t - k) // stride + 1

    def build():
        cc, kk = np.meshgrid(np.arange(ci), np.arange(k), indexing="ij")
        row_src = (cc * t + kk).reshape(-1)  # (ci*k,)
        nn, tt = np.meshgrid(np.arange(n), np.arange(to), indexing="ij")
        col_src = (nn * ci * t + tt * stride).reshape(-1)  # (n*to,)
        return (row_src[:, None] + col_src[None, :]).reshape(-1).astype(np.intp)

    return _cached(("convpatch", n, ci, t, k, stride), build), to


def _chanmajor_to_batch_idx(n: int, c: int, t: int) -> np.ndarray:
    # (c, n*t) -> (n, c, t)
    def build():
        nn, cc, tt = np.meshgrid(np.arange(n), np.arange(c), np.arange(t), indexing="ij")
        return (cc * n * t + nn * t + tt).reshape(-1).astype(np.intp)

    return _cached(("chan2batch", n, c, t), build)


def _timemajor_idx(n: int, c: int, t: int) -> np.ndarray:
    # (n, c, t) -> (n*t, c)
    def build():
        nn, tt, cc = np.meshgrid(np.arange(n), np.arange(t), np.arange(c), indexing="ij")
        return (nn * c * t + cc * t + tt).reshape(-1).astype(np.intp)

    return _cached(("timemajor", n, c, t), build)


def _tile_idx(d: int, n: int) -> np.ndarray:
    return _cached(("tile", d, n), lambda: np.tile(np.arange(d, dtype=np.intp), n))


def _head_slice_idx(d: int, dh: int, h: int) -> np.ndarray:
    # (d, d) -> column block h of width dh
    def build():
        rr, cc = np.meshgrid(np.arange(d), np.arange(dh), indexing="ij")
        return (rr * d + h * dh + cc).reshape(-1).astype(np.intp)

    return _cached(("headslice", d, dh, h), build)


def _head_merge_idx(n: int, l: int, d: int, dh: int, h: int) -> np.ndarray:
    # (n, l, dh) scattered into column block h of (n, l, d)
    def build():
        nn, ll, cc = np.meshgrid(np.arange(n), np.arange(l), np.arange(dh), indexing="ij")
        return ((nn * l + ll) * d + h * dh + cc).reshape(-1).astype(np.intp)

    return _cached(("headmerge", n, l, d, dh, h), build)


# ---------------------------------------------------------------------------
# graph builders
# ---------------------------------------------------------------------------

def build_lift(g: Tape, x: int, lift: str) -> int:
    if lift == "abs":
        return g_abs(g, x)
    if lift == "re":
        return g_re(g, x)
    if lift == "im":
        return g_im(g, x)
    raise ConfigError(f"unknown lift {lift!r}")


def build_softmax_last(g: Tape, x: int, lift: str) -> int:
    """Real softmax over the last axis of the lifted input.

    The row maximum is subtracted as a detached constant; softmax is shift
    invariant, so gradients are unaffected.
    """
    lifted = build_lift(g, x, lift)
    v = g.raw(lifted)
    shift = g.const(np.broadcast_to(v.real.max(axis=-1, keepdims=True), v.shape).copy())
    e = g.exp(g.sub(lifted, shift))
    denom = g_expand_last(g, g_reduce_last(g, e), v.shape[-1])
    return g.div(e, denom)


def build_log_softmax_last(g: Tape, x: int, lift: str) -> int:
    lifted = build_lift(g, x, lift)
    v = g.raw(lifted)
    shift = g.const(np.broadcast_to(v.real.max(axis=-1, keepdims=True), v.shape).copy())
    z = g.sub(lifted, shift)
    lse = g.log(g_reduce_last(g, g.exp(z)))
    return g.sub(z, g_expand_last(g, lse, v.shape[-1]))


def build_cconv1d(g: Tape, x3: int, a: int, b: int | None, stride: int = 1) -> int:
    """Valid 1-d complex convolution.

    x3: (N, C_in, T); a: (C_out, C_in, K); b: (C_out,) or None.
    Returns channel-major features (C_out, N*T_out).
    """
    n, ci, t = g.raw(x3).shape
    co, cia, k = g.raw(a).shape
    if cia != ci:
        raise ShapeMismatchError(f"cconv1d: input has {ci} channels, kernel expects {cia}")
    if k > t:
        raise ShapeMismatchError(f"cconv1d: kernel length {k} exceeds input length {t}")
    if stride < 1:
        raise ConfigError("cconv1d: stride must be >= 1")
    idx, to = _conv_patch_idx(n, ci, t, k, stride)
    patches = g.take(x3, idx, (ci * k, n * to))
    out = g.matmul(g.reshape(a, (co, ci * k)), patches)
    if b is not None:
        if g.raw(b).shape != (co,):
            raise ShapeMismatchError(f"cconv1d: bias shape {g.raw(b).shape} != ({co},)")
        out = g.add(out, g_expand_last(g, b, n * to))
    return out


def build_cfc(g: Tape, x2: int, w: int, b: int | None) -> int:
    """Linear map of row vectors: (N, d_in) @ (d_in, d_out) + bias."""
    n, din = g.raw(x2).shape
    win, dout = g.raw(w).shape
    if win != din:
        raise ShapeMismatchError(f"cfc: input dim {din} does not match weight rows {win}")
    out = g.matmul(x2, w)
    if b is not None:
        if g.raw(b).shape != (dout,):
            raise ShapeMismatchError(f"cfc: bias shape {g.raw(b).shape} != ({dout},)")
        out = g.add(out, g.take(b, _tile_idx(dout, n), (n, dout)))
    return out


def build_attention(g: Tape, q3: int, k3: int, v3: int, lift: str = "abs") -> tuple[int, int]:
    """Scaled dot-product attention over (N, L, d) stacks.

    Scores are Q K^T / sqrt(d); the softmax runs on the lifted (real)
    scores and the resulting real weights mix V.  Returns (output, weights).
    """
    nq, lq, d = g.raw(q3).shape
    nk, lk, dk = g.raw(k3).shape
    nv, lv, dv = g.raw(v3).shape
    if d != dk:
        raise ShapeMismatchError(f"attention: Q feature dim {d} != K feature dim {dk}")
    if lk != lv or nk != nv or nq != nk:
        raise ShapeMismatchError(
            f"attention: K length/batch {(nk, lk)} does not match V {(nv, lv)}"
        )
    scores = g.smul(g.bmm(q3, g.btranspose(k3)), 1.0 / np.sqrt(d))
    weights = build_softmax_last(g, scores, lift)
    return g.bmm(weights, v3), weights


def build_mha(g: Tape, q3: int, k3: int, v3: int, wq: int, wk: int, wv: int, wo: int,
              n_heads: int, lift: str = "abs") -> int:
    """Multi-head attention: per-head projections, attention, concat, W^O."""
    n, lq, d = g.raw(q3).shape
    if g.raw(wq).shape != (d, d) or g.raw(wk).shape != (d, d) or g.raw(wv).shape != (d, d):
        raise ShapeMismatchError("mha: projection matrices must be (d, d)")
    if d % n_heads != 0:
        raise ShapeMismatchError(f"mha: feature dim {d} not divisible by n_heads {n_heads}")
    dh = d // n_heads
    lk = g.raw(k3).shape[1]

    q2 = g.reshape(q3, (n * lq, d))
    k2 = g.reshape(k3, (n * lk, d))
    v2 = g.reshape(v3, (n * lk, d))
    merged = None
    for h in range(n_heads):
        sl = _head_slice_idx(d, dh, h)
        wq_h = g.take(wq, sl, (d, dh))
        wk_h = g.take(wk, sl, (d, dh))
        wv_h = g.take(wv, sl, (d, dh))
        qh = g.reshape(g.matmul(q2, wq_h), (n, lq, dh))
        kh = g.reshape(g.matmul(k2, wk_h), (n, lk, dh))
        vh = g.reshape(g.matmul(v2, wv_h), (n, lk, dh))
        out_h, _ = build_attention(g, qh, kh, vh, lift)
        part = g.scatter(out_h, _head_merge_idx(n, lq, d, dh, h), (n, lq, d))
        merged = part if merged is None else g.add(merged, part)
    return g.reshape(g.matmul(g.reshape(merged, (n * lq, d)), wo), (n, lq, d))


def build_norm(g: Tape, x2: int, gamma: int, kappa: int, eps: float,
               state: NormState | None = None, training: bool = True,
               update_state: bool = False) -> int:
    """Per-channel normalization of (C, M): subtract the complex mean,
    divide by sqrt(E|x - mean|^2 + eps), scale by gamma, shift by kappa."""
    if eps < 0:
        raise ConfigError(f"norm eps must be >= 0, got {eps}")
    c, m = g.raw(x2).shape
    if training:
        mu = g.smul(g_reduce_last(g, x2), 1.0 / m)
        xc = g.sub(x2, g_expand_last(g, mu, m))
        var = g.smul(g_reduce_last(g, g.mul(xc, g.conj(xc))), 1.0 / m)
        if update_state and state is not None:
            state.update(g.raw(mu).copy(), g.raw(var).copy())
    else:
        if state is None:
            raise ConfigError("inference-mode norm needs running statistics")
        mu = g.const(state.mean)
        xc = g.sub(x2, g_expand_last(g, mu, m))
        var = g.const(state.var.astype(_C))
    denom = g.sqrt(g.add(var, g.const(np.full(c, eps, dtype=_C))))
    xn = g.div(xc, g_expand_last(g, denom, m))
    return g.add(g.mul(xn, g_expand_last(g, gamma, m)),
                 g_expand_last(g, kappa, m))


def build_act(g: Tape, x: int, kind: str) -> int:
    """Activation applied independently to real and imaginary parts."""
    if kind == "crelu":
        return g.crelu(x)
    if kind not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {kind!r}")
    shape = g.raw(x).shape
    one = g.const(np.ones(shape, dtype=_C))

    def real_af(u: int) -> int:
        if kind == "csigmoid":
            return g.div(one, g.add(one, g.exp(g.neg(u))))
        e = g.exp(g.smul(u, 2.0))  # tanh(u) = (e^{2u} - 1) / (e^{2u} + 1)
        return g.div(g.sub(e, one), g.add(e, one))

    return g.add(real_af(g_re(g, x)), g.smul(real_af(g_im(g, x)), 1j))


def build_cross_entropy(g: Tape, logprobs: int, labels: Sequence[int]) -> int:
    """Mean negative log-likelihood of integer labels under (N, C) log-probs."""
    n, c = g.raw(logprobs).shape
    onehot = np.zeros((n, c), dtype=_C)
    onehot[np.arange(n), list(labels)] = 1.0
    picked = g_sum(g, g.mul(logprobs, g.const(onehot)))
    return g.smul(picked, -1.0 / n)


# ---------------------------------------------------------------------------
# the recognition network
# ---------------------------------------------------------------------------

def frames_to_input(frames: Sequence[CTensor], arch: ArchConfig) -> np.ndarray:
    """Stack frames into the network input block (N, C_in, frame_len).

    Complex mode feeds one complex channel; real mode feeds two real
    channels (real and imaginary parts) so parameter counts stay
    comparable between the two variants.
    """
    n = len(frames)
    out = np.zeros((n, arch.in_channels, arch.frame_len), dtype=_C)
    for i, f in enumerate(frames):
        s = f.numpy().reshape(-1)
        if s.size != arch.frame_len:
            raise ShapeMismatchError(f"frame {i} has {s.size} samples, expected {arch.frame_len}")
        if arch.real_input:
            out[i, 0] = s.real
            out[i, 1] = s.imag
        else:
            out[i, 0] = s
    return out


def build_network(g: Tape, x3: int, params: Mapping[str, int], arch: ArchConfig,
                  norm_states: Mapping[str, NormState] | None = None,
                  training: bool = True, update_states: bool = False) -> int:
    """Record the full network; returns (N, n_classes) real log-probs.

    ``params`` maps parameter names to tape node ids (see ``init_params``
    for the naming scheme).
    """
    n = g.raw(x3).shape[0]
    t = arch.frame_len
    c = arch.conv_channels

    def norm_state(name: str) -> NormState | None:
        return None if norm_states is None else norm_states.get(name)

    # embedding block: pointwise conv lifting input channels to C
    feats = build_cconv1d(g, x3, params["embed.A"], params["embed.b"], stride=1)

    # conv blocks: conv -> norm -> activation, channel-major throughout
    for i in range(arch.conv_blocks):
        name = f"conv{i}"
        x3 = g.take(feats, _chanmajor_to_batch_idx(n, c, t), (n, c, t))
        feats = build_cconv1d(g, x3, params[f"{name}.A"], params[f"{name}.b"], stride=arch.conv_stride)
        t = (t - arch.conv_kernel) // arch.conv_stride + 1
        feats = build_norm(g, feats, params[f"{name}.gamma"], params[f"{name}.kappa"],
                           arch.norm_eps, norm_state(name), training, update_states)
        feats = build_act(g, feats, arch.activation)

    x3 = g.take(feats, _chanmajor_to_batch_idx(n, c, t), (n, c, t))
    rows = g.take(x3, _timemajor_idx(n, c, t), (n * t, c))

    if arch.use_attention:
        d = arch.attn_dim
        rows = build_cfc(g, rows, params["attn_in.W"], params["attn_in.b"])
        seq = g.reshape(rows, (n, t, d))
        attn = build_mha(g, seq, seq, seq,
                         params["attn.wq"], params["attn.wk"], params["attn.wv"],
                         params["attn.wo"], arch.n_heads, arch.softmax_lift)
        rows = g.reshape(attn, (n * t, d))
        width = d
    else:
        width = c

    h = g.reshape(rows, (n, t * width))
    for i in range(arch.fc_blocks):
        name = f"fc{i}"
        h = build_cfc(g, h, params[f"{name}.W"], params[f"{name}.b"])
        hc = g.transpose(h)
        hc = build_norm(g, hc, params[f"{name}.gamma"], params[f"{name}.kappa"],
                        arch.norm_eps, norm_state(name), training, update_states)
        h = g.transpose(hc)
        h = build_act(g, h, arch.activation)

    logits = build_cfc(g, h, params["head.W"], params["head.b"])
    return build_log_softmax_last(g, logits, arch.softmax_lift)


def init_params(arch: ArchConfig, rng: np.random.Generator) -> dict[str, CTensor]:
    """Random parameters: real and imaginary parts drawn independently from
    a zero-mean uniform sized so that E|w|^2 = 1/fan_in.  Real-input mode
    keeps imaginary parts at zero, doubling the per-part variance to
    preserve E|w|^2.

    Biases are drawn the same way (not zeroed): the relu-style activation
    zeroes whole feature vectors with positive probability, and zero
    biases would then park attention scores exactly at the modulus kink,
    where the gradient map is discontinuous."""

    def weight(shape: tuple[int, ...], fan_in: int) -> CTensor:
        if arch.real_input:
            a = np.sqrt(3.0 / fan_in)
            w = rng.uniform(-a, a, size=shape).astype(np.float64)
            return CTensor(w.astype(_C))
        a = np.sqrt(3.0 / (2.0 * fan_in))
        w = rng.uniform(-a, a, size=shape) + 1j * rng.uniform(-a, a, size=shape)
        return CTensor(w)

    c = arch.conv_channels
    k = arch.conv_kernel
    params: dict[str, CTensor] = {}
    params["embed.A"] = weight((c, arch.in_channels, 1), arch.in_channels)
    params["embed.b"] = weight((c,), arch.in_channels)
    for i in range(arch.conv_blocks):
        params[f"conv{i}.A"] = weight((c, c, k), c * k)
        params[f"conv{i}.b"] = weight((c,), c * k)
        params[f"conv{i}.gamma"] = CTensor.full((c,), 1.0)
        params[f"conv{i}.kappa"] = CTensor.zeros((c,))
    if arch.use_attention:
        d = arch.attn_dim
        params["attn_in.W"] = weight((c, d), c)
        params["attn_in.b"] = weight((d,), c)
        for nm in ("wq", "wk", "wv", "wo"):
            params[f"attn.{nm}"] = weight((d, d), d)
    dim = arch.feature_dim()
    for i in range(arch.fc_blocks):
        out = arch.fc_hidden
        params[f"fc{i}.W"] = weight((dim, out), dim)
        params[f"fc{i}.b"] = weight((out,), dim)
        params[f"fc{i}.gamma"] = CTensor.full((out,), 1.0)
        params[f"fc{i}.kappa"] = CTensor.zeros((out,))
        dim = out
    params["head.W"] = weight((dim, arch.n_classes), dim)
    params["head.b"] = weight((arch.n_classes,), dim)
    return params


def param_count(params: Mapping[str, CTensor]) -> int:
    return sum(t.size for t in params.values())


def norm_layer_names(arch: ArchConfig) -> list[str]:
    return [f"conv{i}" for i in range(arch.conv_blocks)] + [f"fc{i}" for i in range(arch.fc_blocks)]


def fresh_norm_states(arch: ArchConfig) -> dict[str, NormState]:
    states = {}
    for i in range(arch.conv_blocks):
        states[f"conv{i}"] = NormState.for_channels(arch.conv_channels)
    for i in range(arch.fc_blocks):
        states[f"fc{i}"] = NormState.for_channels(arch.fc_hidden)
    return states


# ---------------------------------------------------------------------------
# eager wrappers (public layer signatures)
# ---------------------------------------------------------------------------

def _leaf(g: Tape, t: CTensor) -> int:
    return g.leaf(t)


def cconv1d(x: CTensor, a: CTensor, b: CTensor, stride: int = 1) -> CTensor:
    """Valid complex convolution of (C_in, T) with kernels (C_out, C_in, K)."""
    if x.rank != 2 or a.rank != 3:
        raise ShapeMismatchError(f"cconv1d: need x rank-2 and A rank-3, got {x.rank} and {a.rank}")
    g = Tape()
    ci, t = x.shape
    x3 = g.reshape(_leaf(g, x), (1, ci, t))
    out = build_cconv1d(g, x3, _leaf(g, a), None if b is None else _leaf(g, b), stride)
    return g.value(out)


def cfc(x: CTensor, w: CTensor, b: CTensor) -> CTensor:
    """Complex linear transform of a vector: out = W^T x + b."""
    if x.rank != 1 or w.rank != 2:
        raise ShapeMismatchError(f"cfc: need x rank-1 and W rank-2, got {x.rank} and {w.rank}")
    g = Tape()
    x2 = g.reshape(_leaf(g, x), (1, x.size))
    out = build_cfc(g, x2, _leaf(g, w), None if b is None else _leaf(g, b))
    return g.value(out).reshape((w.shape[1],))


def c_softmax(x: CTensor, lift: str = "abs") -> CTensor:
    """Real softmax of the lifted input; rows for rank-2, whole vector for rank-1."""
    if x.size == 0:
        raise ShapeMismatchError("c_softmax: empty input")
    if lift not in LIFTS:
        raise ConfigError(f"c_softmax: lift must be one of {LIFTS}, got {lift!r}")
    if x.rank not in (1, 2):
        raise ShapeMismatchError(f"c_softmax: need rank-1 or rank-2 input, got rank {x.rank}")
    g = Tape()
    return g.value(build_softmax_last(g, _leaf(g, x), lift))


def c_attention(q: CTensor, k: CTensor, v: CTensor, lift: str = "abs",
                return_weights: bool = False):
    """Single-sequence attention over rank-2 Q (Lq, d), K (Lk, d), V (Lk, dv)."""
    if q.rank != 2 or k.rank != 2 or v.rank != 2:
        raise ShapeMismatchError("c_attention: Q, K, V must be rank-2")
    g = Tape()
    q3 = g.reshape(_leaf(g, q), (1,) + q.shape)
    k3 = g.reshape(_leaf(g, k), (1,) + k.shape)
    v3 = g.reshape(_leaf(g, v), (1,) + v.shape)
    out, w = build_attention(g, q3, k3, v3, lift)
    out_t = g.value(out).reshape((q.shape[0], v.shape[1]))
    if return_weights:
        return out_t, g.value(w).reshape((q.shape[0], k.shape[0]))
    return out_t


def c_mha(q: CTensor, k: CTensor, v: CTensor, params: MhaParams, lift: str = "abs") -> CTensor:
    """Multi-head attention over rank-2 Q, K, V of feature width d."""
    d = q.shape[1]
    if d % params.n_heads != 0:
        raise ShapeMismatchError(f"c_mha: feature dim {d} not divisible by {params.n_heads} heads")
    g = Tape()
    q3 = g.reshape(_leaf(g, q), (1,) + q.shape)
    k3 = g.reshape(_leaf(g, k), (1,) + k.shape)
    v3 = g.reshape(_leaf(g, v), (1,) + v.shape)
    out = build_mha(g, q3, k3, v3, _leaf(g, params.wq), _leaf(g, params.wk),
                    _leaf(g, params.wv), _leaf(g, params.wo), params.n_heads, lift)
    return g.value(out).reshape((q.shape[0], d))


def c_norm(x: CTensor, gamma: CTensor, kappa: CTensor, eps: float = 1e-5,
           state: NormState | None = None, training: bool = True,
           update_state: bool = False) -> CTensor:
    """Per-channel complex normalization of (C, M); rank-1 input is one channel."""
    g = Tape()
    x2 = _leaf(g, x)
    squeeze = False
    if x.rank == 1:
        x2 = g.reshape(x2, (1, x.size))
        squeeze = True
    elif x.rank != 2:
        raise ShapeMismatchError(f"c_norm: need rank-1 or rank-2 input, got rank {x.rank}")
    c = g.raw(x2).shape[0]
    ga = _leaf(g, gamma if gamma.rank == 1 else gamma.reshape((1,)))
    ka = _leaf(g, kappa if kappa.rank == 1 else kappa.reshape((1,)))
    if g.raw(ga).shape != (c,) or g.raw(ka).shape != (c,):
        raise ShapeMismatchError(f"c_norm: gamma/kappa must have {c} channels")
    out = build_norm(g, x2, ga, ka, eps, state, training, update_state)
    res = g.value(out)
    return res.reshape((x.size,)) if squeeze else res


def c_act(x: CTensor, kind: str = "crelu") -> CTensor:
    """Activation applied to real and imaginary parts independently."""
    g = Tape()
    return g.value(build_act(g, _leaf(g, x), kind))


def camel_forward(frame: CTensor, params: Mapping[str, CTensor], arch: ArchConfig,
                  norm_states: Mapping[str, NormState] | None = None) -> CTensor:
    """Log class probabilities of one frame shaped (1, frame_len).

    Without running statistics the normalization layers fall back to the
    frame's own statistics (batch of one; the FC norm then degenerates to
    its shift parameter).  Pass ``norm_states`` for calibrated inference.
    """
    g = Tape()
    x3 = g.const(frames_to_input([frame], arch))
    leaves = {name: g.leaf(t) for name, t in params.items()}
    training = norm_states is None
    lp = build_network(g, x3, leaves, arch, norm_states, training=training)
    return g.value(lp).reshape((arch.n_classes,))
