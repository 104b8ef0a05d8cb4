"""Synthetic modulated-signal generation, AWGN channel, episodic sampling,
and a binary frame-file format (with a loader for converted external data).

All stochastic operations take an explicit numpy Generator so every pool,
episode, and file is bit-reproducible from a seed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctensor import CTensor
from .meta import Episode

_C = np.complex128

CSIG_MAGIC = b"CSIG"
CSIG_VERSION = 1


class FrameFormatError(ValueError):
    """Base class for frame-file format problems."""


class BadMagicError(FrameFormatError):
    pass


class TruncatedFileError(FrameFormatError):
    pass


class UnknownSchemeError(FrameFormatError):
    pass


class ModulationError(ValueError):
    """Raised for unsupported schemes or insufficient bits."""


@dataclass(frozen=True)
class SchemeSpec:
    """One digital modulation scheme."""

    id: int
    name: str
    bits_per_symbol: int
    kind: str  # "constellation" or "cpm"


def _psk_points(order: int, offset: float = 0.0) -> np.ndarray:
    k = np.arange(order)
    return np.exp(1j * (2 * np.pi * k / order + offset))


def _normalize(points: np.ndarray) -> np.ndarray:
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


# Constellations are unit average power by construction.
_CONSTELLATIONS: dict[str, np.ndarray] = {
    "BPSK": np.array([1.0 + 0.0j, -1.0 + 0.0j]),
    "QPSK": _normalize(np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])),
    "8PSK": _psk_points(8),
    "PAM4": _normalize(np.array([-3.0, -1.0, 1.0, 3.0], dtype=_C)),
    "QAM16": _normalize(np.array([(re + 1j * im) for re in (-3, -1, 1, 3) for im in (-3, -1, 1, 3)])),
}

_CPM_SCHEMES = ("CPFSK", "GFSK")

CPFSK_MOD_INDEX = 0.5
GFSK_BT = 0.35
GFSK_SPAN = 2  # Gaussian pulse support in symbols on each side

SCHEME_NAMES: tuple[str, ...] = tuple(sorted(_CONSTELLATIONS)) + _CPM_SCHEMES

SCHEMES: dict[str, SchemeSpec] = {}
for _i, _name in enumerate(SCHEME_NAMES):
    if _name in _CONSTELLATIONS:
        _bps = int(round(math.log2(len(_CONSTELLATIONS[_name]))))
        SCHEMES[_name] = SchemeSpec(_i, _name, _bps, "constellation")
    else:
        SCHEMES[_name] = SchemeSpec(_i, _name, 1, "cpm")


@dataclass(frozen=True)
class SignalFrame:
    """One frame of complex samples with its modulation label and SNR tag."""

    samples: CTensor
    label: int
    snr_db: float

    def __post_init__(self):
        if self.samples.rank != 1:
            raise ModulationError(f"frame samples must be rank-1, got rank {self.samples.rank}")


@dataclass
class FramePool:
    """Frames plus the scheme-name table their labels index into."""

    schemes: list[str]
    frames: list[SignalFrame] = field(default_factory=list)

    def by_label(self, label: int) -> list[SignalFrame]:
        return [f for f in self.frames if f.label == label]

    def filter_snr(self, lo: float = -math.inf, hi: float = math.inf) -> "FramePool":
        return FramePool(self.schemes, [f for f in self.frames if lo <= f.snr_db <= hi])


# ---------------------------------------------------------------------------
# modulation
# ---------------------------------------------------------------------------

def _gfsk_pulse(sps: int) -> np.ndarray:
    """Gaussian-filtered rectangular frequency pulse, unit area."""
    sigma = math.sqrt(math.log(2.0)) / (2.0 * math.pi * GFSK_BT)  # in symbols
    t = (np.arange(2 * GFSK_SPAN * sps + 1) - GFSK_SPAN * sps) / sps
    gauss = np.exp(-0.5 * (t / sigma) ** 2)
    rect = np.ones(sps)
    pulse = np.convolve(gauss, rect)
    return pulse / pulse.sum()


def modulate(bits: Sequence[int] | None, scheme: str, sps: int = 8,
             frame_len: int = 128, rng: np.random.Generator | None = None) -> SignalFrame:
    """Map bits onto one frame of complex samples at unit average power.

    Constellation schemes repeat each symbol ``sps`` times (rectangular
    pulse); continuous-phase schemes integrate a frequency pulse so the
    envelope stays on the unit circle.  When ``bits`` is None they are
    drawn from ``rng``.
    """
    spec = SCHEMES.get(scheme)
    if spec is None:
        raise ModulationError(f"unsupported scheme {scheme!r}; known: {', '.join(SCHEME_NAMES)}")
    if frame_len % sps != 0:
        raise ModulationError(f"frame_len {frame_len} must be a multiple of sps {sps}")
    n_sym = frame_len // sps
    need = n_sym * spec.bits_per_symbol
    if bits is None:
        if rng is None:
            raise ModulationError("modulate needs bits or an rng to draw them")
        bits = rng.integers(0, 2, size=need)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size < need:
        raise ModulationError(f"{scheme} frame needs {need} bits, got {bits.size}")
    bits = bits[:need]

    if spec.kind == "constellation":
        points = _CONSTELLATIONS[scheme]
        weights = 1 << np.arange(spec.bits_per_symbol)[::-1]
        symbols = points[bits.reshape(n_sym, spec.bits_per_symbol) @ weights]
        samples = np.repeat(symbols, sps)
    else:
        nrz = 1.0 - 2.0 * bits.astype(np.float64)  # bit 0 -> +1, bit 1 -> -1
        if scheme == "CPFSK":
            freq = np.repeat(nrz / sps, sps)
        else:
            pulse = _gfsk_pulse(sps)
            impulses = np.zeros(frame_len)
            impulses[::sps] = nrz
            freq = np.convolve(impulses, pulse)[: frame_len]
        phase = np.pi * CPFSK_MOD_INDEX * np.cumsum(freq)
        samples = np.exp(1j * phase)

    return SignalFrame(CTensor(samples.astype(_C)), spec.id, math.inf)


def add_awgn(frame: SignalFrame, snr_db: float, rng: np.random.Generator) -> SignalFrame:
    """Add circular complex Gaussian noise with per-sample variance
    10^(-snr_db/10) (the frame is unit power) and record the SNR tag."""
    n = frame.samples.size
    sigma2 = 10.0 ** (-snr_db / 10.0)
    scale = math.sqrt(sigma2 / 2.0)
    noise = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return SignalFrame(CTensor._wrap(frame.samples.numpy() + noise), frame.label, float(snr_db))


def generate_pool(schemes: Sequence[str], snr_grid: Sequence[float], frames_per_cell: int,
                  frame_len: int, sps: int, rng: np.random.Generator) -> FramePool:
    """Pool with ``frames_per_cell`` noisy frames per (scheme, SNR) cell."""
    for s in schemes:
        if s not in SCHEMES:
            raise ModulationError(f"unsupported scheme {s!r}")
    pool = FramePool(schemes=list(schemes))
    for name in schemes:
        for snr in snr_grid:
            for _ in range(frames_per_cell):
                clean = modulate(None, name, sps, frame_len, rng)
                noisy = add_awgn(clean, snr, rng)
                pool.frames.append(SignalFrame(noisy.samples, pool.schemes.index(name), noisy.snr_db))
    return pool


# ---------------------------------------------------------------------------
# episodic sampling
# ---------------------------------------------------------------------------

def sample_episode(pool: FramePool, n_way: int, k_shot: int, q_size: int,
                   rng: np.random.Generator,
                   snr_range: tuple[float, float] | None = None) -> Episode:
    """Draw n_way distinct schemes and disjoint support/query frames;
    labels are remapped to 0..n_way-1 in drawn order."""
    frames = pool.frames
    if snr_range is not None:
        lo, hi = snr_range
        frames = [f for f in frames if lo <= f.snr_db <= hi]
    per_label: dict[int, list[SignalFrame]] = {}
    for f in frames:
        per_label.setdefault(f.label, []).append(f)
    eligible = [lab for lab, fs in per_label.items() if len(fs) >= k_shot + q_size]
    if len(eligible) < n_way:
        raise ValueError(f"pool has {len(eligible)} schemes with >= {k_shot + q_size} frames, "
                         f"needs {n_way}")
    chosen = rng.choice(np.array(sorted(eligible)), size=n_way, replace=False)
    support, query = [], []
    for new_label, lab in enumerate(chosen):
        fs = per_label[int(lab)]
        idx = rng.choice(len(fs), size=k_shot + q_size, replace=False)
        for i in idx[:k_shot]:
            support.append((fs[int(i)].samples, new_label))
        for i in idx[k_shot:]:
            query.append((fs[int(i)].samples, new_label))
    return Episode(tuple(support), tuple(query), n_way=n_way, k_shot=k_shot)


def episode_stream(pool_or_cfg, n_way: int, k_shot: int, q_size: int,
                   rng: np.random.Generator, snr_range: tuple[float, float] | None = None):
    """Infinite iterator of episodes sampled from a pool."""
    while True:
        yield sample_episode(pool_or_cfg, n_way, k_shot, q_size, rng, snr_range)


def scenario_split(pool: FramePool, kind: str, rng: np.random.Generator,
                   p_count: int = 5) -> tuple[FramePool, FramePool]:
    """The three ablation splits.

    snr_ge0: frames with SNR >= 0, 75% train / 25% test.
    snr_eq0: frames with SNR == 0, 75% train / 25% test.
    p_o:     choose ``p_count`` prediction schemes P (SNR >= 0 frames);
             train on all other-scheme frames plus 5% of P, test on the
             remaining 95% of P.
    """
    if kind in ("snr_ge0", "snr_eq0"):
        frames = [f for f in pool.frames
                  if (f.snr_db >= 0 if kind == "snr_ge0" else f.snr_db == 0)]
        if not frames:
            raise ValueError(f"pool has no frames for scenario {kind}")
        order = rng.permutation(len(frames))
        n_train = int(round(0.75 * len(frames)))
        train = [frames[i] for i in order[:n_train]]
        test = [frames[i] for i in order[n_train:]]
        return FramePool(pool.schemes, train), FramePool(pool.schemes, test)
    if kind == "p_o":
        labels = sorted({f.label for f in pool.frames})
        if len(labels) <= p_count:
            raise ValueError(f"p_o split needs more than {p_count} schemes, pool has {len(labels)}")
        p_set = set(int(x) for x in rng.choice(np.array(labels), size=p_count, replace=False))
        keep = [f for f in pool.frames if f.snr_db >= 0]
        p_frames = [f for f in keep if f.label in p_set]
        o_frames = [f for f in keep if f.label not in p_set]
        order = rng.permutation(len(p_frames))
        n_train_p = int(round(0.05 * len(p_frames)))
        train = o_frames + [p_frames[i] for i in order[:n_train_p]]
        test = [p_frames[i] for i in order[n_train_p:]]
        return FramePool(pool.schemes, train), FramePool(pool.schemes, test)
    raise ValueError(f"unknown scenario {kind!r}; choose snr_ge0, snr_eq0, or p_o")


# ---------------------------------------------------------------------------
# frame file format
# ---------------------------------------------------------------------------
#
# Little-endian layout:
#   magic "CSIG", version u32, n_schemes u32,
#   per scheme: name length u16, UTF-8 name,
#   n_frames u64,
#   per frame: scheme_id u32, snr_db f32, frame_len u32,
#              frame_len * (f32 I, f32 Q).

def save_frames(path: str, pool: FramePool) -> None:
    with open(path, "wb") as fh:
        fh.write(CSIG_MAGIC)
        fh.write(struct.pack("<II", CSIG_VERSION, len(pool.schemes)))
        for name in pool.schemes:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<Q", len(pool.frames)))
        for f in pool.frames:
            s = f.samples.numpy()
            fh.write(struct.pack("<IfI", f.label, np.float32(f.snr_db), s.size))
            iq = np.empty(2 * s.size, dtype="<f4")
            iq[0::2] = s.real.astype(np.float32)
            iq[1::2] = s.imag.astype(np.float32)
            fh.write(iq.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise TruncatedFileError(f"frame file ended while reading {what}")
    return raw


def load_frames(path: str) -> FramePool:
    """Load a frame file; I/Q float pairs become complex samples.

    Raises :class:`BadMagicError`, :class:`TruncatedFileError`, or
    :class:`UnknownSchemeError` on malformed input.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CSIG_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {CSIG_MAGIC!r}")
        version, n_schemes = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != CSIG_VERSION:
            raise FrameFormatError(f"unsupported frame file version {version}")
        schemes = []
        for _ in range(n_schemes):
            (ln,) = struct.unpack("<H", _read_exact(fh, 2, "scheme name length"))
            name = _read_exact(fh, ln, "scheme name").decode("utf-8")
            if name not in SCHEMES:
                raise UnknownSchemeError(f"unknown scheme name {name!r} in frame file")
            schemes.append(name)
        (n_frames,) = struct.unpack("<Q", _read_exact(fh, 8, "frame count"))
        pool = FramePool(schemes=schemes)
        for k in range(n_frames):
            label, snr, flen = struct.unpack("<IfI", _read_exact(fh, 12, f"frame {k} header"))
            if label >= len(schemes):
                raise FrameFormatError(f"frame {k} references scheme id {label} "
                                       f"outside the {len(schemes)}-entry table")
            iq = np.frombuffer(_read_exact(fh, 8 * flen, f"frame {k} samples"), dtype="<f4")
            samples = iq[0::2].astype(np.float64) + 1j * iq[1::2].astype(np.float64)
            pool.frames.append(SignalFrame(CTensor(samples), int(label), float(snr)))
        return pool
