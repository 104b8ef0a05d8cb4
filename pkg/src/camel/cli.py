"""Command-line surface: numerical validation commands, data generation,
training, and evaluation, plus the run-config and checkpoint formats.

Commands (see README for the config key reference):

    camel gradcheck     finite-difference oracle table over all primitives
    camel toychain      chain-rule comparison on the conjugating toy map
    camel bench-lemma1  derivative cost of the two differentiation routes
    camel gen           write a synthetic frame file
    camel train         episodic training with checkpoints and metrics CSV
    camel eval          fine-tune/classify held-out episodes from a checkpoint

Exit codes: 0 success, 1 validation failure, 2 divergence, 3 I/O or
configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import struct
import sys
from dataclasses import dataclass, field

import numpy as np

from .ctensor import CTensor
from .gradcheck import default_cases, run_suite
from .layers import ArchConfig, init_params
from .meta import (
    AdaptiveBetaConfig,
    DivergenceError,
    HistoryRow,
    MetaConfig,
    ParamSet,
    TrainState,
    evaluate,
    train_camel,
)
from .signals import (
    FrameFormatError,
    FramePool,
    episode_stream,
    generate_pool,
    load_frames,
    sample_episode,
    save_frames,
    scenario_split,
)
from .wirtinger import (
    Tape,
    backward_graph,
    g_abs,
    make_analytic_chain,
    opcount_compare,
)

_C = np.complex128

CAML_MAGIC = b"CAML"
CAML_VERSION = 1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ArchMismatchError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


@dataclass
class DataConfig:
    """Episode-source settings: either a frame file or on-the-fly synthesis."""

    schemes: list[str] = field(default_factory=lambda: ["BPSK", "QPSK", "8PSK", "PAM4",
                                                        "QAM16", "CPFSK", "GFSK"])
    snr_lo: float = 10.0
    snr_hi: float = 18.0
    snr_step: float = 2.0
    frames_per_cell: int = 40
    sps: int = 4
    frames: str | None = None
    scenario: str | None = None
    eval_episodes: int = 200

    def snr_grid(self) -> list[float]:
        if self.snr_step <= 0:
            raise ConfigError("snr_step must be positive")
        grid = []
        snr = self.snr_lo
        while snr <= self.snr_hi + 1e-9:
            grid.append(round(snr, 9))
            snr += self.snr_step
        return grid


@dataclass
class RunConfig:
    arch: ArchConfig
    meta: MetaConfig
    data: DataConfig
    seed: int = 0
    explicit: set = field(default_factory=set)


_ARCH_FIELDS = {f.name: f.type for f in dataclasses.fields(ArchConfig)}
_META_FIELDS = {f.name: f.type for f in dataclasses.fields(MetaConfig)
                if f.name not in ("adaptive_beta", "seed")}
_DATA_FIELDS = {f.name: f.type for f in dataclasses.fields(DataConfig)}
_ADAPTIVE_KEYS = ("adaptive_grad_lipschitz", "adaptive_hess_lipschitz",
                  "adaptive_probe_tasks", "adaptive_probe_batch")


def _coerce(key: str, ftype: str, value: str):
    t = str(ftype)
    try:
        if "bool" in t:
            return _parse_bool(value)
        if "int" in t:
            return int(value)
        if "float" in t:
            return float(value)
        if "list" in t:
            return [s.strip() for s in value.split(",") if s.strip()]
        if "| None" in t or "Optional" in t:
            return value or None
        return value
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from exc


def parse_config(lines, source: str = "<config>") -> RunConfig:
    """Parse key=value lines; '#' starts a comment, blank lines are skipped.
    Unknown keys are errors naming the key and line."""
    arch_kw: dict = {"n_classes": 5}
    meta_kw: dict = {}
    data_kw: dict = {}
    adaptive_kw: dict = {}
    seed = 0
    explicit: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        explicit.add(key)
        if key == "seed":
            seed = int(value)
        elif key in _ARCH_FIELDS:
            arch_kw[key] = _coerce(key, _ARCH_FIELDS[key], value)
        elif key in _META_FIELDS:
            meta_kw[key] = _coerce(key, _META_FIELDS[key], value)
        elif key in _DATA_FIELDS:
            data_kw[key] = _coerce(key, _DATA_FIELDS[key], value)
        elif key in _ADAPTIVE_KEYS:
            adaptive_kw[key.removeprefix("adaptive_")] = float(value) if "lipschitz" in key else int(value)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    try:
        arch = ArchConfig(**arch_kw)
        if adaptive_kw:
            if "grad_lipschitz" not in adaptive_kw:
                raise ConfigError("adaptive step size needs adaptive_grad_lipschitz")
            meta_kw["adaptive_beta"] = AdaptiveBetaConfig(
                grad_lipschitz=adaptive_kw["grad_lipschitz"],
                hess_lipschitz=adaptive_kw.get("hess_lipschitz", 0.0),
                probe_tasks=int(adaptive_kw.get("probe_tasks", 1)),
                probe_batch=int(adaptive_kw.get("probe_batch", 0)),
            )
        meta = MetaConfig(seed=seed, **meta_kw)
        data = DataConfig(**data_kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return RunConfig(arch=arch, meta=meta, data=data, seed=seed, explicit=explicit)


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    lines: list[str] = []
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
        source = path
    else:
        source = "<defaults>"
    for i, ov in enumerate(overrides or []):
        lines.append(ov + "\n")
    return parse_config(lines, source)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    arch: ArchConfig
    theta: ParamSet
    iteration: int
    rng_state: dict
    history: list[HistoryRow]


def _arch_to_lines(arch: ArchConfig) -> str:
    out = []
    for f in dataclasses.fields(ArchConfig):
        v = getattr(arch, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        out.append(f"{f.name}={s}")
    return "\n".join(out)


def _arch_from_lines(text: str) -> ArchConfig:
    kw = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        if key not in _ARCH_FIELDS:
            raise CheckpointError(f"checkpoint header has unknown architecture key {key!r}")
        kw[key] = _coerce(key, _ARCH_FIELDS[key], value)
    return ArchConfig(**kw)


def _rng_state_to_json(state: dict) -> str:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__nd__": obj.dtype.str, "data": [int(x) for x in obj.ravel()]}
        if isinstance(obj, (np.integer,)):
            return int(obj)
        return obj

    return json.dumps(clean(state), sort_keys=True)


def _rng_state_from_json(text: str) -> dict:
    def restore(obj):
        if isinstance(obj, dict):
            if "__nd__" in obj:
                return np.array(obj["data"], dtype=np.dtype(obj["__nd__"]))
            return {k: restore(v) for k, v in obj.items()}
        return obj

    return restore(json.loads(text))


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    header = (_arch_to_lines(ckpt.arch)
              + f"\niteration={ckpt.iteration}"
              + f"\nrng_state={_rng_state_to_json(ckpt.rng_state)}\n")
    hist_lines = ["iteration,meta_loss,query_acc"]
    for row in ckpt.history:
        hist_lines.append(f"{row.iteration},{row.meta_loss!r},{row.query_acc!r}")
    hist_blob = ("\n".join(hist_lines) + "\n").encode("utf-8")
    header_blob = header.encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(CAML_MAGIC)
        fh.write(struct.pack("<I", CAML_VERSION))
        fh.write(struct.pack("<I", len(header_blob)))
        fh.write(header_blob)
        fh.write(struct.pack("<I", len(ckpt.theta)))
        for name, t in ckpt.theta.items():
            raw = name.encode("utf-8")
            arr = t.numpy()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            inter = np.empty(2 * arr.size, dtype="<f8")
            inter[0::2] = arr.real.ravel()
            inter[1::2] = arr.imag.ravel()
            fh.write(inter.tobytes())
        fh.write(struct.pack("<Q", len(hist_blob)))
        fh.write(hist_blob)


def _read_exact(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError(f"checkpoint ended while reading {what}")
    return raw


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CAML_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {CAML_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CAML_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = _read_exact(fh, hlen, "header").decode("utf-8")
        arch_lines, iteration, rng_state = [], None, None
        for line in header.splitlines():
            if line.startswith("iteration="):
                iteration = int(line.split("=", 1)[1])
            elif line.startswith("rng_state="):
                rng_state = _rng_state_from_json(line.split("=", 1)[1])
            elif line.strip():
                arch_lines.append(line)
        if iteration is None or rng_state is None:
            raise CheckpointError("checkpoint header lacks iteration or rng_state")
        arch = _arch_from_lines("\n".join(arch_lines))

        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        tensors: dict[str, CTensor] = {}
        for _ in range(n_params):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "parameter name length"))
            name = _read_exact(fh, nlen, "parameter name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "parameter rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "parameter dims"))
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            inter = np.frombuffer(_read_exact(fh, 16 * size, f"parameter {name}"), dtype="<f8")
            arr = (inter[0::2] + 1j * inter[1::2]).reshape(dims)
            tensors[name] = CTensor._wrap(arr.astype(_C))
        (hlen2,) = struct.unpack("<Q", _read_exact(fh, 8, "history length"))
        hist_text = _read_exact(fh, hlen2, "history").decode("utf-8")
        history = []
        for line in hist_text.splitlines()[1:]:
            it, loss, acc = line.split(",")
            history.append(HistoryRow(int(it), float(loss), float(acc)))
        return Checkpoint(arch, ParamSet(tensors), iteration, rng_state, history)


# ---------------------------------------------------------------------------
# shared run plumbing
# ---------------------------------------------------------------------------

def worker_cap() -> int:
    """Worker-parallelism cap from CAMEL_THREADS; execution is sequential,
    so the effective parallelism is min(cap, 1)."""
    raw = os.environ.get("CAMEL_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"CAMEL_THREADS must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ConfigError(f"CAMEL_THREADS must be >= 1, got {cap}")
    return min(cap, 1)


def _rng(seed_seq) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_seq))


def _streams(seed: int) -> dict[str, np.random.SeedSequence]:
    names = ("data", "episodes", "init", "eval", "split")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def build_pool(cfg: RunConfig, rng: np.random.Generator) -> FramePool:
    if cfg.data.frames:
        return load_frames(cfg.data.frames)
    return generate_pool(cfg.data.schemes, cfg.data.snr_grid(), cfg.data.frames_per_cell,
                         cfg.arch.frame_len, cfg.data.sps, rng)


def _train_test_pools(cfg: RunConfig, streams) -> tuple[FramePool, FramePool]:
    pool = build_pool(cfg, _rng(streams["data"]))
    if cfg.data.scenario:
        return scenario_split(pool, cfg.data.scenario, _rng(streams["split"]))
    eval_pool = build_pool(cfg, _rng(streams["eval"])) if not cfg.data.frames else pool
    return pool, eval_pool


def metrics_csv(history: list[HistoryRow]) -> str:
    lines = ["iteration,meta_loss,query_acc"]
    for row in history:
        lines.append(f"{row.iteration},{row.meta_loss!r},{row.query_acc!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    cases = default_cases()
    results = run_suite(cases, instances=args.instances, seed=args.seed)
    width = max(len(r.name) for r in results)
    print(f"{'op':<{width}}  max rel err  status")
    for r in results:
        print(f"{r.name:<{width}}  {r.max_err:11.3e}  {'ok' if r.ok else 'FAIL'}")
    bad = [r.name for r in results if not r.ok]
    if bad:
        print(f"gradcheck FAILED for: {', '.join(bad)}")
        return 1
    print(f"gradcheck passed: {len(results)} ops, {args.instances} instances each")
    return 0


def _toy_loss(g: Tape, x: int) -> int:
    # J = |exp(-(x*)^2)|
    u = g.conj(x)
    return g_abs(g, g.exp(g.neg(g.mul(u, u))))


def toychain_run(steps: int, lr: float, x0: complex = 0.5 + 0.5j):
    """Gradient descent on the toy map with the two-term chain rule versus
    the single-term (holomorphic-only) rule.  Returns per-step rows
    (step, J_complex, J_naive, |naive gradient|)."""
    rows = []
    xc = complex(x0)
    xn = complex(x0)
    for step in range(steps + 1):
        g = Tape()
        xl = g.leaf(np.asarray(xc, dtype=_C))
        jc = _toy_loss(g, xl)
        jc_val = float(g.raw(jc).real)

        gn = Tape()
        xln = gn.leaf(np.asarray(xn, dtype=_C))
        jn = _toy_loss(gn, xln)
        jn_val = float(gn.raw(jn).real)

        pairs = backward_graph(g, jc, seed=(0.5, 0.5))
        pc = pairs.get(xl, (None, None))[1]
        grad_c = 2.0 * complex(g.val[pc].reshape(-1)[0]) if pc is not None else 0.0

        pairs_n = backward_graph(gn, jn, seed=(1.0, None), naive=True)
        pv = pairs_n.get(xln, (None, None))[0]
        grad_n = 2.0 * complex(np.conj(gn.val[pv].reshape(-1)[0])) if pv is not None else 0.0 + 0.0j

        rows.append((step, jc_val, jn_val, abs(grad_n)))
        xc -= lr * grad_c
        xn -= lr * grad_n
    return rows


def cmd_toychain(args) -> int:
    if args.lr <= 0:
        print("toychain: lr must be positive", file=sys.stderr)
        return 3
    rows = toychain_run(args.steps, args.lr)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("step,loss_complex_rule,loss_naive_rule,naive_grad_norm\n")
            for step, jc, jn, gn in rows:
                fh.write(f"{step},{jc!r},{jn!r},{gn!r}\n")
    j0, j_last = rows[0][1], rows[-1][1]
    max_naive = max(r[3] for r in rows)
    naive_drift = max(abs(r[2] - rows[0][2]) for r in rows)
    print(f"start J = {j0:.6f}")
    print(f"two-term chain rule: J after {args.steps} steps = {j_last:.6f} "
          f"({100 * (1 - j_last / j0):.1f}% reduction)")
    print(f"single-term rule:    gradient norm max = {max_naive:.3e}, "
          f"J drift = {naive_drift:.3e} (stuck)")
    if args.out:
        print(f"trajectories written to {args.out}")
    return 0


def cmd_bench_lemma1(args) -> int:
    rng = np.random.default_rng(args.seed)
    chain = make_analytic_chain(args.m, args.depth, rng)
    count_cd, count_iq, d_cd, d_iq = opcount_compare(chain, args.m)
    dev = float(np.max(np.abs(d_cd - d_iq), initial=0.0))
    ratio = count_iq / count_cd
    print(f"m={args.m} depth={args.depth}")
    print(f"complex-derivative route: {count_cd} multiply-accumulates")
    print(f"stacked-real route:       {count_iq} multiply-accumulates")
    print(f"ratio = {ratio}")
    print(f"max derivative deviation between routes = {dev:.3e}")
    return 0


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.set)
    rng = _rng(_streams(args.seed if args.seed is not None else cfg.seed)["data"])
    pool = generate_pool(cfg.data.schemes, cfg.data.snr_grid(), cfg.data.frames_per_cell,
                         cfg.arch.frame_len, cfg.data.sps, rng)
    save_frames(args.out, pool)
    print(f"wrote {len(pool.frames)} frames ({len(pool.schemes)} schemes) to {args.out}")
    return 0


def _apply_flag_overrides(cfg: RunConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.meta.seed = args.seed
    if getattr(args, "iterations", None) is not None:
        cfg.meta.iterations = args.iterations
    if getattr(args, "first_order", False):
        cfg.meta.first_order = True
    if getattr(args, "no_attention", False):
        cfg.arch.use_attention = False
    if getattr(args, "real_valued", False):
        cfg.arch.real_input = True


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    _apply_flag_overrides(cfg, args)
    worker_cap()
    streams = _streams(cfg.seed)
    train_pool, _ = _train_test_pools(cfg, streams)

    episode_rng = _rng(streams["episodes"])
    state = None
    theta0 = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.arch != cfg.arch:
            raise ArchMismatchError("resume checkpoint architecture differs from the configured one")
        episode_rng.bit_generator.state = ckpt.rng_state
        state = TrainState(theta=ckpt.theta, iteration=ckpt.iteration, history=list(ckpt.history))
    else:
        theta0 = ParamSet(init_params(cfg.arch, _rng(streams["init"])))

    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.caml")
    metrics_path = os.path.join(args.out, "metrics.csv")
    episodes = episode_stream(train_pool, cfg.meta.n_way, cfg.meta.k_shot, cfg.meta.q_size,
                              episode_rng)

    def write_ckpt(st: TrainState) -> None:
        save_checkpoint(ckpt_path, Checkpoint(cfg.arch, st.theta, st.iteration,
                                              episode_rng.bit_generator.state, st.history))

    def on_iteration(st: TrainState) -> None:
        if cfg.meta.checkpoint_every > 0 and st.iteration % cfg.meta.checkpoint_every == 0:
            write_ckpt(st)

    try:
        state = train_camel(cfg.meta, cfg.arch, episodes, theta0=theta0, state=state,
                            on_iteration=on_iteration)
    except DivergenceError as exc:
        write_ckpt(exc.state)
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(metrics_csv(exc.state.history))
        print(f"training diverged: {exc}", file=sys.stderr)
        print(f"last good checkpoint: {ckpt_path}", file=sys.stderr)
        return 2

    write_ckpt(state)
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(metrics_csv(state.history))
    last = state.history[-1] if state.history else None
    tail = f", final meta-loss {last.meta_loss:.4f}, query acc {last.query_acc:.3f}" if last else ""
    print(f"trained {state.iteration} iterations{tail}")
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics:    {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.meta.seed = args.seed
    ckpt = load_checkpoint(args.checkpoint)
    explicit_arch = {k for k in cfg.explicit if k in _ARCH_FIELDS}
    for key in explicit_arch:
        if getattr(cfg.arch, key) != getattr(ckpt.arch, key):
            raise ArchMismatchError(
                f"config sets {key}={getattr(cfg.arch, key)!r} but the checkpoint "
                f"was trained with {key}={getattr(ckpt.arch, key)!r}")
    cfg.arch = ckpt.arch

    streams = _streams(cfg.seed)
    _, test_pool = _train_test_pools(cfg, streams)
    e_rng = _rng(streams["eval"].spawn(1)[0])
    n_episodes = args.episodes if args.episodes is not None else cfg.data.eval_episodes
    episodes = [sample_episode(test_pool, cfg.meta.n_way, cfg.meta.k_shot, cfg.meta.q_size, e_rng)
                for _ in range(n_episodes)]
    report = evaluate(ckpt.theta, episodes, cfg.meta, cfg.arch)
    print(f"accuracy {report.accuracy:.4f} ± {report.ci95:.4f} "
          f"(95% CI over {len(episodes)} episodes)")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        conf_path = os.path.join(args.out, "confusion.csv")
        with open(conf_path, "w", encoding="utf-8") as fh:
            n = report.confusion.shape[0]
            fh.write("actual\\predicted," + ",".join(f"class{i}" for i in range(n)) + "\n")
            for i in range(n):
                fh.write(f"class{i}," + ",".join(f"{x:.6f}" for x in report.confusion[i]) + "\n")
        print(f"confusion matrix: {conf_path}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_config_args(p) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="camel",
                                 description="complex-valued attentional meta-learning toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference oracle suite")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("toychain", help="two-term vs single-term chain rule on the toy map")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--out", default=None, help="CSV path for both loss trajectories")
    p.set_defaults(fn=cmd_toychain)

    p = sub.add_parser("bench-lemma1", help="derivative cost of the two differentiation routes")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench_lemma1)

    p = sub.add_parser("gen", help="write a synthetic frame file")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="episodic training")
    _add_config_args(p)
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--first-order", action="store_true", dest="first_order",
                   help="drop both curvature terms of the outer gradient")
    p.add_argument("--no-attention", action="store_true", dest="no_attention",
                   help="ablation: skip the attention block")
    p.add_argument("--real-valued", action="store_true", dest="real_valued",
                   help="ablation: real weights over stacked I/Q channels")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out episodes")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", default=None, help="directory for the confusion matrix CSV")
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, FrameFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
