"""Episodic meta-learning over complex parameters.

The inner loop adapts parameters on a task's support set with the complex
gradient; the outer loop follows the exact meta-gradient, whose one-step
form carries two curvature corrections,

    (I - alpha * H_vv) grad_query  -  alpha * H_cv * conj(grad_query),

computed here with Hessian-vector products on the adaptation tape.  For
multi-step inner loops the correction is composed step by step by
back-propagating through the whole recorded inner trajectory; both routes
agree at one step and both are validated against finite differences.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from .ctensor import CTensor, ShapeMismatchError
from .layers import ArchConfig, build_cross_entropy, build_network, frames_to_input, init_params
from .wirtinger import Tape, backward, backward_graph, hvp, g_sum

_C = np.complex128


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss; carries the last
    finite state in ``state``."""

    def __init__(self, message: str, state: "TrainState"):
        super().__init__(message)
        self.state = state


class ParamSet(Mapping):
    """Named, ordered collection of complex parameter tensors.

    Iteration order is insertion order and is part of the contract
    (checkpoints and flattened norms rely on it).  Tensors are immutable,
    so set-level operations return new ParamSets.
    """

    __slots__ = ("_d",)

    def __init__(self, tensors: Mapping[str, CTensor]):
        self._d = dict(tensors)

    def __getitem__(self, name: str) -> CTensor:
        return self._d[name]

    def __iter__(self):
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def copy(self) -> "ParamSet":
        return ParamSet(self._d)

    def map(self, fn: Callable[[str, CTensor], CTensor]) -> "ParamSet":
        return ParamSet({k: fn(k, v) for k, v in self._d.items()})

    def add_scaled(self, other: Mapping[str, CTensor], s: complex) -> "ParamSet":
        out = {}
        for k, v in self._d.items():
            o = other[k]
            if o.shape != v.shape:
                raise ShapeMismatchError(f"ParamSet.{k}: shapes differ, {v.shape} vs {o.shape}")
            out[k] = CTensor._wrap(v.numpy() + s * o.numpy())
        return ParamSet(out)

    def scale(self, s: complex) -> "ParamSet":
        return self.map(lambda k, v: CTensor._wrap(s * v.numpy()))

    def conj(self) -> "ParamSet":
        return self.map(lambda k, v: CTensor._wrap(np.conj(v.numpy())))

    def zeros_like(self) -> "ParamSet":
        return self.map(lambda k, v: CTensor.zeros(v.shape))

    def flat(self) -> np.ndarray:
        """All parameters concatenated into one complex vector."""
        if not self._d:
            return np.zeros(0, dtype=_C)
        return np.concatenate([v.numpy().ravel() for v in self._d.values()])

    def norm(self) -> float:
        f = self.flat()
        return float(np.sqrt(np.sum(f * np.conj(f)).real))

    def max_abs_diff(self, other: "ParamSet") -> float:
        return float(max((np.max(np.abs(self[k].numpy() - other[k].numpy()), initial=0.0)
                          for k in self), default=0.0))


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

class MetaTask(Protocol):
    """One few-shot task: builders for its support and query losses."""

    def support_loss(self, g: Tape, params: dict[str, int]) -> int: ...

    def query_loss(self, g: Tape, params: dict[str, int]) -> int: ...


@dataclass(frozen=True)
class Episode:
    """One few-shot task instance: labeled support and query frames."""

    support: tuple[tuple[CTensor, int], ...]
    query: tuple[tuple[CTensor, int], ...]
    n_way: int
    k_shot: int

    def __post_init__(self):
        if len(self.support) != self.n_way * self.k_shot:
            raise ValueError(f"episode needs n_way*k_shot={self.n_way * self.k_shot} "
                             f"support frames, got {len(self.support)}")
        counts = [0] * self.n_way
        for _, label in self.support:
            if not 0 <= label < self.n_way:
                raise ValueError(f"support label {label} outside [0, {self.n_way})")
            counts[label] += 1
        if any(c != self.k_shot for c in counts):
            raise ValueError(f"every class must appear exactly k_shot={self.k_shot} "
                             f"times in support, got counts {counts}")
        for _, label in self.query:
            if not 0 <= label < self.n_way:
                raise ValueError(f"query label {label} outside [0, {self.n_way})")


class QuadraticTask:
    """Toy task |theta - c|^2 (same loss on support and query); its inner
    updates, meta-objective, and meta-gradient all have closed forms."""

    def __init__(self, centers: Mapping[str, CTensor]):
        self.centers = dict(centers)

    def _loss(self, g: Tape, params: dict[str, int]) -> int:
        total = None
        for name, nid in params.items():
            d = g.sub(nid, g.const(self.centers[name]))
            term = g_sum(g, g.mul(d, g.conj(d)))
            total = term if total is None else g.add(total, term)
        return total

    support_loss = _loss
    query_loss = _loss


class EpisodeTask:
    """Few-shot classification task over one episode of signal frames."""

    def __init__(self, episode: Episode, arch: ArchConfig):
        self.episode = episode
        self.arch = arch
        self._support_in = frames_to_input([f for f, _ in episode.support], arch)
        self._support_labels = [y for _, y in episode.support]
        self._query_in = frames_to_input([f for f, _ in episode.query], arch)
        self._query_labels = [y for _, y in episode.query]

    def _loss(self, g: Tape, params: dict[str, int], x_in: np.ndarray, labels) -> int:
        lp = build_network(g, g.const(x_in), params, self.arch)
        return build_cross_entropy(g, lp, labels)

    def support_loss(self, g: Tape, params: dict[str, int]) -> int:
        return self._loss(g, params, self._support_in, self._support_labels)

    def query_loss(self, g: Tape, params: dict[str, int]) -> int:
        return self._loss(g, params, self._query_in, self._query_labels)

    def query_predictions(self, theta: Mapping[str, CTensor]) -> list[int]:
        g = Tape()
        leaves = {k: g.const(v) for k, v in theta.items()}
        lp = build_network(g, g.const(self._query_in), leaves, self.arch)
        return [int(i) for i in np.argmax(g.raw(lp).real, axis=1)]

    def query_accuracy(self, theta: Mapping[str, CTensor]) -> float:
        preds = self.query_predictions(theta)
        hits = sum(p == y for p, y in zip(preds, self._query_labels))
        return hits / max(1, len(self._query_labels))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class AdaptiveBetaConfig:
    """Inputs of the smoothness-scaled step size rule; the Lipschitz
    constants cannot be estimated from data and must be supplied."""

    grad_lipschitz: float
    hess_lipschitz: float
    probe_tasks: int = 1
    probe_batch: int = 0  # 0 means the full support set

    def __post_init__(self):
        if self.grad_lipschitz <= 0:
            raise ValueError("grad_lipschitz must be positive")
        if self.hess_lipschitz < 0:
            raise ValueError("hess_lipschitz must be non-negative")
        if self.probe_tasks < 1:
            raise ValueError("probe_tasks must be >= 1")


@dataclass
class MetaConfig:
    """Hyperparameters of the episodic training loop."""

    inner_lr: float = 0.1
    outer_lr: float = 0.001
    meta_batch: int = 2
    inner_steps: int = 5
    finetune_steps: int = 10
    n_way: int = 5
    k_shot: int = 1
    q_size: int = 5
    iterations: int = 1000
    first_order: bool = False
    seed: int = 0
    outer_optimizer: str = "sgd"
    early_stop: bool = True
    plateau_patience: int = 50
    plateau_tol: float = 1e-6
    checkpoint_every: int = 1000
    adaptive_beta: AdaptiveBetaConfig | None = None

    def __post_init__(self):
        if self.inner_lr < 0:
            raise ValueError("inner_lr must be >= 0")
        if self.outer_lr <= 0:
            raise ValueError("outer_lr must be positive")
        for name in ("meta_batch", "inner_steps", "n_way", "k_shot", "q_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.finetune_steps < 0 or self.iterations < 0:
            raise ValueError("step counts must be >= 0")
        if self.outer_optimizer not in ("sgd", "adam"):
            raise ValueError(f"outer_optimizer must be sgd or adam, got {self.outer_optimizer!r}")
        if self.adaptive_beta is not None:
            limit = 1.0 / (6.0 * self.adaptive_beta.grad_lipschitz)
            if not 0 < self.inner_lr <= limit:
                raise ValueError(
                    f"inner_lr {self.inner_lr} outside (0, 1/(6L)] = (0, {limit:.6g}] "
                    "required by the adaptive step size rule")


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------

def _grad_from_pairs(g: Tape, pairs, leaves: dict[str, int], theta: Mapping[str, CTensor]) -> dict[str, CTensor]:
    out = {}
    for name, nid in leaves.items():
        pair = pairs.get(nid, (None, None))
        if pair[1] is None:
            out[name] = CTensor.zeros(theta[name].shape)
        else:
            out[name] = CTensor._wrap(2.0 * g.val[pair[1]])
    return out


def _support_gradient(theta: ParamSet, task: MetaTask) -> tuple[dict[str, CTensor], float]:
    g = Tape()
    leaves = {k: g.leaf(v) for k, v in theta.items()}
    loss_id = task.support_loss(g, leaves)
    loss = float(g.raw(loss_id).real)
    if not math.isfinite(loss):
        raise FloatingPointError(f"support loss is not finite: {loss}")
    pairs = backward_graph(g, loss_id, seed=(0.5, 0.5))
    return _grad_from_pairs(g, pairs, leaves, theta), loss


def inner_update(theta: ParamSet, task: MetaTask, inner_lr: float, steps: int) -> ParamSet:
    """Task adaptation: ``steps`` full-batch complex-gradient steps on the
    support loss.  The input ParamSet is not modified."""
    if steps < 1:
        raise ValueError("inner_update needs steps >= 1")
    cur = theta
    for _ in range(steps):
        grad, _ = _support_gradient(cur, task)
        cur = cur.add_scaled(grad, -inner_lr)
    return cur


def _query_gradient(theta: ParamSet, task: MetaTask) -> tuple[dict[str, CTensor], float]:
    g = Tape()
    leaves = {k: g.leaf(v) for k, v in theta.items()}
    loss_id = task.query_loss(g, leaves)
    loss = float(g.raw(loss_id).real)
    pairs = backward_graph(g, loss_id, seed=(0.5, 0.5))
    return _grad_from_pairs(g, pairs, leaves, theta), loss


def meta_objective(theta: ParamSet, tasks: Sequence[MetaTask], inner_lr: float, steps: int) -> float:
    """Mean query loss after adapting to each task's support set."""
    if not tasks:
        raise ValueError("meta_objective needs at least one task")
    total = 0.0
    for task in tasks:
        adapted = inner_update(theta, task, inner_lr, steps) if steps > 0 else theta
        g = Tape()
        leaves = {k: g.const(v) for k, v in adapted.items()}
        total += float(g.raw(task.query_loss(g, leaves)).real)
    return total / len(tasks)


def _accumulate(acc: dict[str, np.ndarray] | None, grad: Mapping[str, CTensor]) -> dict[str, np.ndarray]:
    if acc is None:
        return {k: v.numpy().copy() for k, v in grad.items()}
    for k, v in grad.items():
        acc[k] += v.numpy()
    return acc


def _mean_paramset(acc: dict[str, np.ndarray], n: int) -> ParamSet:
    return ParamSet({k: CTensor._wrap(v / n) for k, v in acc.items()})


def _one_step_task_gradient(theta: ParamSet, task: MetaTask, inner_lr: float):
    """Exact one-step meta-gradient of one task via curvature products.

    The chain rule contracts the query gradient against the transposed
    curvature blocks.  The conj-value block is symmetric, and the
    value-value block is the conjugate of a Hermitian matrix, so both
    transposed products follow from one Hessian-vector product evaluated
    at the conjugated query gradient:

        H_vv^T u = conj(H_vv conj(u)),   H_cv^T conj(u) = H_cv conj(u).
    """
    adapted = inner_update(theta, task, inner_lr, 1)
    u, q_loss = _query_gradient(adapted, task)

    def support_builder(g: Tape, leaves: dict[str, int]) -> int:
        return task.support_loss(g, leaves)

    u_conj = {k: CTensor._wrap(np.conj(v.numpy())) for k, v in u.items()}
    h_vv, h_cv = hvp(support_builder, theta, u_conj)

    grad = {k: CTensor._wrap(u[k].numpy()
                             - inner_lr * np.conj(h_vv[k].numpy())
                             - inner_lr * h_cv[k].numpy())
            for k in u}
    return grad, q_loss, adapted


def _unrolled_task_gradient(theta: ParamSet, task: MetaTask, inner_lr: float, steps: int):
    """Meta-gradient of one task by differentiating through the whole
    recorded inner trajectory."""
    g = Tape()
    leaves = {k: g.leaf(v) for k, v in theta.items()}
    cur = dict(leaves)
    for _ in range(steps):
        loss_id = task.support_loss(g, cur)
        if not math.isfinite(float(g.raw(loss_id).real)):
            raise FloatingPointError("support loss is not finite")
        pairs = backward_graph(g, loss_id, seed=(0.5, 0.5), stop=set(cur.values()))
        nxt = {}
        for name, nid in cur.items():
            pair = pairs.get(nid, (None, None))
            if pair[1] is None:
                nxt[name] = nid
            else:
                nxt[name] = g.sub(nid, g.smul(pair[1], 2.0 * inner_lr))
        cur = nxt
    q_id = task.query_loss(g, cur)
    q_loss = float(g.raw(q_id).real)
    final = backward_graph(g, q_id, seed=(0.5, 0.5))
    grad = _grad_from_pairs(g, final, leaves, theta)
    adapted = ParamSet({k: CTensor._wrap(g.val[cur[k]].copy()) for k in leaves})
    return grad, q_loss, adapted


def meta_gradient(theta: ParamSet, tasks: Sequence[MetaTask], inner_lr: float, steps: int) -> ParamSet:
    """Exact gradient of the meta-objective.

    One inner step uses the closed correction form with two
    Hessian-vector products per task; more steps compose the correction
    by back-propagating through the full inner trajectory.
    """
    grad, _, _ = _meta_step_gradient(theta, tasks, inner_lr, steps, first_order=False)
    return grad


def first_order_meta_gradient(theta: ParamSet, tasks: Sequence[MetaTask],
                              inner_lr: float, steps: int) -> ParamSet:
    """Ablation dropping both curvature terms: the mean query gradient at
    the adapted parameters.  Never invokes a Hessian-vector product."""
    grad, _, _ = _meta_step_gradient(theta, tasks, inner_lr, steps, first_order=True)
    return grad


def _meta_step_gradient(theta: ParamSet, tasks: Sequence[MetaTask], inner_lr: float,
                        steps: int, first_order: bool):
    if not tasks:
        raise ValueError("meta gradient needs at least one task")
    if steps < 1:
        raise ValueError("meta gradient needs steps >= 1")
    acc = None
    total_loss = 0.0
    adapted_sets = []
    for task in tasks:
        if first_order:
            adapted = inner_update(theta, task, inner_lr, steps)
            grad, q_loss = _query_gradient(adapted, task)
        elif steps == 1:
            grad, q_loss, adapted = _one_step_task_gradient(theta, task, inner_lr)
        else:
            grad, q_loss, adapted = _unrolled_task_gradient(theta, task, inner_lr, steps)
        acc = _accumulate(acc, grad)
        total_loss += q_loss
        adapted_sets.append(adapted)
    return _mean_paramset(acc, len(tasks)), total_loss / len(tasks), adapted_sets


def outer_update(theta: ParamSet, grad: Mapping[str, CTensor], outer_lr: float) -> ParamSet:
    """Plain gradient step on the meta-parameters."""
    if outer_lr <= 0:
        raise ValueError("outer_lr must be positive")
    return theta.add_scaled(grad, -outer_lr)


def adaptive_beta(theta: ParamSet, tasks: Sequence[MetaTask], inner_lr: float,
                  cfg: AdaptiveBetaConfig) -> float:
    """Smoothness-scaled outer step size

        beta(theta) = 1 / (4L + 2 rho alpha mean_i ||grad_i||),

    divided by 12, estimated from the support gradients of the sampled
    probe tasks."""
    if cfg is None:
        raise ValueError("adaptive step size needs its configuration")
    norms = []
    for task in tasks[: cfg.probe_tasks]:
        grad, _ = _support_gradient(theta, task)
        flat = np.concatenate([v.numpy().ravel() for v in grad.values()])
        norms.append(float(np.sqrt(np.sum(flat * np.conj(flat)).real)))
    mean_norm = float(np.mean(norms)) if norms else 0.0
    l, rho = cfg.grad_lipschitz, cfg.hess_lipschitz
    beta_tilde = 1.0 / (4.0 * l + 2.0 * rho * inner_lr * mean_norm)
    return beta_tilde / 12.0


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class HistoryRow:
    iteration: int
    meta_loss: float
    query_acc: float  # nan for tasks without a notion of accuracy


@dataclass
class TrainState:
    theta: ParamSet
    iteration: int = 0
    history: list[HistoryRow] = field(default_factory=list)


class _Adam:
    """Adam on the real view: real and imaginary parts are treated as
    independent real coordinates, matching the usual optimizer semantics."""

    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, theta: ParamSet, grad: Mapping[str, CTensor]) -> ParamSet:
        self.t += 1
        out = {}
        for k, p in theta.items():
            gk = grad[k].numpy()
            m = self.m.get(k)
            if m is None:
                m = np.zeros(p.shape, dtype=_C)
                v = np.zeros(p.shape, dtype=_C)
            else:
                v = self.v[k]
            m = self.b1 * m + (1 - self.b1) * gk
            v = self.b2 * v + (1 - self.b2) * (gk.real ** 2 + 1j * gk.imag ** 2)
            self.m[k], self.v[k] = m, v
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            step = (mh.real / (np.sqrt(vh.real) + self.eps)
                    + 1j * mh.imag / (np.sqrt(vh.imag) + self.eps))
            out[k] = CTensor._wrap(p.numpy() - self.lr * step)
        return ParamSet(out)


def train_meta(theta0: ParamSet, batch_source: Callable[[], Sequence[MetaTask]],
               cfg: MetaConfig, state: TrainState | None = None,
               on_iteration: Callable[[TrainState], None] | None = None) -> TrainState:
    """Run the outer loop: sample a task batch, adapt per task, step the
    meta-parameters along the exact (or first-order) meta-gradient.

    Stops at ``cfg.iterations`` or earlier when the smoothed meta-loss has
    not improved by ``plateau_tol`` for ``plateau_patience`` iterations.
    Raises :class:`DivergenceError` carrying the last finite state when a
    loss turns non-finite.
    """
    if state is None:
        state = TrainState(theta=theta0)
    adam = _Adam(cfg.outer_lr) if cfg.outer_optimizer == "adam" else None
    recent: list[float] = []
    best_smoothed = math.inf
    since_best = 0

    while state.iteration < cfg.iterations:
        tasks = list(batch_source())
        try:
            grad, meta_loss, adapted = _meta_step_gradient(
                state.theta, tasks, cfg.inner_lr, cfg.inner_steps, cfg.first_order)
        except FloatingPointError as exc:
            raise DivergenceError(f"iteration {state.iteration}: {exc}", state) from exc
        if not math.isfinite(meta_loss):
            raise DivergenceError(f"iteration {state.iteration}: meta loss {meta_loss}", state)

        accs = [t.query_accuracy(a) for t, a in zip(tasks, adapted) if hasattr(t, "query_accuracy")]
        acc = float(np.mean(accs)) if accs else math.nan

        if adam is not None:
            theta_next = adam.step(state.theta, grad)
        else:
            lr = cfg.outer_lr
            if cfg.adaptive_beta is not None:
                lr = adaptive_beta(state.theta, tasks, cfg.inner_lr, cfg.adaptive_beta)
            theta_next = state.theta.add_scaled(grad, -lr)
        bad = any(not (np.all(np.isfinite(t.numpy().real)) and np.all(np.isfinite(t.numpy().imag)))
                  for t in theta_next.values())
        if bad:
            raise DivergenceError(f"iteration {state.iteration}: parameters diverged", state)

        state.theta = theta_next
        state.history.append(HistoryRow(state.iteration, meta_loss, acc))
        state.iteration += 1
        if on_iteration is not None:
            on_iteration(state)

        if cfg.early_stop:
            recent.append(meta_loss)
            if len(recent) > cfg.plateau_patience:
                recent.pop(0)
            smoothed = float(np.mean(recent))
            if smoothed < best_smoothed - cfg.plateau_tol:
                best_smoothed = smoothed
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.plateau_patience:
                    break
    return state


def train_camel(cfg: MetaConfig, arch: ArchConfig, episode_source: Iterator[Episode],
                theta0: ParamSet | None = None, state: TrainState | None = None,
                on_iteration: Callable[[TrainState], None] | None = None) -> TrainState:
    """Episodic training of the recognition network (outer loop over
    batches of ``cfg.meta_batch`` episodes drawn from ``episode_source``)."""
    if theta0 is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        theta0 = ParamSet(init_params(arch, rng))

    def batch_source() -> list[EpisodeTask]:
        return [EpisodeTask(next(episode_source), arch) for _ in range(cfg.meta_batch)]

    return train_meta(theta0, batch_source, cfg, state=state, on_iteration=on_iteration)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    ci95: float
    confusion: np.ndarray  # (n_way, n_way), rows = actual, percent
    episode_accuracies: list[float]


def evaluate(theta: ParamSet, episodes: Sequence[Episode], cfg: MetaConfig,
             arch: ArchConfig | None = None,
             predict_fn: Callable[[ParamSet, Episode], Sequence[int]] | None = None) -> EvalReport:
    """Fine-tune on each episode's support set, classify its query set.

    Reports mean accuracy, its normal-approximation 95% confidence
    interval over episodes, and the row-normalized confusion matrix in
    percent.  ``predict_fn`` overrides the network classifier (used by
    tests with oracle predictors)."""
    if not episodes:
        raise ValueError("evaluate needs at least one episode")
    n_way = episodes[0].n_way
    counts = np.zeros((n_way, n_way), dtype=np.float64)
    accs = []
    for ep in episodes:
        if arch is not None and predict_fn is None:
            task = EpisodeTask(ep, arch)
            adapted = theta
            if cfg.finetune_steps > 0 and cfg.inner_lr > 0:
                adapted = inner_update(theta, task, cfg.inner_lr, cfg.finetune_steps)
            preds = task.query_predictions(adapted)
        elif predict_fn is not None:
            preds = list(predict_fn(theta, ep))
        else:
            raise ValueError("evaluate needs an architecture or a predict_fn")
        hits = 0
        for (frame, label), pred in zip(ep.query, preds):
            counts[label, pred] += 1
            hits += int(pred == label)
        accs.append(hits / max(1, len(ep.query)))
    acc = float(np.mean(accs))
    sd = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    ci95 = 1.96 * sd / math.sqrt(len(accs))
    row_sums = counts.sum(axis=1, keepdims=True)
    confusion = np.divide(counts * 100.0, row_sums, out=np.zeros_like(counts), where=row_sums > 0)
    return EvalReport(acc, ci95, confusion, accs)
