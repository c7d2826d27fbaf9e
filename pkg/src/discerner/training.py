"""Per-criterion model optimization.

Weighted cross-entropy with L2 regularization, minibatch updates, best-epoch
retention on validation F1-macro, and uniform random hyperparameter search.
Everything is seeded; two runs with the same inputs produce bit-identical
checkpoints.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import model as hea
from .corpus import class_weights
from .errors import DegenerateLabels, DiscernError, DivergedLoss, NonFiniteValue
from .evaluation import metrics


@dataclass
class AdamSettings:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    model: hea.ModelConfig
    learning_rate: float = 1e-3
    l2: float = 0.0
    max_epochs: int = 30
    batch_size: int = 8
    optimizer: str = "adam"
    adam: AdamSettings = field(default_factory=AdamSettings)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise DiscernError("learning_rate must be positive")
        if self.l2 < 0:
            raise DiscernError("l2 must be >= 0")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise DiscernError("max_epochs and batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise DiscernError(f"unknown optimizer {self.optimizer!r}")

    @property
    def p_dropout(self) -> float:
        return self.model.dropout_p

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "learning_rate": self.learning_rate,
            "l2": self.l2,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "adam": {"beta1": self.adam.beta1, "beta2": self.adam.beta2, "eps": self.adam.eps},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = hea.ModelConfig.from_dict(d["model"])
        if "adam" in d:
            d["adam"] = AdamSettings(**d["adam"])
        return cls(**d)


@dataclass
class LabeledExample:
    """One embedded document ready for training."""

    doc_id: str
    sentences: list[np.ndarray]
    label: int


@dataclass
class Checkpoint:
    """Weights at the best validation epoch, plus how they were reached."""

    params: dict[str, np.ndarray]
    best_epoch: int
    val_f1_macro: float
    config: TrainConfig
    criterion: str

    def save(self, path) -> None:
        hea.save_checkpoint(
            path,
            self.config.model,
            self.params,
            self.criterion,
            self.best_epoch,
            self.val_f1_macro,
            self.config.seed,
        )


# ---------------------------------------------------------------------------
# losses


def example_loss(probs: Tensor, label: int, weight: float) -> Tensor:
    """weight * (-log p[label]); the log is floored at 1e-12."""
    if weight <= 0:
        raise DiscernError(f"example weight must be positive, got {weight}")
    return ad.scale(ad.log_floored(ad.pick(probs, label)), -weight)


def objective(
    example_losses: Sequence[Tensor], params: Iterable[Tensor], l2: float
) -> Tensor:
    """Mean of example losses plus (l2/2) * squared L2 norm of all parameters,
    biases included."""
    if not example_losses:
        raise DiscernError("objective needs a nonempty batch")
    total = example_losses[0]
    for loss in example_losses[1:]:
        total = ad.add(total, loss)
    obj = ad.scale(total, 1.0 / len(example_losses))
    if l2 > 0.0:
        reg = None
        for p in params:
            sq = ad.sum_all(ad.hadamard(p, p))
            reg = sq if reg is None else ad.add(reg, sq)
        if reg is not None:
            obj = ad.add(obj, ad.scale(reg, l2 / 2.0))
    return obj


# ---------------------------------------------------------------------------
# optimizers


class Sgd:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, named: Sequence[tuple[str, Tensor]]) -> None:
        for _, t in named:
            if t.grad is not None:
                t.data = t.data - self.learning_rate * t.grad


class Adam:
    def __init__(self, learning_rate: float, settings: AdamSettings):
        self.learning_rate = learning_rate
        self.s = settings
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, named: Sequence[tuple[str, Tensor]]) -> None:
        self.t += 1
        b1, b2, eps = self.s.beta1, self.s.beta2, self.s.eps
        correction1 = 1.0 - b1**self.t
        correction2 = 1.0 - b2**self.t
        for name, t in named:
            if t.grad is None:
                continue
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(t.data)
                self.v[name] = np.zeros_like(t.data)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * t.grad
            v = b2 * v + (1.0 - b2) * t.grad * t.grad
            self.m[name] = m
            self.v[name] = v
            m_hat = m / correction1
            v_hat = v / correction2
            t.data = t.data - self.learning_rate * m_hat / (np.sqrt(v_hat) + eps)


def _make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate, config.adam)


# ---------------------------------------------------------------------------
# training loop


def evaluate_examples(
    config: hea.ModelConfig, params: hea.ModelParams, examples: Sequence[LabeledExample]
) -> dict[str, float]:
    pairs = []
    for ex in examples:
        result = hea.forward(config, params, ex.sentences)
        pairs.append((result.prediction.label, ex.label))
    return metrics(pairs)


def train_fold(
    train: Sequence[LabeledExample],
    val: Sequence[LabeledExample],
    config: TrainConfig,
    trial: int = 0,
) -> tuple[Checkpoint, list[dict]]:
    """Minibatch training with per-epoch validation.

    Examples are reshuffled each epoch with the config seed; the parameters
    from the epoch with the best validation F1-macro are kept (earlier epoch
    wins ties). Raises DivergedLoss if the objective stops being finite.
    """
    if not val:
        raise DiscernError("validation set must be nonempty")
    weights = class_weights([ex.label for ex in train], config.model.criterion)
    rng = np.random.default_rng(config.seed)
    params = hea.init_params(config.model, rng)
    named = list(params.tensors.items())
    optimizer = _make_optimizer(config)
    best: Checkpoint | None = None
    log: list[dict] = []
    order = np.arange(len(train))
    for epoch in range(1, config.max_epochs + 1):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            ad.zero_grads(params.trainable())
            try:
                losses = []
                for idx in batch:
                    ex = train[int(idx)]
                    result = hea.forward(
                        config.model, params, ex.sentences, train_mode=True, rng=rng
                    )
                    losses.append(
                        example_loss(result.probs_node, ex.label, weights.weight[ex.label])
                    )
                batch_objective = objective(losses, params.trainable(), config.l2)
                value = batch_objective.item()
                if not math.isfinite(value):
                    raise DivergedLoss(f"objective became {value} at epoch {epoch}")
                ad.backward(batch_objective)
            except NonFiniteValue as exc:
                raise DivergedLoss(f"non-finite value at epoch {epoch}: {exc}") from exc
            optimizer.step(named)
            epoch_losses.append(value)
        val_metrics = evaluate_examples(config.model, params, val)
        log.append(
            {
                "trial": trial,
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_f1_macro": val_metrics["f1_macro"],
                "val_accuracy": val_metrics["accuracy"],
            }
        )
        if best is None or val_metrics["f1_macro"] > best.val_f1_macro:
            best = Checkpoint(
                params=params.snapshot(),
                best_epoch=epoch,
                val_f1_macro=val_metrics["f1_macro"],
                config=config,
                criterion=config.model.criterion,
            )
    assert best is not None
    return best, log


def validation_split(
    examples: Sequence[LabeledExample], fraction: float, seed: int
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Stratified held-out split; both classes stay represented in the
    training part, and each class contributes at least one validation
    example when it can afford to."""
    by_class: dict[int, list[int]] = {0: [], 1: []}
    for i, ex in enumerate(examples):
        by_class[ex.label].append(i)
    if not by_class[0] or not by_class[1]:
        raise DegenerateLabels("both classes required for a validation split")
    rng = np.random.default_rng(seed)
    val_idx: set[int] = set()
    for label in (0, 1):
        idxs = by_class[label]
        take = max(1, int(round(fraction * len(idxs))))
        take = min(take, len(idxs) - 1)  # keep the class present in train
        if take > 0:
            chosen = rng.permutation(len(idxs))[:take]
            val_idx.update(idxs[j] for j in chosen)
    train = [ex for i, ex in enumerate(examples) if i not in val_idx]
    val = [ex for i, ex in enumerate(examples) if i in val_idx]
    return train, val


# ---------------------------------------------------------------------------
# uniform random hyperparameter search


@dataclass
class SearchSpace:
    """Finite choice sets, log-uniform ranges for the two rate-like knobs."""

    d_h: tuple[int, ...] = (32, 64, 128)
    join: tuple[str, ...] = ("concat", "sum")
    attention: tuple[str, ...] = ("additive", "scaled_dot")
    dropout_p: tuple[float, ...] = (0.1, 0.3, 0.5)
    l2_range: tuple[float, float] = (1e-6, 1e-2)
    learning_rate_range: tuple[float, float] = (1e-4, 1e-2)
    batch_size: tuple[int, ...] = (4, 8)
    max_epochs: int = 50
    n_trials: int = 8
    base_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise DiscernError("n_trials must be >= 1")
        for name in ("d_h", "join", "attention", "dropout_p", "batch_size"):
            if not getattr(self, name):
                raise DiscernError(f"search set {name} must be nonempty")

    def sample(
        self, rng: np.random.Generator, variant: str, criterion: str, embed_dim: int
    ) -> TrainConfig:
        def choose(options):
            return options[int(rng.integers(len(options)))]

        def log_uniform(lo_hi):
            lo, hi = lo_hi
            return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

        d_h = choose(self.d_h)
        join = choose(self.join)
        model = hea.ModelConfig(
            variant=variant,
            d_h_sent=d_h,
            d_h_doc=d_h,
            join_sent=join,
            join_doc=join,
            attention=choose(self.attention),
            dropout_p=choose(self.dropout_p),
            criterion=criterion,
            embed_dim=embed_dim,
        )
        return TrainConfig(
            model=model,
            learning_rate=log_uniform(self.learning_rate_range),
            l2=log_uniform(self.l2_range),
            max_epochs=self.max_epochs,
            batch_size=choose(self.batch_size),
            optimizer="adam",
        )


@dataclass
class TrialResult:
    index: int
    config: TrainConfig
    val_f1_macro: float
    best_epoch: int
    error: str | None
    log: list[dict]


def _run_trial(args) -> TrialResult:
    index, config, train, val = args
    try:
        checkpoint, log = train_fold(train, val, config, trial=index)
        return TrialResult(
            index=index,
            config=config,
            val_f1_macro=checkpoint.val_f1_macro,
            best_epoch=checkpoint.best_epoch,
            error=None,
            log=log,
        )
    except DiscernError as exc:
        return TrialResult(
            index=index,
            config=config,
            val_f1_macro=float("nan"),
            best_epoch=0,
            error=f"{type(exc).__name__}: {exc}",
            log=[],
        )


def random_search(
    space: SearchSpace,
    train: Sequence[LabeledExample],
    val: Sequence[LabeledExample],
    variant: str = "hea",
    criterion: str = "q5",
    workers: int = 1,
) -> tuple[TrainConfig, list[TrialResult]]:
    """Independently sampled configurations, one per trial.

    Trial i draws its configuration and trains with seed base_seed + i, so
    results do not depend on execution order; the winner is the highest
    validation F1-macro with ties going to the lowest trial index. Failed
    trials are recorded, not fatal.
    """
    if not train:
        raise DiscernError("random_search needs training examples")
    embed_dim = int(train[0].sentences[0].shape[1])
    jobs = []
    for i in range(space.n_trials):
        trial_seed = space.base_seed + i
        rng = np.random.default_rng(trial_seed)
        config = space.sample(rng, variant, criterion, embed_dim)
        config = replace(config, seed=trial_seed)
        jobs.append((i, config, list(train), list(val)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(job) for job in jobs]
    best: TrialResult | None = None
    for r in results:
        if r.error is not None:
            continue
        if best is None or r.val_f1_macro > best.val_f1_macro:
            best = r
    if best is None:
        raise DiscernError("every search trial failed")
    return best.config, results
