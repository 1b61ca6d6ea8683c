"""The generation chain: train the first ancestor, cache its per-sample
knowledge (tempered label distribution and regression slack) over the training
set, train each offspring against that cache, and repeat.

Knowledge flows one way. A generation's cache is computed once after its
training finishes and is frozen; no gradient or update ever reaches an
ancestor. Each generation reuses the full epoch budget and learning-rate
schedule, and all randomness (init, shuffling) is derived from config seeds
plus the generation index, so chains are reproducible byte for byte and can
be resumed from any completed generation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import AgeRange, DataConfig, Dataset, datasets_from_config
from .errors import ConfigError, DivergenceError
from .inference import evaluate
from .losses import LossBundle, total_ancestor_batch, total_evolution_batch
from .metrics import CA_LEVELS, EvalReport
from .model import (
    ModelParams,
    OptimizerState,
    backward,
    checkpoint_dict,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .numerics import softmax_rows

RUN_LOG_NAME = "run_log.csv"
RUN_LOG_HEADER = "t,train_loss,test_mae,ca3,ca5,ca7,mean_slack"

_RUN_FIELDS = (
    "tau",
    "alpha",
    "lambda1",
    "lambda_t",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_decay_factor",
    "lr_decay_interval",
    "generations",
    "warm_start",
    "init_seed",
    "shuffle_seed",
    "trunk_dims",
    "activation",
    "head_mode",
    "kl_tau_square_rescale",
    "ce_at_transfer_tau",
    "inference_tau",
)


@dataclass
class RunConfig:
    """Every knob of one chain run; strict about its key set."""

    tau: float
    alpha: float
    lambda1: float
    lambda_t: float
    epochs: int
    batch_size: int
    lr: float
    momentum: float
    weight_decay: float
    lr_decay_factor: float
    lr_decay_interval: int
    generations: int
    warm_start: bool
    init_seed: int
    shuffle_seed: int
    trunk_dims: list[int]
    activation: str
    head_mode: str
    kl_tau_square_rescale: bool
    ce_at_transfer_tau: bool
    inference_tau: float

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run: expected an object")
        for key in d:
            if key not in _RUN_FIELDS:
                raise ConfigError(f"run: unknown key '{key}'")
        for key in _RUN_FIELDS:
            if key not in d:
                raise ConfigError(f"run: missing key '{key}'")
        cfg = cls(**{k: d[k] for k in _RUN_FIELDS})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _RUN_FIELDS}

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigError(f"run.tau must be positive, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"run.alpha must lie in [0, 1], got {self.alpha}")
        if not self.lambda1 > 0 or not self.lambda_t > 0:
            raise ConfigError("run.lambda1 and run.lambda_t must be positive")
        if self.epochs < 0:
            raise ConfigError("run.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("run.batch_size must be >= 1")
        if self.lr < 0 or not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise ConfigError("run: invalid optimizer settings")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError("run.lr_decay_factor must lie in (0, 1]")
        if self.lr_decay_interval < 1:
            raise ConfigError("run.lr_decay_interval must be >= 1")
        if self.generations < 1:
            raise ConfigError("run.generations must be >= 1")
        if self.init_seed < 0 or self.shuffle_seed < 0:
            raise ConfigError("run seeds must be non-negative")
        if self.activation != "relu":
            raise ConfigError(f"run.activation must be 'relu', got '{self.activation}'")
        if self.head_mode not in ("both", "ldl", "reg"):
            raise ConfigError(f"run.head_mode must be both|ldl|reg, got '{self.head_mode}'")
        if not self.inference_tau > 0:
            raise ConfigError("run.inference_tau must be positive")
        if not isinstance(self.trunk_dims, list) or any(
            not isinstance(h, int) or h < 1 for h in self.trunk_dims
        ):
            raise ConfigError("run.trunk_dims must be a list of positive ints")


@dataclass
class KnowledgeCache:
    """Frozen per-sample outputs of one generation over the training set."""

    probs: np.ndarray  # (n, k), distributions at the transfer temperature
    deltas: np.ndarray  # (n,), absolute regression errors
    generation: int

    def __post_init__(self):
        if self.probs.ndim != 2 or self.deltas.shape != (self.probs.shape[0],):
            raise ValueError(
                f"cache shapes inconsistent: probs {self.probs.shape}, deltas {self.deltas.shape}"
            )
        if self.deltas.min() < 0:
            raise ValueError("cache deltas must be non-negative")

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def mean_slack(self) -> float:
        return float(self.deltas.mean())


@dataclass
class GenerationState:
    """One completed link of the chain."""

    t: int
    params: ModelParams
    cache: KnowledgeCache
    eval_report: EvalReport | None
    mean_slack: float


def cache_knowledge(params: ModelParams, dataset: Dataset, tau: float, generation: int) -> KnowledgeCache:
    """Pure inference over the training set: tempered distributions plus slacks."""
    trace = forward(params, dataset.features)
    probs = softmax_rows(trace.z, tau)
    deltas = np.abs(trace.s - dataset.y)
    return KnowledgeCache(probs=probs, deltas=deltas, generation=generation)


def _batch_objective(
    trace,
    hot_idx: np.ndarray,
    y: np.ndarray,
    cfg: RunConfig,
    ancestor_cache: KnowledgeCache | None,
    prev_rows: np.ndarray | None,
    prev_deltas: np.ndarray | None,
) -> LossBundle:
    if ancestor_cache is None:
        p1 = softmax_rows(trace.z, 1.0)
        return total_ancestor_batch(p1, hot_idx, trace.s, y, cfg.lambda1, cfg.head_mode)
    p_tau = softmax_rows(trace.z, cfg.tau)
    if cfg.ce_at_transfer_tau:
        p_ce, ce_tau = p_tau, cfg.tau
    else:
        p_ce, ce_tau = softmax_rows(trace.z, 1.0), 1.0
    return total_evolution_batch(
        p_tau=p_tau,
        p_prev=prev_rows,
        p_ce=p_ce,
        hot_idx=hot_idx,
        s=trace.s,
        y=y,
        deltas=prev_deltas,
        alpha=cfg.alpha,
        lambda_t=cfg.lambda_t,
        tau=cfg.tau,
        ce_tau=ce_tau,
        kl_tau_square_rescale=cfg.kl_tau_square_rescale,
        head_mode=cfg.head_mode,
    )


def full_objective(
    params: ModelParams,
    dataset: Dataset,
    cfg: RunConfig,
    ancestor_cache: KnowledgeCache | None = None,
) -> LossBundle:
    """The generation objective evaluated in one pass over a whole dataset."""
    if ancestor_cache is not None and ancestor_cache.n != len(dataset):
        raise ValueError(
            f"cache holds {ancestor_cache.n} samples but dataset has {len(dataset)}"
        )
    trace = forward(params, dataset.features)
    prev_rows = ancestor_cache.probs if ancestor_cache is not None else None
    prev_deltas = ancestor_cache.deltas if ancestor_cache is not None else None
    return _batch_objective(
        trace, dataset.onehot_indices, dataset.y, cfg, ancestor_cache, prev_rows, prev_deltas
    )


def _sgd_train(
    dataset: Dataset,
    cfg: RunConfig,
    params: ModelParams,
    generation: int,
    ancestor_cache: KnowledgeCache | None,
) -> ModelParams:
    """Minibatch SGD for one generation; shuffle order is seeded per generation."""
    n = len(dataset)
    X = dataset.features
    hot = dataset.onehot_indices
    yv = dataset.y
    rng = np.random.default_rng([cfg.shuffle_seed, generation])
    opt = OptimizerState.for_params(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_interval)
        order = rng.permutation(n)
        for bi, b0 in enumerate(range(0, n, cfg.batch_size)):
            idx = order[b0 : b0 + cfg.batch_size]
            trace = forward(params, X[idx])
            bundle = _batch_objective(
                trace,
                hot[idx],
                yv[idx],
                cfg,
                ancestor_cache,
                ancestor_cache.probs[idx] if ancestor_cache is not None else None,
                ancestor_cache.deltas[idx] if ancestor_cache is not None else None,
            )
            if not np.isfinite(bundle.total):
                raise DivergenceError(
                    f"non-finite loss at generation {generation}, epoch {epoch}, batch {bi}"
                )
            grads = backward(trace, bundle.d_z, bundle.d_s)
            try:
                params = sgd_step(params, grads, opt)
            except DivergenceError as e:
                raise DivergenceError(
                    f"generation {generation}, epoch {epoch}, batch {bi}: {e}"
                ) from None
    return params


def _evaluate_state(params: ModelParams, test: Dataset | None, cfg: RunConfig, eval_sigma):
    if test is None:
        return None
    return evaluate(params, test, cfg.head_mode, cfg.inference_tau, eval_sigma)


def train_ancestor(
    train: Dataset,
    cfg: RunConfig,
    test: Dataset | None = None,
    eval_sigma: float | None = None,
) -> GenerationState:
    """Train generation 1 from a seeded init on ground truth alone."""
    params = init_params(
        train.feature_dim, list(cfg.trunk_dims), train.age_range.k, cfg.init_seed, cfg.activation
    )
    params = _sgd_train(train, cfg, params, generation=1, ancestor_cache=None)
    cache = cache_knowledge(params, train, cfg.tau, generation=1)
    return GenerationState(
        t=1,
        params=params,
        cache=cache,
        eval_report=_evaluate_state(params, test, cfg, eval_sigma),
        mean_slack=cache.mean_slack,
    )


def train_offspring(
    train: Dataset,
    cfg: RunConfig,
    ancestor: GenerationState,
    test: Dataset | None = None,
    eval_sigma: float | None = None,
) -> GenerationState:
    """Train generation t+1 against the ancestor's frozen cache."""
    if ancestor.cache.n != len(train):
        raise ValueError(
            f"ancestor cache holds {ancestor.cache.n} samples, dataset has {len(train)}"
        )
    t = ancestor.t + 1
    if cfg.warm_start:
        params = ancestor.params.copy()
    else:
        params = init_params(
            train.feature_dim,
            list(cfg.trunk_dims),
            train.age_range.k,
            cfg.init_seed + t - 1,
            cfg.activation,
        )
    params = _sgd_train(train, cfg, params, generation=t, ancestor_cache=ancestor.cache)
    cache = cache_knowledge(params, train, cfg.tau, generation=t)
    return GenerationState(
        t=t,
        params=params,
        cache=cache,
        eval_report=_evaluate_state(params, test, cfg, eval_sigma),
        mean_slack=cache.mean_slack,
    )


def evolve(
    train: Dataset,
    test: Dataset | None,
    cfg: RunConfig,
    eval_sigma: float | None = None,
) -> list[GenerationState]:
    """Run the whole chain in memory and return one state per generation."""
    states = [train_ancestor(train, cfg, test, eval_sigma)]
    for _ in range(1, cfg.generations):
        states.append(train_offspring(train, cfg, states[-1], test, eval_sigma))
    return states


# --- run-directory persistence ---

CACHE_MAGIC = b"CENK"
CACHE_VERSION = 1


def save_cache(cache: KnowledgeCache, path: str | Path) -> None:
    """Binary cache: magic, version, n, k header then per-sample probs + delta."""
    n, k = cache.probs.shape
    header = CACHE_MAGIC + struct.pack("<III", CACHE_VERSION, n, k)
    body = np.empty((n, k + 1), dtype="<f8")
    body[:, :k] = cache.probs
    body[:, k] = cache.deltas
    Path(path).write_bytes(header + body.tobytes())


def load_cache(path: str | Path, generation: int) -> KnowledgeCache:
    raw = Path(path).read_bytes()
    if raw[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a knowledge cache (bad magic {raw[:4]!r})")
    version, n, k = struct.unpack("<III", raw[4:16])
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    body = np.frombuffer(raw[16:], dtype="<f8")
    if body.size != n * (k + 1):
        raise ValueError(f"{path}: truncated cache body")
    body = body.reshape(n, k + 1)
    return KnowledgeCache(probs=body[:, :k].copy(), deltas=body[:, k].copy(), generation=generation)


def gen_dir(out: Path, t: int) -> Path:
    return out / f"gen_{t}"


def _optimizer_doc(cfg: RunConfig) -> dict:
    return {
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "weight_decay": cfg.weight_decay,
        "lr_decay_factor": cfg.lr_decay_factor,
        "lr_decay_interval": cfg.lr_decay_interval,
    }


def _log_row(t: int, train_loss: float, report: EvalReport, mean_slack: float) -> str:
    cells = [str(t), repr(float(train_loss)), repr(float(report.mae))]
    cells.extend(repr(float(report.ca[n])) for n in CA_LEVELS)
    cells.append(repr(float(mean_slack)))
    return ",".join(cells)


def _logged_generations(log_path: Path) -> set[int]:
    if not log_path.exists():
        return set()
    rows = log_path.read_text().splitlines()
    return {int(r.split(",", 1)[0]) for r in rows[1:] if r.strip()}


def _append_log_row(log_path: Path, row: str) -> None:
    if not log_path.exists():
        log_path.write_text(RUN_LOG_HEADER + "\n" + row + "\n")
    else:
        with log_path.open("a") as fh:
            fh.write(row + "\n")


def generation_complete(out: Path, t: int) -> bool:
    d = gen_dir(out, t)
    return (d / "checkpoint.json").exists() and (d / "cache.bin").exists()


def _write_generation(out: Path, state: GenerationState, cfg: RunConfig, age_range: AgeRange) -> None:
    d = gen_dir(out, state.t)
    d.mkdir(parents=True, exist_ok=True)
    doc = checkpoint_dict(
        state.params,
        age_range,
        generation_index=state.t,
        optimizer=_optimizer_doc(cfg),
        rng_seed=cfg.init_seed,
        warm_start=cfg.warm_start,
    )
    save_checkpoint(d / "checkpoint.json", doc)
    save_cache(state.cache, d / "cache.bin")


def _load_generation(
    out: Path, t: int, test: Dataset | None, cfg: RunConfig, eval_sigma
) -> GenerationState:
    d = gen_dir(out, t)
    params, doc = load_checkpoint(d / "checkpoint.json")
    if doc["generation_index"] != t:
        raise ValueError(f"{d}: checkpoint generation {doc['generation_index']} != {t}")
    cache = load_cache(d / "cache.bin", generation=t)
    return GenerationState(
        t=t,
        params=params,
        cache=cache,
        eval_report=_evaluate_state(params, test, cfg, eval_sigma),
        mean_slack=cache.mean_slack,
    )


def run(
    data_cfg: DataConfig,
    run_cfg: RunConfig,
    out: str | Path,
    resume: bool = False,
) -> list[GenerationState]:
    """Execute (or resume) a chain, writing checkpoints, caches, and the run log.

    A generation is complete once both its checkpoint and cache exist; resume
    reuses completed generations verbatim and retrains from the first missing
    one. Log rows are appended only for generations that lack one, so an
    interrupted and resumed run produces the same bytes as an uninterrupted one.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = datasets_from_config(data_cfg)
    log_path = out / RUN_LOG_NAME
    logged = _logged_generations(log_path)
    states: list[GenerationState] = []
    prev: GenerationState | None = None
    for t in range(1, run_cfg.generations + 1):
        if resume and generation_complete(out, t):
            state = _load_generation(out, t, test, run_cfg, data_cfg.eval_sigma)
        else:
            if prev is None:
                state = train_ancestor(train, run_cfg, test, data_cfg.eval_sigma)
            else:
                state = train_offspring(train, run_cfg, prev, test, data_cfg.eval_sigma)
            _write_generation(out, state, run_cfg, train.age_range)
        if t not in logged:
            ancestor_cache = prev.cache if prev is not None else None
            train_loss = full_objective(state.params, train, run_cfg, ancestor_cache).total
            _append_log_row(log_path, _log_row(t, train_loss, state.eval_report, state.mean_slack))
        states.append(state)
        prev = state
    return states


def config_with_generations(cfg: RunConfig, generations: int) -> RunConfig:
    return replace(cfg, generations=generations)
