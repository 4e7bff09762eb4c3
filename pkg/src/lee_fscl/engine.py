"""Few-shot class-incremental training with latent embedding exploitation.

Two copies of the pretrained extractor are kept per run: a frozen one that
produces the temporary embedding and a learned one that trains together with
the classifier head. The training objective per batch is

    alpha * mean(1 - cos(z_c, z_learned))       # pull toward the preserved embedding
    + (1 - alpha) * mean(cos(z_frozen, z_learned))  # push away from the frozen embedding
    + mean cross-entropy

Baselines reuse the same loop with the cosine terms switched off.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .data import FewShotSplit, make_fewshot_split
from .errors import ConfigError, ProtocolError
from .metrics import MetricsRecord, forgetting, make_record
from .model import (
    Checkpoint,
    ClassifierHead,
    ExtractorParams,
    ModelConfig,
    classify,
    embedding_backward,
    expand_head,
    extract_embedding,
    init_head,
    init_params,
    param_hash,
)
from .numerics import AdamState, adam_step, cosine_similarity, cosine_similarity_grad, cross_entropy, softmax

MODES = ("lee", "vanilla_ft", "scratch_lstm", "lee_no_preserved", "lee_no_temporary")
CLS_ONLY_MODES = ("vanilla_ft", "scratch_lstm")
N_BASE = 2


@dataclass
class LeeConfig:
    alpha: float = 0.5
    shots: int = 5
    epochs: int = 15
    lr: float = 1e-3
    mode: str = "lee"
    dropout: float = 0.5
    frozen_dropout: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")

    @property
    def effective_alpha(self) -> float:
        if self.mode == "lee_no_preserved":
            return 0.0
        if self.mode == "lee_no_temporary":
            return 1.0
        return self.alpha

    @property
    def uses_embeddings(self) -> bool:
        return self.mode not in CLS_ONLY_MODES


@dataclass
class LossBreakdown:
    total: float
    ci: float
    ii: float
    cls: float
    alpha: float


class MemoryBuffer:
    """Replay memory holding exactly the k training samples of every finished class."""

    def __init__(self, k: int):
        self.k = k
        self._store: OrderedDict = OrderedDict()

    def add(self, label, samples) -> None:
        if label in self._store:
            raise ProtocolError(f"class {label!r} already in the buffer")
        if len(samples) != self.k:
            raise ProtocolError(f"buffer expects {self.k} samples for {label!r}, got {len(samples)}")
        self._store[label] = list(samples)

    def classes(self) -> list:
        return list(self._store)

    def samples(self) -> list:
        return [s for items in self._store.values() for s in items]

    def __len__(self) -> int:
        return sum(len(v) for v in self._store.values())

    def __contains__(self, label) -> bool:
        return label in self._store


@dataclass
class SessionState:
    frozen: ExtractorParams
    learned: ExtractorParams
    head: ClassifierHead
    z_c: np.ndarray | None
    buffer: MemoryBuffer
    class_order: list
    config: LeeConfig
    rng: np.random.Generator
    session: int = 0
    frozen_hash: str = ""
    z_c_hash: str = ""
    # eval-mode frozen embeddings by sample identity; the sample is kept alive alongside
    frozen_cache: dict = field(default_factory=dict)

    def frozen_embeddings(self, batch) -> np.ndarray:
        missing = [s for s in batch if id(s) not in self.frozen_cache]
        if missing:
            z, _ = extract_embedding(self.frozen, _stack(missing), train=False)
            for s, row in zip(missing, z):
                self.frozen_cache[id(s)] = (s, row)
        return np.stack([self.frozen_cache[id(s)][1] for s in batch])

    def check_frozen(self) -> None:
        assert param_hash(self.frozen) == self.frozen_hash, "frozen extractor was modified"
        assert _array_hash(self.z_c) == self.z_c_hash, "preserved embedding was modified"


def _array_hash(arr) -> str:
    if arr is None:
        return ""
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def begin_run(checkpoint: Checkpoint | None, z_c, class_order, config: LeeConfig, seed: int = 0) -> SessionState:
    class_order = list(class_order)
    if len(class_order) < N_BASE:
        raise ProtocolError(f"class order needs at least {N_BASE} classes")
    if len(set(class_order)) != len(class_order):
        raise ProtocolError("class order contains duplicates")
    rng = np.random.default_rng(seed)
    if config.mode == "scratch_lstm":
        mc = checkpoint.config if checkpoint is not None else config.model
        learned = init_params(rng, mc)
        frozen = learned.copy()
        z_c = None
    else:
        if checkpoint is None:
            raise ProtocolError(f"mode {config.mode} needs a pretrained checkpoint")
        frozen = checkpoint.extractor.copy()
        learned = frozen.copy()
        if config.uses_embeddings:
            if z_c is None:
                raise ProtocolError("LEE modes need a preserved embedding")
            z_c = np.array(z_c, dtype=np.float64)
            if z_c.shape != (frozen.embed,):
                raise ProtocolError(f"preserved embedding shape {z_c.shape} does not match extractor")
        else:
            z_c = None
    head = init_head(rng, class_order[:N_BASE], learned.embed)
    state = SessionState(frozen, learned, head, z_c, MemoryBuffer(config.shots), class_order, config, rng)
    state.frozen_hash = param_hash(frozen)
    state.z_c_hash = _array_hash(z_c)
    return state


def _stack(samples):
    return np.stack([s.seq for s in samples])


def compute_lee_loss(state: SessionState, batch, train: bool = True, rng=None, need_grad: bool = True):
    """Loss breakdown and gradients for the learned extractor and head.

    ``rng`` drives dropout masks (defaults to the run's generator); passing a
    freshly seeded generator makes repeated calls see identical masks.
    With ``need_grad=False`` the backward pass is skipped and grads is None.
    """
    if not batch:
        raise ProtocolError("empty batch")
    cfg = state.config
    rng = state.rng if rng is None else rng
    y = np.array([state.head.index(s.label) for s in batch])
    X = _stack(batch)
    B = len(batch)

    z, trace = extract_embedding(state.learned, X, train=train, rng=rng, p=cfg.dropout)
    probs = softmax(classify(state.head, z))
    l_cls = float(np.mean(cross_entropy(probs, y)))
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    dz = dlogits @ state.head.W_c

    alpha = cfg.effective_alpha
    l_ci = l_ii = 0.0
    if cfg.uses_embeddings:
        z_c = np.broadcast_to(state.z_c, z.shape)
        l_ci = float(np.mean(1.0 - _row_cosine(z_c, z)))
        if train and cfg.frozen_dropout:
            z_f, _ = extract_embedding(state.frozen, X, train=True, rng=rng, p=cfg.dropout)
        else:
            z_f = state.frozen_embeddings(batch)
        l_ii = float(np.mean(_row_cosine(z_f, z)))
        if need_grad:
            _, g_ci = cosine_similarity_grad(z_c, z)
            _, g_ii = cosine_similarity_grad(z_f, z)
            dz = dz - (alpha / B) * g_ci + ((1.0 - alpha) / B) * g_ii
    else:
        alpha = cfg.alpha
    total = alpha * l_ci + (1.0 - alpha) * l_ii + l_cls
    if not need_grad:
        return LossBreakdown(total, l_ci, l_ii, l_cls, alpha), None

    grads = embedding_backward(state.learned, trace, dz)
    grads["W_c"] = dlogits.T @ z
    grads["b_c"] = dlogits.sum(axis=0)
    return LossBreakdown(total, l_ci, l_ii, l_cls, alpha), grads


def _row_cosine(a, b):
    return np.atleast_1d(cosine_similarity(a, b))


def train_session(state: SessionState, new_samples: dict) -> list[LossBreakdown]:
    """Learn the classes in ``new_samples`` (class -> k samples) replaying the buffer."""
    cfg = state.config
    for label, items in new_samples.items():
        if label in state.buffer:
            raise ProtocolError(f"class {label!r} was already learned")
        if len(items) != cfg.shots:
            raise ProtocolError(f"class {label!r} has {len(items)} samples, expected {cfg.shots}")
        if label not in state.head.classes:
            state.head = expand_head(state.head, label, state.rng)

    new = [s for items in new_samples.values() for s in items]
    replay = state.buffer.samples()
    batch = new + replay
    batch_labels = {s.label for s in batch}
    assert all(c in batch_labels for c in state.buffer.classes()), "replay batch misses a learned class"

    adam = AdamState(lr=cfg.lr)
    history = []
    for _ in range(cfg.epochs):
        losses, grads = compute_lee_loss(state, batch, train=True)
        assert abs(losses.total - (losses.alpha * losses.ci + (1 - losses.alpha) * losses.ii + losses.cls)) <= 1e-12
        assert 0.0 <= losses.ci <= 2.0 and -1.0 <= losses.ii <= 1.0
        history.append(losses)
        adam_step({**state.learned.arrays(), **state.head.arrays()}, grads, adam)

    for label, items in new_samples.items():
        state.buffer.add(label, items)
    state.session += 1
    assert len(state.buffer) == cfg.shots * len(state.buffer.classes())
    state.check_frozen()
    return history


def predict_samples(state: SessionState, samples) -> list:
    z, _ = extract_embedding(state.learned, _stack(samples), train=False)
    idx = np.argmax(classify(state.head, z), axis=1)
    return [state.head.classes[i] for i in idx]


def evaluate(state: SessionState, samples, session: int | None = None) -> MetricsRecord:
    for s in samples:
        state.head.index(s.label)
    preds = predict_samples(state, samples)
    pairs = [(s.label, p) for s, p in zip(samples, preds)]
    return make_record(state.session - 1 if session is None else session, pairs, state.head.classes)


def session_plan(class_order) -> list[list]:
    """Classes introduced per session: the first two together, then one at a time."""
    order = list(class_order)
    return [order[:N_BASE]] + [[c] for c in order[N_BASE:]]


@dataclass
class RunResult:
    records: list
    loss_log: list
    forgetting: object
    split: FewShotSplit


def run_protocol(state: SessionState, split: FewShotSplit) -> RunResult:
    records, loss_log = [], []
    seen = []
    for i, classes in enumerate(session_plan(state.class_order)):
        missing = [c for c in classes if c not in split.train]
        if missing:
            raise ProtocolError(f"split has no data for classes {missing}")
        loss_log.append(train_session(state, {c: split.train[c] for c in classes}))
        seen.extend(classes)
        test = [s for c in seen for s in split.test[c]]
        records.append(evaluate(state, test, session=i))
    return RunResult(records, loss_log, forgetting(records, state.class_order, N_BASE), split)


def run_single(checkpoint, z_c, samples, class_order, config: LeeConfig, seed: int) -> RunResult:
    """Split the target samples, then run every session for one (seed, order) cell.

    The split depends only on ``seed`` so different modes see identical data.
    """
    wanted = set(class_order)
    split = make_fewshot_split([s for s in samples if s.label in wanted], config.shots, seed)
    state = begin_run(checkpoint, z_c, class_order, config, seed=seed + 1)
    return run_protocol(state, split)


def run_baseline(mode: str, checkpoint, samples, class_order, config: LeeConfig, seed: int) -> RunResult:
    if mode not in CLS_ONLY_MODES:
        raise ConfigError(f"{mode!r} is not a baseline mode")
    cfg = LeeConfig(**{**config.__dict__, "mode": mode})
    return run_single(checkpoint, None, samples, class_order, cfg, seed)
