"""Supervised source-domain pretraining and the preserved embedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ProtocolError
from .model import (
    Checkpoint,
    ModelConfig,
    PreservedEmbedding,
    classify,
    embedding_backward,
    extract_embedding,
    init_head,
    init_params,
    param_hash,
)
from .numerics import AdamState, adam_step, cross_entropy, softmax

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    gestures: list | None = None  # None -> first `n_gestures` source gestures in sorted order
    n_gestures: int = 16
    excluded_subject: str | None = None
    target_gestures: list = field(default_factory=list)
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)


@dataclass
class PretrainReport:
    epoch_loss: list = field(default_factory=list)
    heldout_accuracy: list = field(default_factory=list)
    train_subjects: list = field(default_factory=list)
    heldout_subject: str | None = None
    gestures: list = field(default_factory=list)
    batch_subjects_seen: set = field(default_factory=set)


def select_gestures(samples, config: PretrainConfig) -> list:
    available = sorted({s.label for s in samples})
    if config.gestures is not None:
        gestures = list(config.gestures)
        missing = set(gestures) - set(available)
        if missing:
            raise ConfigError(f"gestures not present in source data: {sorted(missing)}")
    else:
        gestures = available[:config.n_gestures]
    overlap = set(gestures) & set(config.target_gestures)
    if overlap:
        raise ConfigError(f"source gestures overlap target gestures: {sorted(overlap)}")
    return gestures


def _stack(samples):
    return np.stack([s.seq for s in samples])


def batch_accuracy(params, head, samples) -> float:
    if not samples:
        return float("nan")
    z, _ = extract_embedding(params, _stack(samples), train=False)
    pred = np.argmax(classify(head, z), axis=1)
    truth = np.array([head.index(s.label) for s in samples])
    return float(np.mean(pred == truth))


def train_source(samples, config: PretrainConfig) -> tuple[Checkpoint, PretrainReport]:
    """Train extractor + head with cross-entropy only, holding one subject out."""
    gestures = select_gestures(samples, config)
    chosen = [s for s in samples if s.label in gestures]
    train = [s for s in chosen if s.subject != config.excluded_subject]
    heldout = [s for s in chosen if s.subject == config.excluded_subject]
    if not train:
        raise ProtocolError("empty source training set")

    rng = np.random.default_rng(config.seed)
    mc = config.model
    params = init_params(rng, mc)
    head = init_head(rng, gestures, mc.embed)
    adam = AdamState(lr=config.lr)
    report = PretrainReport(train_subjects=sorted({s.subject for s in train}),
                            heldout_subject=config.excluded_subject, gestures=list(gestures))

    X = _stack(train)
    y = np.array([head.index(s.label) for s in train])
    subjects = np.array([s.subject for s in train])
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_subjects = set(subjects[idx].tolist())
            assert config.excluded_subject not in batch_subjects, "held-out subject leaked into training"
            report.batch_subjects_seen |= batch_subjects
            z, trace = extract_embedding(params, X[idx], train=True, rng=rng, p=mc.dropout)
            probs = softmax(classify(head, z))
            losses.append(float(np.mean(cross_entropy(probs, y[idx]))))
            dlogits = probs.copy()
            dlogits[np.arange(len(idx)), y[idx]] -= 1.0
            dlogits /= len(idx)
            grads = embedding_backward(params, trace, dlogits @ head.W_c)
            grads["W_c"] = dlogits.T @ z
            grads["b_c"] = dlogits.sum(axis=0)
            adam_step({**params.arrays(), **head.arrays()}, grads, adam)
        report.epoch_loss.append(float(np.mean(losses)))
        report.heldout_accuracy.append(batch_accuracy(params, head, heldout))
        log.info("pretrain epoch %d loss %.4f heldout acc %.3f", epoch + 1,
                 report.epoch_loss[-1], report.heldout_accuracy[-1])

    ckpt = Checkpoint(mc, params, head, provenance={
        "seed": config.seed,
        "excluded_subject": config.excluded_subject,
        "gestures": list(gestures),
        "train_subjects": report.train_subjects,
    })
    return ckpt, report


def compute_preserved_embedding(checkpoint: Checkpoint, samples, subjects=None, gestures=None,
                                strategy: str = "mean") -> PreservedEmbedding:
    """Reduce eval-mode embeddings of the selected source samples to one vector.

    ``strategy="mean"`` averages all sample embeddings; ``"class_mean"`` averages
    per-gesture means so unbalanced classes weigh equally.
    """
    chosen = [s for s in samples
              if (subjects is None or s.subject in subjects) and (gestures is None or s.label in gestures)]
    if not chosen:
        raise ProtocolError("preserved-embedding selection is empty")
    z, _ = extract_embedding(checkpoint.extractor, _stack(chosen), train=False)
    if strategy == "mean":
        z_c = z.mean(axis=0)
    elif strategy == "class_mean":
        labels = np.array([s.label for s in chosen])
        z_c = np.mean([z[labels == g].mean(axis=0) for g in sorted(set(labels))], axis=0)
    else:
        raise ConfigError(f"unknown reduction strategy {strategy!r}")
    return PreservedEmbedding(
        z_c=z_c,
        subjects=sorted({s.subject for s in chosen}),
        gestures=sorted({s.label for s in chosen}),
        checkpoint_hash=param_hash(checkpoint.extractor),
        strategy=strategy,
    )
