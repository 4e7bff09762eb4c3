"""Feature extractor (LSTM -> dropout -> linear embedding), classifier head, checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpoint,
    NumericsError,
    ProtocolError,
)
from .numerics import dropout, lstm_backward, lstm_forward

CHECKPOINT_MAGIC = "LEE-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    embed: int = 14
    length: int = 50
    n_axes: int = 3
    dropout: float = 0.5


@dataclass
class ExtractorParams:
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray
    W_p: np.ndarray
    b_p: np.ndarray

    NAMES = ("W_x", "W_h", "b", "W_p", "b_p")

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}

    def copy(self) -> "ExtractorParams":
        return ExtractorParams(**{n: a.copy() for n, a in self.arrays().items()})

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    @property
    def embed(self) -> int:
        return self.W_p.shape[0]


@dataclass
class ClassifierHead:
    W_c: np.ndarray
    b_c: np.ndarray
    classes: list = field(default_factory=list)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W_c": self.W_c, "b_c": self.b_c}

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.W_c.copy(), self.b_c.copy(), list(self.classes))

    def index(self, class_id) -> int:
        try:
            return self.classes.index(class_id)
        except ValueError:
            raise ProtocolError(f"class {class_id!r} is not registered in the head") from None


@dataclass
class PreservedEmbedding:
    """Fixed source-domain embedding the learned extractor is pulled toward."""

    z_c: np.ndarray
    subjects: list = field(default_factory=list)
    gestures: list = field(default_factory=list)
    checkpoint_hash: str = ""
    strategy: str = "mean"


@dataclass
class ScalerStats:
    center: np.ndarray  # per-axis mean (or median)
    iqr: np.ndarray
    method: str = "mean"


@dataclass
class Checkpoint:
    config: ModelConfig
    extractor: ExtractorParams
    head: ClassifierHead | None = None
    preserved: PreservedEmbedding | None = None
    scaler: ScalerStats | None = None
    provenance: dict = field(default_factory=dict)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(rng: np.random.Generator, config: ModelConfig = ModelConfig()) -> ExtractorParams:
    H, E, D = config.hidden, config.embed, config.n_axes
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0  # forget gate
    return ExtractorParams(
        W_x=_uniform(rng, (4 * H, D), D),
        W_h=_uniform(rng, (4 * H, H), H),
        b=b,
        W_p=_uniform(rng, (E, H), H),
        b_p=np.zeros(E),
    )


def init_head(rng: np.random.Generator, classes, embed: int) -> ClassifierHead:
    classes = list(classes)
    if not classes:
        raise ProtocolError("a head needs at least one class")
    if len(set(classes)) != len(classes):
        raise ProtocolError("duplicate classes in head registry")
    return ClassifierHead(_uniform(rng, (len(classes), embed), embed), np.zeros(len(classes)), classes)


def expand_head(head: ClassifierHead, new_class, rng: np.random.Generator) -> ClassifierHead:
    if new_class in head.classes:
        raise ProtocolError(f"class {new_class!r} already registered")
    E = head.W_c.shape[1]
    row = _uniform(rng, (1, E), E)
    return ClassifierHead(
        np.vstack([head.W_c, row]),
        np.append(head.b_c, 0.0),
        head.classes + [new_class],
    )


@dataclass
class EmbeddingTrace:
    lstm: object
    h_last: np.ndarray
    mask: np.ndarray
    squeeze: bool


def extract_embedding(params: ExtractorParams, seqs, train: bool = False, rng=None, p: float = 0.5):
    """Embed one sequence (L x 3) or a batch (B x L x 3).

    Returns ``(z, trace)``; z is E or B x E. Dropout sits between the last
    hidden state and the projection and only fires when ``train`` is true.
    """
    _, lstm_trace = lstm_forward(params.W_x, params.W_h, params.b, seqs)
    h_last = lstm_trace.hs[:, -1]
    dropped, mask = dropout(h_last, p, train, rng)
    z = dropped @ params.W_p.T + params.b_p
    trace = EmbeddingTrace(lstm_trace, h_last, mask, lstm_trace.squeeze)
    return (z[0] if trace.squeeze else z), trace


def embedding_backward(params: ExtractorParams, trace: EmbeddingTrace, grad_z) -> dict[str, np.ndarray]:
    grad_z = np.atleast_2d(np.asarray(grad_z, dtype=np.float64))
    dropped = trace.h_last * trace.mask
    grads = {"W_p": grad_z.T @ dropped, "b_p": grad_z.sum(axis=0)}
    grad_h = (grad_z @ params.W_p) * trace.mask
    lstm_grads, _ = lstm_backward(params.W_x, params.W_h, trace.lstm, grad_h)
    grads.update(lstm_grads)
    return grads


def classify(head: ClassifierHead, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != head.W_c.shape[1]:
        raise NumericsError(f"embedding dim {z.shape[-1]} does not match head {head.W_c.shape[1]}")
    return z @ head.W_c.T + head.b_c


def predict(head: ClassifierHead, z):
    """Predicted class ids; np.argmax already breaks ties toward the lowest index."""
    idx = np.argmax(classify(head, z), axis=-1)
    if np.ndim(idx) == 0:
        return head.classes[int(idx)]
    return [head.classes[i] for i in idx]


def param_hash(params: ExtractorParams) -> str:
    h = hashlib.sha256()
    for name, arr in params.arrays().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


# checkpoint I/O ---------------------------------------------------------------

def _checkpoint_arrays(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    arrays = {f"extractor.{k}": v for k, v in ckpt.extractor.arrays().items()}
    if ckpt.head is not None:
        arrays.update({f"head.{k}": v for k, v in ckpt.head.arrays().items()})
    if ckpt.preserved is not None:
        arrays["preserved.z_c"] = ckpt.preserved.z_c
    if ckpt.scaler is not None:
        arrays["scaler.center"] = ckpt.scaler.center
        arrays["scaler.iqr"] = ckpt.scaler.iqr
    return arrays


def save_checkpoint(ckpt: Checkpoint, path, dtype: str = "<f8") -> None:
    """Write a single-file checkpoint: two text header lines then raw little-endian arrays.

    ``dtype`` may be ``"<f4"`` for compact files; the default keeps float64 so
    a round trip is bit-exact.
    """
    if dtype not in ("<f8", "<f4"):
        raise ValueError(f"unsupported checkpoint dtype {dtype}")
    manifest = []
    chunks = []
    offset = 0
    for name, arr in _checkpoint_arrays(ckpt).items():
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    cfg = ckpt.config
    header = {
        "config": {"hidden": cfg.hidden, "embed": cfg.embed, "length": cfg.length,
                   "n_axes": cfg.n_axes, "dropout": cfg.dropout},
        "arrays": manifest,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "head_classes": None if ckpt.head is None else list(ckpt.head.classes),
        "preserved": None if ckpt.preserved is None else {
            "subjects": ckpt.preserved.subjects, "gestures": ckpt.preserved.gestures,
            "checkpoint_hash": ckpt.preserved.checkpoint_hash, "strategy": ckpt.preserved.strategy},
        "scaler_method": None if ckpt.scaler is None else ckpt.scaler.method,
        "provenance": ckpt.provenance,
    }
    text = f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n{json.dumps(header, sort_keys=True)}\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(text.encode("utf-8"))
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    try:
        first_nl = data.index(b"\n")
        second_nl = data.index(b"\n", first_nl + 1)
        magic, version = data[:first_nl].decode("utf-8").split(" ")
    except (ValueError, UnicodeDecodeError):
        raise CorruptCheckpoint(f"{path}: unreadable header") from None
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    if version != str(CHECKPOINT_VERSION):
        raise CheckpointVersionError(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    try:
        header = json.loads(data[first_nl + 1:second_nl])
    except json.JSONDecodeError:
        raise CorruptCheckpoint(f"{path}: malformed header json") from None
    payload = data[second_nl + 1:]
    if len(payload) != header["payload_bytes"]:
        raise CorruptCheckpoint(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpoint(f"{path}: payload checksum mismatch")

    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).astype(np.float64)
        arrays[entry["name"]] = arr.reshape(entry["shape"])

    config = ModelConfig(**header["config"])
    H, E, D = config.hidden, config.embed, config.n_axes
    expected = {"extractor.W_x": (4 * H, D), "extractor.W_h": (4 * H, H), "extractor.b": (4 * H,),
                "extractor.W_p": (E, H), "extractor.b_p": (E,)}
    for name, shape in expected.items():
        if name not in arrays or arrays[name].shape != shape:
            raise CheckpointShapeError(f"{path}: {name} missing or not shaped {shape}")
    extractor = ExtractorParams(**{n.split(".", 1)[1]: arrays[n] for n in expected})

    head = None
    if header["head_classes"] is not None:
        head = ClassifierHead(arrays["head.W_c"], arrays["head.b_c"], list(header["head_classes"]))
        if head.W_c.shape != (len(head.classes), E):
            raise CheckpointShapeError(f"{path}: head shape {head.W_c.shape} inconsistent")
    preserved = None
    if header["preserved"] is not None:
        z = arrays["preserved.z_c"]
        if z.shape != (E,):
            raise CheckpointShapeError(f"{path}: preserved embedding shape {z.shape}")
        preserved = PreservedEmbedding(z, **header["preserved"])
    scaler = None
    if header["scaler_method"] is not None:
        scaler = ScalerStats(arrays["scaler.center"], arrays["scaler.iqr"], header["scaler_method"])
    return Checkpoint(config, extractor, head, preserved, scaler, header["provenance"])
