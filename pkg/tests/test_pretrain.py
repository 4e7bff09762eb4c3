import numpy as np
import pytest

from lee_fscl.data import MOTION_GESTURES, synth_generate, to_samples
from lee_fscl.engine import LeeConfig, begin_run, compute_lee_loss
from lee_fscl.errors import ConfigError, DegenerateEmbedding, ProtocolError
from lee_fscl.model import ModelConfig, PreservedEmbedding, extract_embedding, param_hash
from lee_fscl.pretrain import PretrainConfig, compute_preserved_embedding, select_gestures, train_source

SMALL = ModelConfig(hidden=16, embed=14, length=20)


@pytest.fixture(scope="module")
def source():
    rng = np.random.default_rng(0)
    trials = synth_generate(20, 3, "source", rng, subjects=[f"U{i}" for i in range(1, 8)])
    return to_samples(trials, SMALL.length)


@pytest.fixture(scope="module")
def pretrained(source):
    cfg = PretrainConfig(excluded_subject="U7", epochs=3, model=SMALL, seed=0)
    return train_source(source, cfg)


def test_default_subset_is_sixteen(pretrained):
    ckpt, report = pretrained
    assert len(ckpt.head.classes) == 16
    assert ckpt.head.W_c.shape == (16, 14)
    assert report.gestures == ckpt.head.classes


def test_loss_decreases_first_three_epochs(pretrained):
    loss = pretrained[1].epoch_loss
    assert loss[0] > loss[1] > loss[2]


def test_excluded_subject_never_trained(pretrained):
    ckpt, report = pretrained
    assert "U7" not in report.batch_subjects_seen
    assert "U7" not in report.train_subjects
    assert ckpt.provenance["excluded_subject"] == "U7"
    assert len(report.heldout_accuracy) == 3


def test_gesture_overlap_rejected(source):
    labels = sorted({s.label for s in source})
    with pytest.raises(ConfigError):
        select_gestures(source, PretrainConfig(target_gestures=[labels[0]]))
    with pytest.raises(ConfigError):
        select_gestures(source, PretrainConfig(gestures=["nope"]))
    assert select_gestures(source, PretrainConfig(n_gestures=4)) == labels[:4]


def test_single_sample_preserved_embedding(pretrained, source):
    ckpt = pretrained[0]
    one = source[0]
    pe = compute_preserved_embedding(ckpt, [one])
    z, _ = extract_embedding(ckpt.extractor, one.seq)
    np.testing.assert_array_equal(pe.z_c, z)
    assert pe.checkpoint_hash == param_hash(ckpt.extractor)
    assert pe.subjects == [one.subject] and pe.gestures == [one.label]


def test_preserved_embedding_deterministic(pretrained, source):
    a = compute_preserved_embedding(pretrained[0], source, subjects=["U1", "U2"])
    b = compute_preserved_embedding(pretrained[0], source, subjects=["U1", "U2"])
    np.testing.assert_array_equal(a.z_c, b.z_c)
    with pytest.raises(ProtocolError):
        compute_preserved_embedding(pretrained[0], source, subjects=["nobody"])
    with pytest.raises(ConfigError):
        compute_preserved_embedding(pretrained[0], source, strategy="median")


def test_opposite_embeddings_collapse_to_degenerate(pretrained, source):
    ckpt = pretrained[0]
    z, _ = extract_embedding(ckpt.extractor, source[0].seq)
    z_c = np.mean([z, -z], axis=0)
    np.testing.assert_array_equal(z_c, 0.0)
    state = begin_run(ckpt, z_c, list(MOTION_GESTURES), LeeConfig(model=SMALL))
    batch = to_samples(synth_generate(2, 1, "target", np.random.default_rng(1),
                                      class_names=list(MOTION_GESTURES[:2])), SMALL.length)
    batch = [s for s in batch if s.label in state.head.classes]
    with pytest.raises(DegenerateEmbedding):
        compute_lee_loss(state, batch, train=False)


def test_subset_grid_emits_one_vector_per_cell(pretrained, source):
    ckpt = pretrained[0]
    gestures = ckpt.head.classes
    subjects = pretrained[1].train_subjects
    cells = {}
    for n_p in (1, 3, 5, 7):
        for n_g in (4, 8, 12, 16):
            pe = compute_preserved_embedding(ckpt, source, subjects=subjects[:n_p], gestures=gestures[:n_g])
            assert isinstance(pe, PreservedEmbedding) and pe.z_c.shape == (14,)
            assert len(pe.gestures) == n_g and len(pe.subjects) == min(n_p, len(subjects))
            cells[(n_p, n_g)] = pe.z_c
    assert len(cells) == 16
