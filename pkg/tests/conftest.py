import numpy as np
import pytest

from lee_fscl.data import MOTION_GESTURES, Sample
from lee_fscl.engine import LeeConfig, begin_run, compute_lee_loss
from lee_fscl.gradcheck import max_relative_error, numerical_gradient
from lee_fscl.model import Checkpoint, ModelConfig, expand_head, init_head, init_params

TINY = ModelConfig(hidden=8, embed=4, length=6)


def make_samples(classes, reps, length, seed=0, subject="p1"):
    rng = np.random.default_rng(seed)
    out = []
    for ci, c in enumerate(classes):
        base = rng.normal(size=(length, 3))
        for r in range(reps):
            out.append(Sample(base + 0.3 * rng.normal(size=(length, 3)), c, subject, "target", r, True))
    return out


def lee_gradcheck(seed, alpha=0.5, mode="lee"):
    """Max relative error of the analytic LEE gradient vs central differences (H=8, E=4, L=6, C=3, B=4)."""
    rng = np.random.default_rng(seed)
    ckpt = Checkpoint(TINY, init_params(rng, TINY))
    classes = ["a", "b", "c"]
    state = begin_run(ckpt, rng.normal(size=TINY.embed), classes, LeeConfig(alpha=alpha, mode=mode, model=TINY), seed=seed)
    state.head = expand_head(state.head, "c", rng)
    for arr in state.learned.arrays().values():
        arr += rng.normal(0, 0.3, size=arr.shape)  # move away from the frozen copy
    batch = make_samples(classes, 2, TINY.length, seed=seed)[:4]
    batch[3] = make_samples(["c"], 1, TINY.length, seed=seed + 1)[0]

    def loss():
        return compute_lee_loss(state, batch, train=True, rng=np.random.default_rng(seed), need_grad=False)[0].total

    _, grads = compute_lee_loss(state, batch, train=True, rng=np.random.default_rng(seed))
    params = {**state.learned.arrays(), **state.head.arrays()}
    return max(max_relative_error(grads[n], numerical_gradient(loss, p)) for n, p in params.items())


@pytest.fixture
def tiny_checkpoint():
    rng = np.random.default_rng(123)
    params = init_params(rng, TINY)
    return Checkpoint(TINY, params, init_head(rng, ["src0", "src1"], TINY.embed))


@pytest.fixture
def tiny_target():
    return make_samples(list(MOTION_GESTURES), 8, TINY.length, seed=5)


@pytest.fixture
def tiny_zc():
    return np.array([0.5, -0.2, 0.9, 0.1])


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
