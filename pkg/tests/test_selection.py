import math

import numpy as np
import pytest

from complab.augment import sample_rng
from complab.errors import ConfigError
from complab.losses import KDConfig
from complab.models import BlockSpec, ModelSpec, build, preprocess
from complab.selection import SelectionConfig, distill_with_selection, generate_candidates, select
from complab.tensor import no_grad

SPEC = ModelSpec((1, 6, 6), (BlockSpec(3),), 4)


def logits_of(model, img):
    with no_grad():
        return model(preprocess(img[None])).data[0].tolist()


def brute_force_score(t, s, label, alpha, beta, tau):
    """Per-candidate score from scalar Python arithmetic."""
    def log_softmax(z):
        mx = max(z)
        lse = mx + math.log(sum(math.exp(v - mx) for v in z))
        return [v - lse for v in z]

    ce = -log_softmax(t)[label]
    lp = log_softmax([v / tau for v in t])
    lq = log_softmax([v / tau for v in s])
    kl = tau * tau * sum(math.exp(a) * (a - b) for a, b in zip(lp, lq))
    return alpha * ce - beta * kl


def oracle_argmin(scores, rel=1e-9):
    lo = min(scores)
    tol = rel * max(1.0, max(abs(v) for v in scores))
    return next(i for i, v in enumerate(scores) if v <= lo + tol)


def instance(k):
    rng = np.random.default_rng(1000 + k)
    teacher, student = build(SPEC, 2 * k), build(SPEC, 2 * k + 1)
    n = int(rng.integers(1, 17))
    cands = [rng.integers(0, 256, size=(6, 6, 1), dtype=np.uint8) for _ in range(n)]
    # plant exact ties in a third of the instances
    if k % 3 == 0 and n > 2:
        j = int(rng.integers(1, n))
        cands[j] = cands[int(rng.integers(0, j))].copy()
    cfg = SelectionConfig(n, float(rng.uniform(0, 2)), float(rng.uniform(0, 2)), float(rng.uniform(0.5, 5)))
    return teacher, student, cands, int(rng.integers(0, 4)), cfg


@pytest.mark.parametrize("block", range(4))
def test_matches_brute_force(block):
    for k in range(block * 25, block * 25 + 25):
        teacher, student, cands, label, cfg = instance(k)
        idx, scores = select(cands, label, teacher, student, cfg)
        oracle = [brute_force_score(logits_of(teacher, c), logits_of(student, c), label, cfg.alpha, cfg.beta,
                                    cfg.tau) for c in cands]
        np.testing.assert_allclose(scores, oracle, rtol=1e-9, atol=1e-12)
        assert idx == oracle_argmin(oracle), k


def test_joint_rescaling_keeps_choice():
    for k in range(100):
        teacher, student, cands, label, cfg = instance(k)
        idx, _ = select(cands, label, teacher, student, cfg)
        for c in (1e-3, 0.37, 3.0, 1e4):
            scaled = SelectionConfig(cfg.n, cfg.alpha * c, cfg.beta * c, cfg.tau)
            assert select(cands, label, teacher, student, scaled)[0] == idx


def test_identical_candidates_pick_first():
    teacher, student = build(SPEC, 0), build(SPEC, 1)
    img = np.full((6, 6, 1), 100, dtype=np.uint8)
    idx, scores = select([img] * 5, 2, teacher, student, SelectionConfig(5, 1.0, 0.0))
    assert idx == 0 and len(set(scores.tolist())) == 1


def test_reductions():
    teacher, student, cands, label, _ = instance(7)
    cands = cands if len(cands) > 1 else cands * 2
    t = [logits_of(teacher, c) for c in cands]
    s = [logits_of(student, c) for c in cands]
    conf = [math.exp(z[label]) / sum(math.exp(v) for v in z) for z in t]
    idx, _ = select(cands, label, teacher, student, SelectionConfig(len(cands), 1.0, 0.0))
    assert idx == int(np.argmax(conf))
    kls = [brute_force_score(a, b, label, 0.0, 1.0, 4.0) for a, b in zip(t, s)]
    idx, _ = select(cands, label, teacher, student, SelectionConfig(len(cands), 0.0, 1.0, 4.0))
    assert idx == int(np.argmin(kls))


def test_select_does_not_mutate_models():
    teacher, student, cands, label, cfg = instance(3)
    before = teacher.checksum(), student.checksum()
    select(cands, label, teacher, student, cfg)
    assert (teacher.checksum(), student.checksum()) == before


def test_config_validation():
    for bad in (dict(n=0), dict(alpha=0, beta=0), dict(alpha=-1), dict(tau=0)):
        with pytest.raises(ConfigError):
            SelectionConfig(**bad)
    with pytest.raises(ConfigError):
        select([], 0, build(SPEC, 0), build(SPEC, 0), SelectionConfig())


def test_generate_candidates():
    img = np.random.default_rng(0).integers(0, 256, size=(6, 6, 1), dtype=np.uint8)
    assert len(generate_candidates(img, 1, sample_rng(0))) == 1
    a = generate_candidates(img, 8, sample_rng(5))
    b = generate_candidates(img, 8, sample_rng(5))
    assert all(x.tobytes() == y.tobytes() and m == n for (x, m), (y, n) in zip(a, b))
    tiny = np.zeros((2, 2, 1), dtype=np.uint8)
    counts = np.zeros(31, dtype=np.int64)
    rng = sample_rng(11)
    for _ in range(4000):
        for _, m in generate_candidates(tiny, 8, rng):
            counts[m] += 1
    n, p = counts.sum(), 1 / 31
    assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)))


class TestDistill:
    @pytest.fixture(scope="class")
    @classmethod
    def data(cls):
        from complab.harness.data import load_dataset
        return load_dataset(format="synthetic", n_samples=60, image_size=6, num_classes=4, seed=2,
                            val_fraction=0.25)

    def spec(self, aug, loss):
        from complab.training import TrainSpec
        return TrainSpec(2, 15, 0.05, 0.9, aug, loss, seed=4)

    def test_n1_is_random_magnitude_kd(self, data):
        from complab.training import AugSpec, LossSpec, train_stage
        teacher = build(SPEC, 9)
        kd = KDConfig(4.0, 0.5)
        a, b = build(SPEC, 1), build(SPEC, 1)
        _, rec = distill_with_selection(a, teacher, data, SelectionConfig(1), kd,
                                        self.spec(AugSpec(), LossSpec()))
        train_stage(b, data, self.spec(AugSpec("random"), LossSpec("kd", kd)), teacher=teacher)
        assert a.checksum() == b.checksum()

    def test_magnitude_log(self, data):
        from complab.training import AugSpec, LossSpec
        teacher = build(SPEC, 9)
        t0 = teacher.checksum()
        _, rec = distill_with_selection(build(SPEC, 1), teacher, data, SelectionConfig(3), KDConfig(),
                                        self.spec(AugSpec(), LossSpec()))
        assert teacher.checksum() == t0
        assert len(rec.magnitude_log) == 2
        for mags in rec.magnitude_log.values():
            assert mags and all(0 <= m <= 30 for m in mags)
        assert len(rec.selection_trace) == 2 * len(data.train)
