import csv
import math

import numpy as np
import pytest

from smartbar import symbology as sym
from smartbar.datasets import generate_dataset
from smartbar.tinynet import (DivergedLoss, InputSpec, KDConfig, MultidigitModel, TrainConfig, feature_matrix,
                              features, fit, forward, hard_loss, kd_loss, load_checkpoint, loss_grad,
                              save_checkpoint, train, train_curriculum, write_history)


def direct_ce(logits, truth):
    total = 0.0
    for row, t in zip(logits, truth):
        m = max(row)
        lse = m + math.log(sum(math.exp(x - m) for x in row))
        total += lse - row[t]
    return total


def direct_kl(student, teacher, temp):
    total = 0.0
    for s, t in zip(student, teacher):
        ps = [math.exp(x / temp) for x in s]
        pt = [math.exp(x / temp) for x in t]
        zs, zt = sum(ps), sum(pt)
        total += sum((b / zt) * math.log((b / zt) / (a / zs)) for a, b in zip(ps, pt))
    return temp * temp * total


def test_hard_loss_values():
    assert abs(hard_loss(np.zeros((13, 10)), (0,) * 13) - 13 * math.log(10)) < 1e-9
    rng = np.random.default_rng(0)
    lm = rng.normal(size=(13, 10))
    truth = tuple(rng.integers(0, 10, 13))
    assert abs(hard_loss(lm, truth) - direct_ce(lm, truth)) < 1e-10
    perfect = np.full((13, 10), -50.0)
    perfect[np.arange(13), list(truth)] = 50.0
    assert 0 <= hard_loss(perfect, truth) < 1e-30


def test_kd_loss_endpoints():
    rng = np.random.default_rng(1)
    s, t = rng.normal(size=(2, 13, 10))
    truth = tuple(rng.integers(0, 10, 13))
    assert kd_loss(s, t, truth, KDConfig(alpha=0.0)) == hard_loss(s, truth)
    assert abs(kd_loss(s, s, truth, KDConfig(alpha=1.0))) < 1e-9


def test_kd_loss_hand_computed():
    s = np.array([[2.0, 0.0, -1.0]])
    t = np.array([[0.5, 1.5, 0.0]])
    cfg = KDConfig(alpha=0.5, temperature=2.0)
    want = 0.5 * direct_ce(s, (1,)) + 0.5 * direct_kl(s, t, 2.0)
    assert abs(kd_loss(s, t, (1,), cfg) - want) < 1e-10


def test_kd_config_validation():
    with pytest.raises(ValueError):
        KDConfig(alpha=1.5)
    with pytest.raises(ValueError):
        KDConfig(temperature=0)


def _total_loss(model, x, y, teacher, kd):
    lm = model.forward_features(x)
    return hard_loss(lm, y) if kd is None else kd_loss(lm, teacher, y, kd)


@pytest.mark.parametrize("hidden,kd", [((2,), None), ((3, 2), None), ((2,), KDConfig(0.7, 2.0)),
                                       ((4,), KDConfig(0.3, 3.5))])
def test_gradients_match_finite_differences(hidden, kd):
    rng = np.random.default_rng(7)
    model = MultidigitModel.init(hidden, n_inputs=3, n_digits=2, n_values=3, seed=3)
    assert 10 <= model.n_params <= 100
    x = rng.normal(size=(4, 3))
    y = rng.integers(0, 3, size=(4, 2))
    teacher = rng.normal(size=(4, 2, 3))
    lm, acts = model.forward_features(x, keep=True)
    grads = model.backward(acts, loss_grad(lm, y, teacher, kd))
    h = 1e-4
    for p, g in zip(model.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = _total_loss(model, x, y, teacher, kd)
            p[idx] = old - h
            down = _total_loss(model, x, y, teacher, kd)
            p[idx] = old
            num = (up - down) / (2 * h)
            assert abs(num - g[idx]) <= 1e-5 * max(1.0, abs(num), abs(g[idx]))


def test_param_count_exact():
    m = MultidigitModel.init((8, 5), InputSpec(20, 3))
    assert m.n_params == (60 * 8 + 8) + (8 * 5 + 5) + (5 * 130 + 130)


def test_zero_model_gives_zero_logits():
    img = np.full((285, 285), 255, np.uint8)
    m = MultidigitModel.init((4,), InputSpec(19, 2), scale=0.0)
    assert (forward(m, img) == 0).all() and forward(m, img).shape == (13, 10)


def test_forward_deterministic():
    img = generate_dataset([("rpt", 1)], 4)[0].image
    a = forward(MultidigitModel.init((16,), seed=5), img)
    b = forward(MultidigitModel.init((16,), seed=5), img)
    assert np.array_equal(a, b)


def test_features_shape_and_crop():
    from smartbar.imaging import render
    img = render(sym.encode(sym.as_sequence("5901234123457")))
    f = features(img, InputSpec(190, 2))
    assert f.shape == (380,) and f.min() >= -0.5 and f.max() <= 0.5
    # the crop lands on the guard bars: first and last columns are dark
    row = f.reshape(2, 190)[0]
    assert row[0] > 0.4 and row[-1] > 0.4 and row[2] < -0.4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_zero_epochs_unchanged_and_divergence():
    m = MultidigitModel.init((4,), n_inputs=3, n_digits=2, n_values=3)
    x = np.ones((5, 3))
    y = np.zeros((5, 2), dtype=int)
    same, hist = fit(m, x, y, TrainConfig(epochs=0))
    assert hist == [] and all(np.array_equal(a, b) for a, b in zip(m.params, same.params))
    with pytest.raises(DivergedLoss):
        fit(m, np.full((5, 3), np.inf), y, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        fit(m, x[:0], y[:0])


@pytest.fixture(scope="module")
def clean_corpus():
    return generate_dataset([("norm", 200)], 31)


def test_training_halves_loss(clean_corpus):
    m = MultidigitModel.init((64,), seed=0)
    _, hist = train(m, clean_corpus, TrainConfig())
    assert hist[-1] <= 0.5 * hist[0]


def test_training_deterministic(clean_corpus, tmp_path):
    cfg = TrainConfig(epochs=2, seed=4)
    a, ha = train(MultidigitModel.init((8,), seed=1), clean_corpus[:50], cfg)
    b, hb = train(MultidigitModel.init((8,), seed=1), clean_corpus[:50], cfg)
    assert ha == hb and all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    write_history(ha, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["epoch", "loss"] and [float(r[1]) for r in rows[1:]] == ha


def test_distillation_and_curriculum_run(clean_corpus):
    teacher = MultidigitModel.init((8,), seed=2)
    student = MultidigitModel.init((4,), seed=3)
    cfg = TrainConfig(epochs=1)
    s1, h1 = train(student, clean_corpus[:40], cfg, kd=(teacher, KDConfig()))
    assert len(h1) == 1 and np.isfinite(h1[0])
    s2, h2 = train_curriculum(student, [clean_corpus[:20], clean_corpus[20:40]], cfg)
    assert len(h2) == 2


def test_checkpoint_roundtrip(tmp_path, clean_corpus):
    m = MultidigitModel.init((6, 5), InputSpec(95, 3, crop=False), seed=9)
    save_checkpoint(m, tmp_path / "m.json")
    back = load_checkpoint(tmp_path / "m.json")
    assert back.input_spec == m.input_spec and back.hidden == (6, 5)
    img = clean_corpus[0].image
    assert np.array_equal(forward(m, img), forward(back, img))
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.json")
