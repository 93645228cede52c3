import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartbar import symbology as sym
from smartbar.imaging import render, rotate_exact
from smartbar.inference import (NO_RESULT, Candidate, SIConfig, candidates, gap_list, greedy_decode, mpa,
                                mpa_aug, mpa_aug_vote, vote)
from smartbar.soft_decoder import SoftDecoder

CODE = sym.as_sequence("5901234123457")


def oracle(logits, m):
    """Enumerate-filter-argmax written from scratch with plain Python."""
    rows = []
    for row in np.asarray(logits, float):
        z = [math.exp(x - max(row)) for x in row]
        s = sum(z)
        p = [v / s for v in z]
        order = sorted(range(10), key=lambda d: (-p[d], d))
        rows.append((p, order[0], order[1]))
    by_gap = sorted(range(13), key=lambda i: (rows[i][0][rows[i][1]] - rows[i][0][rows[i][2]], i))
    chosen = by_gap[:m]
    best = None
    for bits in itertools.product((0, 1), repeat=m):
        seq = [r[1] for r in rows]
        for pos, b in zip(chosen, bits):
            if b:
                seq[pos] = rows[pos][2]
        lj = sum(math.log(rows[i][0][d]) for i, d in enumerate(seq))
        if sym.validate_checksum(seq) and (best is None or lj > best[0]):
            best = (lj, tuple(seq))
    return None if best is None else best[1]


def peaked(seq, high=10.0):
    lm = np.zeros((13, 10))
    lm[np.arange(13), list(seq)] = high
    return lm


def count_calls(src):
    calls = []

    def wrapped(img):
        calls.append(img.shape)
        return src(img)
    return wrapped, calls


logit_mats = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).normal(0, 2, (13, 10)))


@given(logit_mats, st.integers(0, 4))
@settings(max_examples=400, deadline=None)
def test_mpa_matches_oracle(lm, m):
    res = mpa(lm, SIConfig(max_iter=m))
    assert res.sequence == oracle(lm, m)
    assert res.evaluated <= 2 ** m
    if res.decoded:
        assert sym.validate_checksum(res.sequence)


@given(logit_mats, st.integers(0, 5))
@settings(max_examples=200, deadline=None)
def test_candidates_order_and_count(lm, m):
    cands = candidates(lm, SIConfig(max_iter=m))
    assert len(cands) == 2 ** m
    assert cands[0].flipped_positions == frozenset()
    assert cands[0].sequence == greedy_decode(lm)
    lj = [c.log_joint for c in cands]
    assert lj == sorted(lj, reverse=True)
    assert len({c.sequence for c in cands}) == len(cands)


@given(logit_mats, st.integers(0, 5))
@settings(max_examples=200, deadline=None)
def test_monotone_opportunity(lm, m):
    if mpa(lm, SIConfig(max_iter=m)).decoded:
        assert mpa(lm, SIConfig(max_iter=m + 1)).decoded


@given(logit_mats, st.integers(0, 4))
@settings(max_examples=200, deadline=None)
def test_voting_mode_lists_valid_candidates(lm, m):
    got = mpa(lm, SIConfig(max_iter=m, voting=True))
    assert all(sym.validate_checksum(c.sequence) for c in got)
    valid = [c for c in candidates(lm, SIConfig(max_iter=m)) if sym.validate_checksum(c.sequence)]
    assert got == valid


def test_greedy_examples():
    lm = np.zeros((13, 10))
    lm[np.arange(13), np.arange(13) % 10] = 10
    assert greedy_decode(lm) == (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1, 2)
    assert greedy_decode(np.zeros((13, 10))) == (0,) * 13


def test_greedy_valid_needs_no_flip():
    for m in range(5):
        res = mpa(peaked(CODE), SIConfig(max_iter=m))
        assert res.sequence == CODE and res.rank == 0 and res.evaluated == 1


def test_single_flip_repairs_check_digit():
    lm = peaked(CODE)
    lm[12, 6] = 10.3  # 6 narrowly beats the true 7 in the last row
    assert greedy_decode(lm)[-1] == 6 and not sym.validate_checksum(greedy_decode(lm))
    assert gap_list(softmax(lm))[0].position == 13
    assert mpa(lm, SIConfig(max_iter=0)) .sequence is None
    res = mpa(lm, SIConfig(max_iter=1))
    assert res.sequence == CODE and res.rank == 1


def softmax(lm):
    z = np.exp(lm - lm.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def test_max4_has_sixteen_candidates():
    lm = np.random.default_rng(8).normal(size=(13, 10))
    assert len(candidates(lm, SIConfig(max_iter=4))) == 16
    res = mpa(lm, SIConfig(max_iter=4))
    valid = [c for c in candidates(lm, SIConfig(max_iter=4)) if sym.validate_checksum(c.sequence)]
    assert res.decoded == bool(valid)


def test_gap_ties_prefer_lower_position():
    probs = np.full((13, 10), 0.1)
    probs[:, 0] = 0.19
    probs[:, 1] = 0.01
    assert [g.position for g in gap_list(probs)] == list(range(1, 14))


def test_flat_matrix_is_no_result():
    assert not mpa(np.zeros((13, 10)), SIConfig(max_iter=3)).decoded
    assert mpa(np.zeros((13, 10)), SIConfig(max_iter=3, voting=True)) == []


def test_literal_mode_single_flips():
    lm = np.random.default_rng(1).normal(size=(13, 10))
    cands = candidates(lm, SIConfig(max_iter=3, literal=True))
    assert [len(c.flipped_positions) for c in cands] == [1, 1, 1]


def test_config_bounds():
    with pytest.raises(ValueError):
        SIConfig(max_iter=-1)
    with pytest.raises(ValueError):
        SIConfig(max_iter=14)
    assert SIConfig().v == 2


def test_aug_early_exit_on_upright():
    src, calls = count_calls(SoftDecoder())
    img = render(sym.encode(CODE))
    res = mpa_aug(src, img, SIConfig(max_iter=1))
    assert res.sequence == CODE and res.orientation == 0 and len(calls) == 1 and res.calls == 1
    assert res == mpa_aug(SoftDecoder(), img, SIConfig(max_iter=1))


def test_aug_recovers_half_turn():
    img = rotate_exact(render(sym.encode(CODE)), 180)
    assert not mpa(SoftDecoder()(img), SIConfig(max_iter=1)).decoded
    res = mpa_aug(SoftDecoder(), img, SIConfig(max_iter=1))
    assert res.sequence == CODE and res.orientation == 180


def test_aug_blank_four_calls():
    src, calls = count_calls(SoftDecoder())
    res = mpa_aug(src, np.full((285, 285), 255, np.uint8), SIConfig(max_iter=1))
    assert not res.decoded and len(calls) == 4 and res.calls == 4


def test_vote_clean_matches_aug():
    img = rotate_exact(render(sym.encode(CODE)), 90)
    a = mpa_aug(SoftDecoder(), img, SIConfig(max_iter=1))
    v = mpa_aug_vote(SoftDecoder(), img, SIConfig(max_iter=1, voting=True))
    assert a.sequence == v.sequence == CODE and v.vote_count >= 1


def cand(seq, lj):
    return Candidate(tuple(seq), frozenset(), lj)


def test_vote_rules():
    a, b = CODE, sym.as_sequence("0000000000000")
    res = vote([(0, cand(a, -3.0)), (90, cand(b, -0.1)), (180, cand(a, -2.0))])
    assert res.sequence == a and res.vote_count == 2
    res = vote([(0, cand(a, -3.0)), (90, cand(b, -0.1))])
    assert res.sequence == b and res.vote_count == 1
    res = vote([(90, cand(b, -1.0)), (180, cand(a, -1.0))])
    assert res.sequence == b and res.orientation == 90
    assert vote([]) == NO_RESULT
