import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmgan import autodiff as ad
from dmgan import objectives as obj
from dmgan.autodiff import ContractError, Tensor
from dmgan.nn import make_rng


def sig(x):
    return 1 / (1 + math.exp(-x))


def logc(p):
    return math.log(max(p, 1e-12))


def T(values):
    return Tensor(np.asarray(values, dtype=np.float64))


def test_generator_adv_chance_level():
    with ad.precision(np.float64):
        loss = obj.generator_adv_from_logits(T([0.0, 0.0]), T([0.0, 0.0]))
    assert abs(float(loss.data) - math.log(2)) < 1e-6


def test_discriminator_chance_level():
    z = T(np.zeros(4))
    with ad.precision(np.float64):
        loss = obj.discriminator_from_logits(z, z, z, z)
    assert abs(float(loss.data) - 2 * math.log(2)) < 1e-6


def test_limits():
    big = T([60.0])
    with ad.precision(np.float64):
        assert float(obj.generator_adv_from_logits(big, big).data) < 1e-12
        assert float(obj.discriminator_from_logits(big, -big, big, -big).data) < 1e-12
        # clamped, never infinite
        worst = float(obj.discriminator_from_logits(-big * 100, big * 100, -big * 100, big * 100).data)
    assert math.isfinite(worst) and abs(worst - 2 * -math.log(1e-12)) < 1e-6


def test_scalar_oracles():
    rng = make_rng(0)
    ru, fu, rc, fc = (rng.normal(0, 3, size=6) for _ in range(4))
    with ad.precision(np.float64):
        g = float(obj.generator_adv_from_logits(T(fu), T(fc)).data)
        d = float(obj.discriminator_from_logits(T(ru), T(fu), T(rc), T(fc)).data)
    want_g = -0.5 * (np.mean([logc(sig(v)) for v in fu]) + np.mean([logc(sig(v)) for v in fc]))
    want_d = -0.5 * (np.mean([logc(sig(v)) for v in ru]) + np.mean([logc(1 - sig(v)) for v in fu])
                     + np.mean([logc(sig(v)) for v in rc]) + np.mean([logc(1 - sig(v)) for v in fc]))
    assert abs(g - want_g) < 1e-6
    assert abs(d - want_d) < 1e-6


def test_mismatch_term_averages_into_fake_conditional():
    rng = make_rng(1)
    ru, fu, rc, fc, wc = (rng.normal(size=5) for _ in range(5))
    with ad.precision(np.float64):
        base = float(obj.discriminator_from_logits(T(ru), T(fu), T(rc), T(fc)).data)
        both = float(obj.discriminator_from_logits(T(ru), T(fu), T(rc), T(fc), T(wc)).data)
    fake = np.mean([logc(1 - sig(v)) for v in fc])
    wrong = np.mean([logc(1 - sig(v)) for v in wc])
    assert abs((both - base) - (-0.5) * ((fake + wrong) / 2 - fake)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(-8, 8), st.floats(0.01, 3))
def test_generator_and_discriminator_move_oppositely(fake_logit, delta):
    z = T([0.3])
    with ad.precision(np.float64):
        g0 = float(obj.generator_adv_from_logits(T([fake_logit]), T([fake_logit])).data)
        g1 = float(obj.generator_adv_from_logits(T([fake_logit + delta]), T([fake_logit + delta])).data)
        d0 = float(obj.discriminator_from_logits(z, T([fake_logit]), z, T([fake_logit])).data)
        d1 = float(obj.discriminator_from_logits(z, T([fake_logit + delta]), z, T([fake_logit + delta])).data)
    assert g1 < g0 and d1 > d0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_losses_finite(logits):
    with ad.precision(np.float64):
        t = [T([v]) for v in logits]
        assert math.isfinite(float(obj.discriminator_from_logits(*t).data))
        assert math.isfinite(float(obj.generator_adv_from_logits(t[0], t[1]).data))


# -- matching -----------------------------------------------------------------------------

def test_match_loss_two_pair_closed_form():
    g = 10.0
    with ad.precision(np.float64):
        loss = float(obj.match_loss_from_similarity(T([[g, -g], [-g, g]])).data)
    assert abs(loss - 2 * math.log1p(math.exp(-2 * g))) < 1e-12
    assert loss < 1e-8


@pytest.mark.parametrize("B", [2, 5, 10])
def test_match_loss_identical_embeddings(B):
    emb = np.tile(make_rng(B).normal(size=(1, 6)), (B, 1))
    with ad.precision(np.float64):
        loss = float(obj.match_loss(emb, emb * 3.0).data)
    assert abs(loss - 2 * math.log(B)) < 1e-9


def test_match_loss_monotone_in_diagonal():
    off = make_rng(2).normal(size=(4, 4))
    prev = math.inf
    for d in np.linspace(-2, 5, 8):
        sim = off.copy()
        np.fill_diagonal(sim, d)
        with ad.precision(np.float64):
            cur = float(obj.match_loss_from_similarity(T(sim)).data)
        assert cur < prev
        prev = cur


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_similarity_invariant_to_positive_scaling(seed):
    rng = make_rng(seed)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    sa, sb = rng.uniform(0.1, 10, size=(4, 1)), rng.uniform(0.1, 10, size=(4, 1))
    with ad.precision(np.float64):
        np.testing.assert_allclose(obj.cosine_similarity_matrix(a * sa, b * sb).data,
                                   obj.cosine_similarity_matrix(a, b).data, atol=1e-9)


def test_match_loss_needs_negatives():
    with pytest.raises(ContractError):
        obj.match_loss(np.ones((1, 3)), np.ones((1, 3)))


def test_match_loss_gradcheck():
    rng = make_rng(3)
    with ad.precision(np.float64):
        a, b = Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(4, 5)))
        assert ad.gradcheck(lambda: obj.match_loss(a, b), [a, b]) < 1e-6


# -- total ----------------------------------------------------------------------------------

def test_total_weighting():
    with ad.precision(np.float64):
        assert abs(float(obj.total_generator_loss([1.0], 0.2, 0.1, 1.0, 5.0).data) - 1.7) < 1e-12
        assert float(obj.total_generator_loss([0.4, 0.6], 3.0, 9.0, 0.0, 0.0).data) == 1.0


def test_total_is_linear():
    rng = make_rng(4)
    adv, ca, m = rng.uniform(size=3), 0.3, 0.8
    with ad.precision(np.float64):
        base = float(obj.total_generator_loss(list(adv), ca, m).data)
        assert abs(float(obj.total_generator_loss(list(adv), ca + 1, m).data) - base - 1.0) < 1e-12
        assert abs(float(obj.total_generator_loss(list(adv), ca, m + 1).data) - base - 5.0) < 1e-12
    with pytest.raises(ContractError):
        obj.total_generator_loss([1.0], 0.0, 0.0, -1.0, 5.0)


def test_loss_report_json():
    import json
    rep = obj.LossReport(step=3, g_adv=[0.1], d_loss=[1.2], ca_loss=0.2, match_loss=0.4, total=2.3)
    assert json.loads(rep.to_json())["step"] == 3
