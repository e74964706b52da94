import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_bank, random_mask
from fedfnn.errors import DataError, NoActiveRulesError
from fedfnn.fnn import (
    LabeledDataset,
    Rule,
    RuleBank,
    SIGMA_MIN,
    cross_entropy_loss,
    consequent_output,
    dataset_loss,
    firing_strengths,
    forward,
    membership_value,
    predict,
    predict_proba,
)


# -- membership -----------------------------------------------------------------

@pytest.mark.parametrize("x, m, sigma, expected", [
    (0.5, 0.5, 1.0, 1.0),
    (1.5, 0.5, 1.0, math.exp(-1)),
    (0.0, 1.0, 0.5, math.exp(-4)),
])
def test_membership_values(x, m, sigma, expected):
    assert membership_value(x, m, sigma) == pytest.approx(expected, rel=1e-15)


def test_membership_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite input"):
        membership_value(float("nan"), 0.0, 1.0)
    with pytest.raises(ValueError, match="non-finite input"):
        membership_value(0.0, float("inf"), 1.0)


def test_membership_rejects_sigma_below_clamp():
    with pytest.raises(ValueError):
        membership_value(0.0, 0.0, SIGMA_MIN / 2)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(SIGMA_MIN, 50))
def test_membership_in_unit_interval(x, m, sigma):
    v = membership_value(x, m, sigma)
    assert 0.0 <= v <= 1.0


# -- firing strengths -----------------------------------------------------------

def test_single_rule_fires_fully(rng):
    bank = random_bank(rng, 1, 3, 2)
    for _ in range(5):
        assert firing_strengths(rng.normal(size=3), bank, [1]).tolist() == [1.0]


def test_identical_rules_split_evenly(rng):
    bank = random_bank(rng, 1, 3, 2)
    twin = RuleBank.from_rules([bank.rule(0), Rule(1, bank.m[0], bank.sigma[0], bank.theta[0])])
    np.testing.assert_allclose(firing_strengths(rng.normal(size=3), twin, [1, 1]), [0.5, 0.5], rtol=0, atol=1e-15)


def test_masked_rule_is_exactly_zero(rng):
    bank = random_bank(rng, 2, 3, 2)
    h = firing_strengths(rng.normal(size=3), bank, [1, 0])
    assert h[1] == 0.0
    assert h[0] == 1.0


def test_no_active_rules_raises(rng):
    bank = random_bank(rng, 3, 2, 2)
    with pytest.raises(NoActiveRulesError, match="no active rules"):
        firing_strengths(np.zeros(2), bank, [0, 0, 0])
    with pytest.raises(NoActiveRulesError):
        predict(np.zeros(2), bank, [0, 0, 0])


def test_activation_row_length_checked(rng):
    bank = random_bank(rng, 3, 2, 2)
    with pytest.raises(ValueError):
        firing_strengths(np.zeros(2), bank, [1, 0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 6))
def test_firing_strengths_form_a_distribution(seed, K, D):
    rng = np.random.default_rng(seed)
    bank = random_bank(rng, K, D, 2, sigma_range=(SIGMA_MIN, 3.0), m_scale=3.0)
    s = random_mask(rng, K)
    h = firing_strengths(rng.uniform(-5, 5, D), bank, s)
    assert abs(h[s == 1].sum() - 1.0) < 1e-9
    assert np.all(h[s == 0] == 0.0)
    assert np.all(h >= 0)


# -- consequent and prediction ----------------------------------------------------

def test_consequent_examples():
    np.testing.assert_array_equal(consequent_output(np.array([2.0]), np.array([[1.0, 0.0], [0.5, -1.0]])), [2.0, -2.0])
    np.testing.assert_array_equal(consequent_output(np.zeros(3), np.zeros((4, 2))), [0.0, 0.0])
    b = np.array([0.3, -0.7, 1.1])
    theta = np.vstack([b, np.ones((2, 3))])
    np.testing.assert_array_equal(consequent_output(np.zeros(2), theta), b)


def test_consequent_dimension_mismatch():
    with pytest.raises(ValueError):
        consequent_output(np.zeros(3), np.zeros((3, 2)))


def test_zero_consequents_give_uniform_prediction(rng):
    bank = random_bank(rng, 4, 3, 5).replace_params(theta=np.zeros((4, 4, 5)))
    np.testing.assert_allclose(predict(rng.normal(size=3), bank, [1, 1, 0, 1]), np.full(5, 0.2), atol=1e-15)


def test_single_rule_reduces_to_softmax_regression(rng):
    bank = random_bank(rng, 1, 3, 4)
    x = rng.normal(size=3)
    tau = bank.theta[0][0] + x @ bank.theta[0][1:]
    expected = np.exp(tau - tau.max()) / np.exp(tau - tau.max()).sum()
    np.testing.assert_allclose(predict(x, bank, [1]), expected, rtol=1e-14)


def test_opposite_symmetric_rules_cancel(rng):
    m = rng.normal(size=2)
    theta = rng.normal(size=(3, 3))
    bank = RuleBank.from_rules([Rule(0, m, np.ones(2), theta), Rule(1, m, np.ones(2), -theta)])
    np.testing.assert_allclose(predict(m, bank, [1, 1]), np.full(3, 1 / 3), atol=1e-15)


def test_batched_forward_matches_single_sample(rng):
    bank = random_bank(rng, 5, 4, 3)
    s = np.array([1, 0, 1, 1, 0])
    X = rng.normal(size=(20, 4))
    fw = forward(X, bank, s)
    for i in range(20):
        np.testing.assert_allclose(fw.probs[i], predict(X[i], bank, s), rtol=1e-13)
        np.testing.assert_allclose(fw.h[i], firing_strengths(X[i], bank, s), rtol=1e-13, atol=0)
    assert np.all(fw.h[:, s == 0] == 0.0)


# -- losses -------------------------------------------------------------------------

@pytest.mark.parametrize("y, p, expected", [
    ([1, 0], [0.5, 0.5], math.log(2)),
    ([0, 1], [0.25, 0.75], -math.log(0.75)),
    ([1, 0, 0], [1 / 3, 1 / 3, 1 / 3], math.log(3)),
])
def test_cross_entropy_examples(y, p, expected):
    assert cross_entropy_loss(np.array(y), np.array(p)) == pytest.approx(expected, rel=1e-15)


def test_cross_entropy_clamps_zero_probability():
    v = cross_entropy_loss(np.array([1, 0]), np.array([0.0, 1.0]))
    assert np.isfinite(v)
    assert v == pytest.approx(-math.log(1e-12))


def _logit(p):
    return math.log(p / (1 - p))


def test_dataset_loss_is_mean_of_sample_losses():
    # tau = [x, 0] so the class-0 probability is sigmoid(x)
    theta = np.array([[0.0, 0.0], [1.0, 0.0]])
    bank = RuleBank.from_rules([Rule(0, [0.0], [1.0], theta)])
    X = np.array([[_logit(math.exp(-0.2))], [_logit(math.exp(-0.4))]])
    ds = LabeledDataset(X, np.array([0, 0]), 2)
    assert dataset_loss(ds, bank, [1]) == pytest.approx(0.3, abs=1e-12)
    single = ds.subset([1])
    assert dataset_loss(single, bank, [1]) == pytest.approx(
        cross_entropy_loss(np.array([1, 0]), predict(X[1], bank, [1])), rel=1e-14)
    doubled = ds.subset([0, 1, 0, 1])
    assert dataset_loss(doubled, bank, [1]) == pytest.approx(dataset_loss(ds, bank, [1]), rel=1e-14)


def test_dataset_loss_rejects_empty(rng):
    bank = random_bank(rng, 2, 3, 2)
    with pytest.raises(DataError, match="empty dataset"):
        dataset_loss(LabeledDataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 2), bank, [1, 1])


def test_probabilities_sum_to_one(rng):
    bank = random_bank(rng, 6, 5, 4, theta_scale=10.0)
    P = predict_proba(rng.normal(size=(50, 5)) * 3, bank, np.ones(6))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)


# -- containers -------------------------------------------------------------------

def test_rule_bank_validation():
    with pytest.raises(ValueError):
        RuleBank(np.array([0, 0]), np.zeros((2, 1)), np.ones((2, 1)), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        RuleBank(np.array([0]), np.zeros((1, 1)), np.full((1, 1), SIGMA_MIN / 10), np.zeros((1, 2, 2)))


def test_rule_bank_is_immutable(rng):
    bank = random_bank(rng, 2, 2, 2)
    with pytest.raises(ValueError):
        bank.m[0, 0] = 5.0


def test_select_and_append_keep_ids(rng):
    bank = random_bank(rng, 4, 2, 3)
    sub = bank.select([0, 2, 3])
    assert sub.ids.tolist() == [0, 2, 3]
    assert sub.next_id() == 4
    grown = sub.append(Rule(sub.next_id(), np.zeros(2), np.ones(2), np.zeros((3, 3))))
    assert grown.ids.tolist() == [0, 2, 3, 4]
    np.testing.assert_array_equal(grown.theta[:3], sub.theta)
