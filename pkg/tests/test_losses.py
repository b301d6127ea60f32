import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from headsynth.errors import ContractViolation, ValidationError
from headsynth.losses import (
    LossReport,
    LossWeights,
    l1,
    loss_part,
    loss_re,
    loss_tri,
    masked_l1,
    total_loss,
)
from oracles import l1_oracle


def test_l1_equal_inputs_zero(rng):
    a = rng.normal(size=(7, 5, 3))
    assert l1(a, a.copy()) == 0.0


def test_l1_constant_offset():
    a = np.zeros((4, 4))
    assert l1(a, a + 0.25) == 0.25
    assert l1(a, a - 0.25) == 0.25


def test_l1_matches_loop_oracle(rng):
    a, b = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
    assert abs(l1(a, b) - l1_oracle(a, b)) < 1e-9


def test_l1_shape_mismatch(rng):
    with pytest.raises(ContractViolation):
        l1(rng.normal(size=(3, 3)), rng.normal(size=(3, 4)))


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
       hnp.arrays(np.float64, (3, 4), elements=st.floats(-10, 10)))
@settings(max_examples=50, deadline=None)
def test_l1_symmetry_and_definiteness(a, b):
    assert l1(a, b) == l1(b, a)
    assert l1(a, b) >= 0.0
    if not np.array_equal(a, b):
        assert l1(a, b) > 0.0


def test_masked_l1(rng):
    a, b = rng.normal(size=(5, 5, 2)), rng.normal(size=(5, 5, 2))
    full = np.ones((5, 5))
    assert masked_l1(a, b, full) == pytest.approx(l1(a, b), abs=1e-15)
    assert masked_l1(a, b, np.zeros((5, 5))) == 0.0
    one = np.zeros((5, 5))
    one[2, 3] = 1.0
    want = np.mean(np.abs(a[2, 3] - b[2, 3]))
    assert masked_l1(a, b, one) == pytest.approx(want, abs=1e-15)


def test_loss_re_hook(rng):
    a, b = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3))
    assert loss_re(a, b) == l1(a, b)
    assert loss_re(a, b, perceptual=lambda x, y: 2.5) == l1(a, b) + 2.5


def test_loss_tri_equal_zero(rng):
    f = rng.normal(size=(4000, 32))
    assert loss_tri(f, f.copy()) == 0.0


def test_loss_tri_single_element_offset():
    a = np.zeros((4000, 32))
    b = a.copy()
    b[1234, 7] = 1.0
    assert loss_tri(a, b) == pytest.approx(1.0 / (4000 * 32), rel=1e-12)


def test_loss_tri_matches_oracle(rng):
    a, b = rng.normal(size=(50, 8)), rng.normal(size=(50, 8))
    assert abs(loss_tri(a, b) - l1_oracle(a, b)) < 1e-9


def test_loss_tri_shape_checks(rng):
    with pytest.raises(ContractViolation):
        loss_tri(rng.normal(size=(10, 4)), rng.normal(size=(11, 4)))
    with pytest.raises(ContractViolation):
        loss_tri(rng.normal(size=10), rng.normal(size=10))


def test_loss_part_zero_cases(rng):
    mask = np.zeros((8, 8))
    proj = rng.uniform(0, 8, size=(20, 2))
    assert loss_part(rng.uniform(0, 5, 20), proj, mask) == 0.0
    mask[:] = 1.0
    assert loss_part(np.zeros(20), proj, mask) == 0.0


def test_loss_part_hand_case():
    mask = np.zeros((4, 4))
    mask[1, 1] = 1.0
    mask[2, 2] = 1.0
    sigma = [0.5, 0.25, 7.0]
    proj = [(1.5, 1.5), (2.9, 2.1), (9.0, 1.0)]  # third lands off-image
    assert loss_part(sigma, proj, mask) == 0.75


def test_loss_part_monotone_in_masked_density(rng):
    mask = (rng.random((6, 6)) > 0.5).astype(float)
    proj = rng.uniform(0, 6, size=(30, 2))
    sigma = rng.uniform(0, 2, size=30)
    base = loss_part(sigma, proj, mask)
    sigma2 = sigma.copy()
    sigma2[rng.integers(30)] += 1.0
    assert loss_part(sigma2, proj, mask) >= base


def test_loss_part_accepts_maskmap(rng):
    from headsynth.render import MaskMap
    m = MaskMap(np.ones((3, 3)), np.zeros((3, 3, 3)))
    assert loss_part([1.0, 2.0], [(0.0, 0.0), (2.0, 2.0)], m) == 3.0


def test_total_loss_all_ones_default_weights():
    terms = {name: 1.0 for name in ("re", "f", "tri", "depth", "opa", "id", "adv")}
    report = total_loss(terms)
    assert report.total == pytest.approx(4.41, abs=1e-12)


def test_total_loss_all_zero():
    terms = {name: 0.0 for name in ("re", "f", "tri", "depth", "opa")}
    assert total_loss(terms).total == 0.0


def test_total_loss_hooks_default_zero():
    terms = {name: 1.0 for name in ("re", "f", "tri", "depth", "opa")}
    report = total_loss(terms)
    assert report.total == pytest.approx(3.4, abs=1e-12)
    assert report.terms["id"] == 0.0
    assert report.terms["adv"] == 0.0


def test_total_loss_weighted_sum_invariant(rng):
    terms = {name: float(rng.uniform(-1, 3))
             for name in ("re", "f", "tri", "depth", "opa", "id", "adv")}
    w = LossWeights(w_tri=0.5, w_adv=0.2)
    report = total_loss(terms, w)
    manual = sum(w.for_term(k) * v for k, v in terms.items())
    assert abs(report.total - manual) < 1e-9


def test_total_loss_linear_in_each_term(rng):
    base = {name: 1.0 for name in ("re", "f", "tri", "depth", "opa")}
    w = LossWeights()
    for name in base:
        bumped = dict(base)
        bumped[name] = 3.0
        delta = total_loss(bumped, w).total - total_loss(base, w).total
        assert delta == pytest.approx(2.0 * w.for_term(name), abs=1e-12)


def test_total_loss_rejects_unknown_and_missing():
    with pytest.raises(ContractViolation):
        total_loss({"re": 1.0, "bogus": 2.0})
    with pytest.raises(ContractViolation):
        total_loss({"re": 1.0})


def test_weights_must_be_nonnegative():
    with pytest.raises(ValidationError):
        LossWeights(w_f=-0.5)


def test_report_text_round_trip():
    terms = {name: 1.0 for name in ("re", "f", "tri", "depth", "opa")}
    text = total_loss(terms).to_text()
    assert "term.tri" in text and "total" in text
    parsed = dict(line.split() for line in text.strip().splitlines())
    assert float(parsed["total"]) == pytest.approx(3.4, abs=1e-12)
