import math

import numpy as np
import pytest
import torch

from voidkit.core import LossWeights, ShapeError
from voidkit.losses import (AttackObjective, NonFiniteGradient, cosine_distance, grad_total,
                            loss_attn, loss_feat, loss_id, loss_loc, loss_total)
from voidkit.selftest import fd_relative_errors
from voidkit.victims import AttentionTap, BundleManifest, FeatureTap, build_surrogate_bundle

D = torch.float64


def test_loc_oracles():
    reg = torch.zeros(3, 4, dtype=D)
    m = torch.tensor([1.0, 0.0, 0.0], dtype=D)
    assert float(loss_loc(reg, reg, m)) == 1.0
    adv = reg.clone()
    adv[0, 0], adv[0, 1] = 3.0, 4.0
    adv[1, 2] = 100.0  # masked out
    assert float(loss_loc(adv, reg, m)) == pytest.approx(math.exp(-5), rel=1e-12)
    assert float(loss_loc(adv, reg, m)) == pytest.approx(6.7379e-3, abs=1e-7)
    with pytest.raises(ShapeError):
        loss_loc(reg, torch.zeros(2, 4, dtype=D), m)


def test_cosine_distance():
    u, v = torch.tensor([1.0, 0.0], dtype=D), torch.tensor([0.0, 1.0], dtype=D)
    assert float(cosine_distance(u, v)) == 1.0
    assert float(cosine_distance(u, u)) == 0.0
    with pytest.raises(ZeroDivisionError):
        cosine_distance(u, torch.zeros(2, dtype=D))


def test_id_identity_and_erasure():
    src = [torch.tensor([1.0, 0.0], dtype=D)]
    null = [torch.tensor([0.0, 1.0], dtype=D)]
    val, hinge = loss_id(src, src, null, 0.6)
    assert float(hinge) == pytest.approx(0.6, abs=1e-15)
    assert float(val) == pytest.approx(1.0 + 0.6, abs=1e-15)
    # adversarial embedding equal to the null one, far from the source
    val, hinge = loss_id(null, src, null, 0.6)
    assert float(val) == 0.0 and float(hinge) == 0.0
    with pytest.raises(ValueError):
        loss_id(src, src, null, 0.0)


def test_id_ensemble_mean():
    e1 = torch.tensor([1.0, 0.0], dtype=D)
    e2 = torch.tensor([0.0, 1.0], dtype=D)
    val, _ = loss_id([e1, e1], [e1, e1], [e2, e1 * -1], 0.5)
    # per-encoder: 1 + 0.5 and 2 + 0.5
    assert float(val) == pytest.approx(2.0)


def test_attn_oracle():
    z = torch.zeros(2, 2, dtype=D)
    a = [AttentionTap("l", torch.ones(2, 2, dtype=D), z)]
    s = [AttentionTap("l", z, z)]
    assert float(loss_attn(a, s)) == pytest.approx(2.0, abs=1e-15)
    assert float(loss_attn(s, s)) == 0.0
    with pytest.raises(ValueError):
        loss_attn(a, [AttentionTap("other", z, z)])


def test_feat_oracle():
    a = [FeatureTap("l", torch.full((2, 2, 1), 2.0, dtype=D))]
    s = [FeatureTap("l", torch.zeros(2, 2, 1, dtype=D))]
    ones = {"l": {"sem": torch.ones(2, 2, dtype=D)}}
    zeros = {"l": {"sem": torch.zeros(2, 2, dtype=D)}}
    assert float(loss_feat(a, s, ones)) == pytest.approx(4.0, abs=1e-15)
    assert float(loss_feat(a, s, zeros)) == 0.0
    assert float(loss_feat(s, s, ones)) == 0.0
    with pytest.raises(ShapeError):
        loss_feat(a, s, {"l": {"sem": torch.ones(3, 3, dtype=D)}})


def test_total_oracle():
    terms = {"loc": 1.0, "id": 2.0, "attn": 3.0, "feat": 4.0}
    assert loss_total(terms, LossWeights(-1, -1, 1, 1)) == 4.0
    assert loss_total(dict.fromkeys(terms, 0.0), LossWeights()) == 0.0
    assert loss_total(terms, LossWeights(-1, -1, 1, 1), {"loc": False}) == 5.0


def test_objective_identity_case(bundle, face):
    obj = AttackObjective(bundle, face, margin=0.6)
    with torch.no_grad():
        t = obj.terms(obj.x_src)
    assert abs(float(t["loc"]) - 1) <= 1e-9
    assert abs(float(t["attn"])) <= 1e-9
    assert abs(float(t["feat"])) <= 1e-9
    assert abs(float(t["id_hinge"]) - 0.6) <= 1e-9


def test_loc_disabled_on_empty_anchor(bundle, face):
    obj = AttackObjective(bundle, face, tau_p=0.9999)
    assert obj.enabled["loc"] is False
    rep = obj.evaluate(obj.z0)
    assert rep.enabled["loc"] is False
    # total ignores the localization term entirely
    assert rep.l_total == pytest.approx(-rep.l_id + 0.01 * (rep.l_attn + rep.l_feat), abs=1e-12)


@pytest.mark.parametrize("term", ["loc", "id", "attn", "feat", None])
def test_gradients_match_finite_differences(bundle, face, term):
    obj = AttackObjective(bundle, face, epsilon=1.0, seed=1)
    rng = np.random.default_rng(1)
    z = obj.z0 + 0.01 * torch.from_numpy(rng.standard_normal(tuple(obj.z0.shape)))
    coords = rng.choice(z.numel(), size=20, replace=False)
    assert fd_relative_errors(obj, z, term, coords).max() < 1e-2


def test_straight_through_projection(bundle, face):
    """With an active clamp the forward value is projected but gradients still flow."""
    obj = AttackObjective(bundle, face, epsilon=1 / 255)
    z = obj.z0 + 0.5
    x = obj.adversarial_image(z)
    assert (x - face).abs().max() <= 1 / 255 + 1e-12
    g, _ = grad_total(z, obj)
    assert g.abs().sum() > 0


def test_non_finite_gradient_names_term(face):
    b = build_surrogate_bundle(BundleManifest(seed=0))
    obj = AttackObjective(b, face)

    real = obj.terms

    def poisoned(x, slot=0):
        t = real(x, slot)
        t["feat"] = t["feat"] * float("nan")
        return t

    obj.terms = poisoned
    with pytest.raises(NonFiniteGradient) as err:
        grad_total(obj.z0, obj)
    assert err.value.term == "feat"
