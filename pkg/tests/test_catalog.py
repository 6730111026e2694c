import numpy as np
import pytest

from skelsim.catalog import (CARDS, check_slln_skeleton_conditions, eigendata, get_card, inward_ou,
                             martingale_function, validate_assumptions)
from skelsim.errors import UnsupportedError
from skelsim.functions import Profile, gaussian
from skelsim.mechanism import BranchingMechanism
from skelsim.motion import exact_ou_sample, h_transform

X = np.linspace(-2, 2, 9)[:, None]


@pytest.mark.parametrize("name", list(CARDS))
def test_ground_state_normalisation(name):
    card = get_card(name)
    if card.partial:
        pytest.skip("envelope-only card")
    nrm = card.stationary_expectation(lambda x: np.ones(np.shape(x)[:-1]))
    assert nrm == pytest.approx(1.0, abs=1e-8)
    assert card.eigen.lambda_c > 0


def test_inward_ou_eigendata():
    e = eigendata("inward-ou", gamma=2.0, beta=1.5)
    assert e.lambda_c == 1.5
    assert np.allclose(e.phi(X), 1.0)
    assert np.allclose(e.phi_tilde(X), np.sqrt(2 / np.pi) * np.exp(-2 * X[:, 0] ** 2))


def test_outward_ou_eigendata():
    e = eigendata("outward-ou", gamma=1.0, beta=3.0)
    assert e.lambda_c == pytest.approx(2.0)
    assert np.allclose(e.phi(X), np.exp(-X[:, 0] ** 2) / np.sqrt(np.pi))
    assert np.allclose(e.phi_tilde(X), 1.0)


def test_wright_fisher_eigendata():
    e = eigendata("wright-fisher", beta=2.5)
    x = np.linspace(0.05, 0.95, 7)[:, None]
    assert e.lambda_c == pytest.approx(1.5)
    assert np.allclose(e.phi(x), 6 * x[:, 0] * (1 - x[:, 0]))


def test_martingale_functions():
    assert np.allclose(martingale_function("inward-ou-quadratic")(X), 1.0)
    assert np.allclose(martingale_function("unbounded-w")(X), 2 * np.exp(X[:, 0] ** 2))
    with pytest.raises(UnsupportedError):
        martingale_function("wright-fisher")


def test_h_transform_maps_unbounded_w_to_outward_ou():
    src, dst = get_card("unbounded-w"), get_card("outward-ou-quadratic")
    h = gaussian(1.0, 1.0, "h")
    motion, mech = h_transform(src.motion, src.mech, h)
    g = src.motion.sample_grid(41, 3.0)
    assert np.allclose(motion.drift(g), dst.motion.drift(g), atol=1e-10)
    assert np.allclose(mech.beta(g), dst.mech.beta(g), atol=1e-10)
    assert np.allclose(mech.alpha(g), dst.mech.alpha(g), atol=1e-10)
    # martingale function transforms as w / h
    assert np.allclose(src.eigen.w(g) / h(g), dst.eigen.w(g), atol=1e-10)


def test_validate_inward_ou_passes():
    reps = validate_assumptions(get_card("inward-ou-quadratic"))
    assert all(r.passed for r in reps), [r.line() for r in reps if not r.passed]
    sup = [r for r in reps if r.check == "moment.sup_phi_alpha"][0]
    assert sup.estimate == pytest.approx(1.0)


def test_validate_unbounded_w_sup():
    reps = validate_assumptions(get_card("unbounded-w"))
    sup = [r for r in reps if r.check == "moment.sup_phi_alpha"][0]
    assert sup.passed and sup.estimate == pytest.approx(1.0)


def test_validate_broken_card_fails():
    card = inward_ou()
    broken = BranchingMechanism(card.mech.beta, gaussian(1.0, 1.0, "alpha"), card.mech.pi)
    card = type(card)(**{**card.__dict__, "mech": broken})
    reps = {r.check: r for r in validate_assumptions(card)}
    assert not reps["moment.sup_phi_alpha"].passed


def test_heavytail_card_flags_missing_second_moment():
    reps = {r.check: r for r in validate_assumptions(get_card("inward-ou-heavytail"))}
    assert reps["moment.sup_phi_alpha"].passed
    # p = 1.5 for this card, so the large-jump moment of order p is finite
    assert reps["moment.sup_phi_large_jumps"].passed


@pytest.mark.parametrize("name", ["inward-ou-quadratic", "outward-ou-quadratic", "unbounded-w", "unbounded-beta"])
def test_slln_conditions_hold(name):
    reps = check_slln_skeleton_conditions(get_card(name), T=20.0)
    assert all(r.passed for r in reps), [r.line() for r in reps]


def test_slln_conditions_vacuous_for_wright_fisher():
    reps = check_slln_skeleton_conditions(get_card("wright-fisher"))
    assert all(r.passed for r in reps)


def test_ground_state_invariance_feynman_kac():
    # e^{-lam t} E_x[exp(int_0^t beta(xi_s) ds) phi(xi_t)] = phi(x) for the unbounded-beta card
    card = get_card("unbounded-beta")
    rng = np.random.default_rng(7)
    t, dt, n = 1.0, 0.005, 100000
    for x0 in (-1.0, -0.4, 0.0, 0.5, 1.2):
        x = np.full(n, x0)
        b_prev = card.mech.beta(x[:, None])
        integral = np.zeros(n)
        for _ in range(int(round(t / dt))):
            x = exact_ou_sample(card.motion.gamma, True, x, dt, rng)
            b = card.mech.beta(x[:, None])
            integral += 0.5 * dt * (b + b_prev)
            b_prev = b
        vals = np.exp(integral - card.lam * t) * card.eigen.phi(x[:, None])
        target = float(card.eigen.phi(np.array([[x0]]))[0])
        se = vals.std(ddof=1) / np.sqrt(n)
        assert abs(vals.mean() - target) <= 3 * se + 1e-3 * target, (x0, vals.mean(), target, se)


def test_summary_fields():
    s = get_card("inward-ou-tempered").summary()
    assert s["name"] == "inward-ou-tempered" and s["lambda_c"] == 1.0
    assert isinstance(get_card("inward-ou-quadratic").eigen.phi, Profile)
