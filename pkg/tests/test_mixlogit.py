import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from netchoice.clogit import fit, log_likelihood
from netchoice.features import ChoiceData, EventFilter, extract_choices
from netchoice.generators import GrowthConfig, generate
from netchoice.mixlogit import (
    MixtureError, MixtureModel, Mode, em_fit, fit_copy, fit_local_search, fit_rp,
    likelihood_surface, mixture_loglik, mode_logliks, responsibilities,
)

from oracles import events_of, naive_mixture_loglik, random_choice_data


def with_flag(data, rng):
    flag = (rng.random(data.X.shape[0]) < 0.6).astype(float)
    return ChoiceData(list(data.names) + ["flag"], np.column_stack([data.X, flag]),
                      data.offsets, data.chosen)


def growth_data(model, n, m, seed, spec="logdeg,hasdeg,fof", **kw):
    g, _ = generate(GrowthConfig(n=n, m=m, model=model, seed=seed, **kw))
    return extract_choices(g, spec, filters=EventFilter(min_event=g.meta["bootstrap_edges"]))


# ---- likelihood -----------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_mixture_loglik_matches_naive_oracle(seed, p):
    rng = np.random.default_rng(seed)
    data = with_flag(random_choice_data(rng, 10, 2), rng)
    t1, t2 = rng.normal(size=2), rng.normal(size=1)
    model = MixtureModel([Mode("a", ("x0", "x1"), None, t1), Mode("b", ("x1",), "flag", t2)],
                         np.array([p, 1 - p]))
    ev = events_of(data)
    flag = data.column("flag") > 0
    masks = [
        [[True] * len(X) for X, _ in ev],
        [flag[data.offsets[k]:data.offsets[k + 1]].tolist() for k in range(data.n_events)],
    ]
    ev_a = [([r[:2] for r in X], c) for X, c in ev]
    ev_b = [([r[1:2] for r in X], c) for X, c in ev]
    # the oracle takes one feature layout; evaluate each mode on its own columns
    want = 0.0
    for k in range(data.n_events):
        la = np.exp(naive_mixture_loglik([1.0], [t1], [ev_a[k]], [[masks[0][k]]]))
        keep = masks[1][k]
        lb = (np.exp(naive_mixture_loglik([1.0], [t2], [ev_b[k]], [[keep]]))
              if keep[ev[k][1]] else 0.0)
        want += np.log(p * la + (1 - p) * lb)
    assert mixture_loglik(model, data) == pytest.approx(want, rel=1e-10)


def test_single_mode_weight_one_equals_logit():
    rng = np.random.default_rng(0)
    data = random_choice_data(rng, 30, 2)
    theta = np.array([0.3, -0.2])
    model = MixtureModel([Mode("a", ("x0", "x1"), None, theta), Mode("u", ())],
                         np.array([1.0, 0.0]))
    assert mixture_loglik(model, data) == pytest.approx(log_likelihood(theta, data), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_identical_modes_degenerate(seed, p):
    rng = np.random.default_rng(seed)
    data = random_choice_data(rng, 15, 1)
    model = MixtureModel([Mode("u1", ()), Mode("u2", ())], np.array([p, 1 - p]))
    assert mixture_loglik(model, data) == pytest.approx(-np.sum(np.log(data.sizes)), rel=1e-12)
    th = rng.normal(size=1)
    shared = MixtureModel([Mode("a", ("x0",), None, th), Mode("b", ("x0",), None, th)],
                          np.array([p, 1 - p]))
    assert mixture_loglik(shared, data) == pytest.approx(log_likelihood(th, data), rel=1e-12)


def test_filtered_mode_gives_zero_outside():
    X = np.array([[0.0, 1.0], [0.0, 0.0], [0.0, 1.0]])
    data = ChoiceData(["x", "flag"], X, [0, 3], [1])
    model = MixtureModel([Mode("f", (), "flag"), Mode("u", ())])
    L = mode_logliks(model, data)
    assert L[0, 0] == -np.inf and L[0, 1] == pytest.approx(np.log(1 / 3))


# ---- EM -------------------------------------------------------------------


def test_single_mode_em_equals_fit():
    rng = np.random.default_rng(1)
    data = random_choice_data(rng, 300, 2, theta=np.array([0.8, -0.5]))
    em = em_fit(data, MixtureModel([Mode("only", ("x0", "x1"))]))
    ref = fit(data)
    np.testing.assert_allclose(em.model.modes[0].theta, ref.coef, atol=1e-7)
    assert em.loglik == pytest.approx(ref.loglik, rel=1e-12)
    assert em.pi.tolist() == [1.0]


def test_three_event_toy_matches_grid_oracle():
    X = np.array([[0.0], [1.0], [2.0]] * 2 + [[0.0], [1.0], [2.0], [3.0]])
    data = ChoiceData(["x"], X, [0, 3, 6, 10], [2, 1, 0])
    ev = events_of(data)
    masks = [[[True] * len(e[0]) for e in ev]] * 2

    def negll(t):
        if not 0 < t[0] < 1:
            return np.inf
        return -naive_mixture_loglik([t[0], 1 - t[0]], [[t[1]], []], ev, masks)

    P, T = np.linspace(0.005, 0.995, 100), np.linspace(-8, 8, 161)
    grid = np.array([[negll((p, t)) for t in T] for p in P])
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    ref = optimize.minimize(negll, [P[i], T[j]], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    em = em_fit(data, MixtureModel([Mode("logit", ("x",)), Mode("uniform", ())]),
                tol=1e-13, max_iter=100_000)
    assert em.converged
    assert em.loglik == pytest.approx(-ref.fun, abs=1e-9)
    assert em.pi[0] == pytest.approx(ref.x[0], abs=1e-4)
    assert em.model.modes[0].theta[0] == pytest.approx(ref.x[1], abs=1e-3)


def copy_data(n=600, m=4, p=0.5, seed=0, s=10):
    g, _ = generate(GrowthConfig(n=n, m=m, model="copy", p=p, seed=seed))
    return extract_choices(g, "logdeg", filters=EventFilter(min_event=g.meta["bootstrap_edges"]),
                           neg_samples=s, seed=seed)


def test_em_monotone_and_pi_identity():
    data = copy_data()
    model = MixtureModel([Mode("pa", ("log_degree",)), Mode("uniform", ())])
    em = em_fit(data, model, n_starts=1, max_iter=50)
    lls = [t["loglik"] for t in em.trajectory]
    assert np.all(np.diff(lls) >= -1e-9 * abs(lls[0]))
    # pi after one step equals the mean responsibility under the start
    start = MixtureModel([Mode("pa", ("log_degree",)), Mode("uniform", ())])
    gamma = responsibilities(mode_logliks(start, data), start.pi)
    np.testing.assert_allclose(gamma.sum(axis=1), 1.0)
    assert np.all((gamma >= 0) & (gamma <= 1))
    np.testing.assert_allclose(em.trajectory[1]["pi"], gamma.mean(axis=0), rtol=1e-12)


def test_label_permutation():
    rng = np.random.default_rng(4)
    data = random_choice_data(rng, 200, 2, theta=np.array([1.0, 0.0]))
    a = Mode("a", ("x0",))
    b = Mode("b", ("x1",))
    one = em_fit(data, MixtureModel([a, b]), n_starts=1, max_iter=200)
    two = em_fit(data, MixtureModel([b, a]), n_starts=1, max_iter=200)
    np.testing.assert_allclose(one.pi, two.pi[::-1], atol=1e-10)
    np.testing.assert_allclose(one.model.modes[0].theta, two.model.modes[1].theta, atol=1e-8)
    assert one.loglik == pytest.approx(two.loglik, rel=1e-12)


def test_frozen_coefficients_never_change():
    data = copy_data(seed=2)
    model = MixtureModel([Mode("pa", ("log_degree",), None, [0.7], True),
                          Mode("pa_free", ("log_degree",))])
    em = em_fit(data, model, n_starts=2, max_iter=30)
    assert all(t["theta"][0] == [0.7] for t in em.trajectory)
    assert em.model.param_names() == ["pi[pa_free]", "pa_free.log_degree"]


def test_unreachable_events_rejected():
    X = np.array([[0.0], [0.0], [0.0]])
    data = ChoiceData(["flag"], X, [0, 3], [0])
    with pytest.raises(MixtureError, match="zero likelihood"):
        em_fit(data, MixtureModel([Mode("f", (), "flag"), Mode("g", (), "flag")]))
    with pytest.raises(MixtureError, match="columns"):
        em_fit(data, MixtureModel([Mode("f", ("nope",))]))


def test_bad_pi_rejected():
    with pytest.raises(MixtureError):
        MixtureModel([Mode("a", ()), Mode("b", ())], np.array([0.7, 0.7]))


# ---- surface --------------------------------------------------------------


def test_surface_single_point_equals_mixture_loglik():
    data = copy_data(seed=3)
    s = likelihood_surface(data, [0.8], [0.3])
    model = MixtureModel([Mode("pa", ("log_degree",), None, [0.8], True), Mode("uniform", ())],
                         np.array([0.3, 0.7]))
    assert s.shape == (1, 1)
    assert s[0, 0] == pytest.approx(mixture_loglik(model, data), rel=1e-12)


def test_em_not_beaten_by_grid():
    data = copy_data(seed=5)
    alphas, pis = np.linspace(0, 2, 21), np.linspace(0, 1, 21)
    surf = likelihood_surface(data, alphas, pis)
    em = em_fit(data, MixtureModel([Mode("pa", ("log_degree",)), Mode("uniform", ())]),
                n_starts=2, seed=5)
    assert surf.max() <= em.loglik + 1e-6 * abs(em.loglik)


# ---- constrained growth models --------------------------------------------


def test_uniform_data_gives_no_mixture_signal():
    data = growth_data("uniform", 800, 3, seed=6)
    copy = fit_copy(data)
    local = fit_local_search(data)
    assert copy.estimate > 0.9 and local.estimate > 0.9
    assert copy.grid.shape == copy.profile.shape
    assert copy.loglik >= copy.profile.max() - 1e-9


def test_profile_names_and_rp_nesting():
    data = growth_data("rp", 500, 3, seed=7, r=0.5, p=0.5)
    copy = fit_copy(data)
    full = fit_rp(data, n_starts=1, max_iter=300)
    assert copy.param_names == ["pi[pa]"]
    assert full.model.param_names() == ["pi[pa]", "pi[uniform-fof]"]
    # the three-mode model contains the copy model, so it cannot fit worse
    assert full.loglik >= copy.loglik - 1e-6
    four = fit_rp(data, four_modes=True, n_starts=1, max_iter=300)
    assert four.loglik >= full.loglik - 1e-3
