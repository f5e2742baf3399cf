import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netchoice.clogit import fit, fit_nonparametric_pa
from netchoice.evalstats import (
    EvalError, holdout_accuracy, kernel_from_nonparametric, lr_test, newman_kernel,
    pham_ls_alpha, powerlaw_mle, predicted_choice, wilson_interval,
)
from netchoice.features import ChoiceData, EventFilter, extract_choices
from netchoice.generators import GrowthConfig, generate

from oracles import random_choice_data, sample_discrete_powerlaw


# ---- likelihood-ratio test ------------------------------------------------


def test_identical_models():
    rng = np.random.default_rng(0)
    data = random_choice_data(rng, 100, 2)
    f = fit(data)
    res = lr_test(f, f)
    assert res.statistic == 0.0 and res.pvalue == 1.0 and res.df == 0


def test_nested_statistic_and_pvalue():
    rng = np.random.default_rng(1)
    data = random_choice_data(rng, 400, 2, theta=np.array([0.0, 0.8]))
    null, alt = fit(data, ["x0"]), fit(data)
    res = lr_test(null, alt)
    assert res.df == 1
    assert res.statistic == pytest.approx(2 * (alt.loglik - null.loglik))
    assert res.pvalue < 1e-6


def test_non_nested_rejected():
    with pytest.raises(EvalError, match="nested"):
        lr_test((-10.0, ["a"]), (-9.0, ["b", "c"]))
    with pytest.raises(EvalError):
        lr_test((-10.0, ["a"]), (-12.0, ["a", "b"]))


def test_reparameterization_invariance():
    rng = np.random.default_rng(2)
    data = random_choice_data(rng, 300, 3, theta=np.array([0.5, -0.3, 0.2]))
    base = lr_test(fit(data, ["x0"]), fit(data))
    A = np.array([[2.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.5, -1.0, 3.0]])
    X = data.X @ A.T
    re = ChoiceData(["y0", "y1", "y2"], X, data.offsets, data.chosen)
    null = fit(re, ["y0"])  # y0 = 2 x0 spans the same null model
    alt = fit(re)
    res = lr_test((null.loglik, ["x0"]), (alt.loglik, ["x0", "x1", "x2"]))
    assert res.statistic == pytest.approx(base.statistic, rel=1e-8)


# ---- power law ------------------------------------------------------------


def test_powerlaw_recovers_exponent():
    x = sample_discrete_powerlaw(2.5, 1, 10_000, np.random.default_rng(3))
    res = powerlaw_mle(x, xmin=1)
    assert abs(res.gamma - 2.5) < 0.1 and res.n_tail == 10_000 and res.se > 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_powerlaw_duplication_invariance(seed, xmin):
    x = sample_discrete_powerlaw(2.2, xmin, 500, np.random.default_rng(seed))
    a = powerlaw_mle(x, xmin=xmin)
    b = powerlaw_mle(np.concatenate([x, x]), xmin=xmin)
    assert a.gamma == pytest.approx(b.gamma, abs=1e-6)


def test_powerlaw_ks_scan_finds_tail():
    rng = np.random.default_rng(4)
    body = rng.integers(1, 5, size=3000)
    tail = sample_discrete_powerlaw(2.5, 5, 5000, rng)
    res = powerlaw_mle(np.concatenate([body, tail]), ks_scan=True)
    assert res.xmin >= 4 and abs(res.gamma - 2.5) < 0.15


def test_powerlaw_errors():
    with pytest.raises(EvalError):
        powerlaw_mle([1, 2, 3], xmin=10)
    with pytest.raises(EvalError):
        powerlaw_mle([1, 2], xmin=0)
    with pytest.warns(RuntimeWarning):
        powerlaw_mle([1, 2, 3, 5, 8], xmin=1)


# ---- kernels --------------------------------------------------------------


def test_newman_two_event_hand_computation():
    deg = np.array([1, 1, 2, 1, 2, 3], float)[:, None]
    data = ChoiceData(["degree"], deg, [0, 3, 6], [2, 0])
    k = newman_kernel(data)
    # degree 1: 1 of 3 exposures chosen; degree 2: 1 of 2; degree 3: 0 of 1
    assert k.exposures.tolist() == [0, 3, 2, 1]
    assert k.choices.tolist() == [0, 1, 1, 0]
    assert np.isnan(k.value[0])
    assert k.value[1:].tolist() == pytest.approx([1.0, 1.5, 0.0])
    lo, hi = wilson_interval(1, 3)
    assert k.lo[1] == pytest.approx(lo * 3) and k.hi[1] == pytest.approx(hi * 3)


def test_wilson_contains_rate():
    lo, hi = wilson_interval(np.array([0, 5, 10]), np.array([10, 10, 10]))
    assert np.all(lo <= np.array([0, 0.5, 1.0]) + 1e-12)
    assert np.all(hi >= np.array([0, 0.5, 1.0]) - 1e-12)


def test_newman_flat_on_uniform_data():
    g, _ = generate(GrowthConfig(n=2000, m=2, model="uniform", directed=True, seed=5))
    data = extract_choices(g, "deg", filters=EventFilter(min_event=g.meta["bootstrap_edges"]))
    k = newman_kernel(data, max_degree=6)
    ok = np.flatnonzero(k.choices >= 20)
    ok = ok[ok != 1]
    assert len(ok) >= 4
    assert np.all(np.abs(np.log(k.value[ok])) < 3 * k.se_log[ok])


def test_kernel_from_nonparametric_normalized():
    g, _ = generate(GrowthConfig(n=500, m=1, model="pa", seed=6))
    data = extract_choices(g, "deg", filters=EventFilter(min_event=g.meta["bootstrap_edges"]))
    npf = fit_nonparametric_pa(data, 10)
    k = kernel_from_nonparametric(npf)
    assert k.at(1) == 1.0 and k.estimator == "nonparametric-logit"
    assert "degree,propensity,lo,hi,estimator" in k.to_csv()


def test_pham_ls_exact_line():
    k = np.arange(0, 12)
    theta = 0.7 * np.log(np.maximum(k, 1))
    se = np.where(k == 1, 0.0, 0.1 + 0.01 * k)
    theta = theta.astype(float)
    theta[0] = 0.3  # degree 0 is not on the log scale and is ignored
    assert pham_ls_alpha((k, theta, se)) == pytest.approx(0.7, abs=1e-12)
    with pytest.raises(EvalError):
        pham_ls_alpha(([0, 1, 2], [0.0, 0.0, 1.0], [0.1, 0.0, 0.1]))


def test_pham_ls_close_to_mle_on_pa():
    g, _ = generate(GrowthConfig(n=2000, m=1, model="pa", seed=7))
    data = extract_choices(g, "logdeg,deg",
                           filters=EventFilter(min_event=g.meta["bootstrap_edges"]))
    mle = fit(data, ["log_degree"])["log_degree"]
    npf = fit_nonparametric_pa(data, int(data.column("degree").max()))
    a = pham_ls_alpha(npf)
    assert abs(a - 1) < 0.15 and abs(a - mle) < 0.1


# ---- prediction -----------------------------------------------------------


def test_ties_broken_by_lowest_index():
    data = ChoiceData(["x"], np.array([[1.0], [3.0], [3.0], [0.0], [0.0]]), [0, 3, 5], [2, 1])
    assert predicted_choice(np.array([1.0]), data).tolist() == [1, 0]
    assert holdout_accuracy(np.array([1.0]), data) == 0.0


def test_uniform_model_at_chance():
    rng = np.random.default_rng(8)
    data = random_choice_data(rng, 20_000, 1, size_range=(25, 25))
    acc = holdout_accuracy(np.zeros(1), data)
    assert abs(acc - 1 / 25) < 3 * np.sqrt(1 / 25 * 24 / 25 / 20_000)


def test_separated_toy_is_perfect():
    X = np.array([[1.0], [0.0], [0.0], [0.0], [1.0]])
    data = ChoiceData(["x"], X, [0, 2, 5], [0, 2])
    assert holdout_accuracy(np.array([2.0]), data) == 1.0


def test_accuracy_uses_fit_feature_names():
    rng = np.random.default_rng(9)
    data = random_choice_data(rng, 500, 2, theta=np.array([2.0, 0.0]))
    f = fit(data, ["x0"])
    assert holdout_accuracy(f, data) == holdout_accuracy(f.coef, data.select(["x0"]))


def test_pa_beats_uniform_out_of_sample():
    wins = 0
    for seed in range(20):
        g, _ = generate(GrowthConfig(n=600, m=1, model="pa", seed=100 + seed))
        data = extract_choices(g, "logdeg", filters=EventFilter(min_event=1),
                               neg_samples=10, seed=seed)
        half = data.n_events // 2
        train, test = data.subset(np.arange(half)), data.subset(np.arange(half, data.n_events))
        pa = holdout_accuracy(fit(train), test)
        uni = holdout_accuracy(np.zeros(1), test)
        wins += pa > uni
    assert wins == 20
