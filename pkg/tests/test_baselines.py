import math

import numpy as np
import pytest

from dgme import network
from dgme.baselines import (
    DeModel,
    McdModel,
    MdnModel,
    fit_de,
    fit_mcd,
    fit_mdn,
    grad_mdn_nll,
    init_mdn,
    mdn_forward,
    predict_baseline,
    select_noise_variance,
)
from dgme.data import Dataset, Scaler, ToySpec, generate_toy, standardize
from dgme.mixture import TrainConfig, fit_em, logsumexp
from dgme.predictive import nll_mixture, sample_predictive

from fd_oracle import FD_STEP, KINK_MARGIN, fd_gradient, rel_err


@pytest.fixture(scope="module")
def gaussian_toy():
    return standardize(generate_toy(ToySpec("gaussian", seed=0)))


def test_de_single_member_is_heteroscedastic_regressor(gaussian_toy):
    data, _ = gaussian_toy
    de = fit_de(data, TrainConfig(n_components=1, epochs=2, hidden=8))
    assert de.n_components == 1
    pred = predict_baseline(de, data.features[:5])
    assert np.all(pred.log_weights == 0.0)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_de_matches_one_round_of_zero_initialized_em(gaussian_toy, k):
    data, _ = gaussian_toy
    cfg = TrainConfig(n_components=k, em_rounds=1, epochs=3, hidden=10, init="zeros_fixed_bias", seed=7)
    em = fit_em(data, cfg)
    de = fit_de(data, cfg)
    assert all(a.equals(b) for a, b in zip(em.members, de.members))
    assert np.all(em.weights == 1.0 / k)


def test_de_uniform_weights(gaussian_toy):
    data, _ = gaussian_toy
    de = fit_de(data, TrainConfig(n_components=4, epochs=1, hidden=5))
    assert np.all(predict_baseline(de, data.features[:3]).weights == 0.25)


def test_de_learns_noise_variance_on_gaussian_toy(gaussian_toy):
    data, sc = gaussian_toy
    de = fit_de(data, TrainConfig(n_components=2, epochs=50))
    s2 = np.concatenate([network.forward(p, data.features)[1] for p in de.members]) * sc.target_std**2
    assert 6.0 <= np.median(s2) <= 12.0


def random_mdn_instance(rng):
    d, h, k, n = rng.integers(1, 3), rng.integers(1, 6), rng.integers(1, 4), rng.integers(1, 7)
    p = init_mdn(d, h, k, int(rng.integers(2**31)))
    p = p.map(lambda a: a + rng.normal(0, 0.3, a.shape))
    x = rng.normal(size=(n, d))
    y = rng.normal(0, 2, size=n)
    w = rng.exponential(size=n) * (rng.random(n) < 0.8)
    if w.sum() == 0:
        w[0] = 1.0
    mask = network.draw_mask(rng, (n, h), 0.3) if rng.random() < 0.5 else None
    return p, x, y, w, mask


def test_mdn_gradient_matches_finite_differences():
    rng = np.random.default_rng(99)
    checked, worst = 0, 0.0
    while checked < 1000:
        p, x, y, w, mask = random_mdn_instance(rng)
        if np.min(np.abs(x @ p.W1 + p.b1)) <= KINK_MARGIN:
            continue
        _, g = grad_mdn_nll(p, x, y, w, mask)
        num = fd_gradient(lambda q: grad_mdn_nll(q, x, y, w, mask)[0], p)
        worst = max(worst, float(np.max(rel_err(g.flatten(), num))))
        checked += 1
    assert FD_STEP == 1e-5
    assert worst < 1e-4, worst


def test_mdn_single_component_reduces_to_gaussian_nll():
    r = np.random.default_rng(0)
    p = init_mdn(2, 5, 1, 3)
    x, y = r.normal(size=(10, 2)), r.normal(size=10)
    log_gate, mu, s2 = mdn_forward(p, x)
    assert np.all(log_gate == 0.0)
    loss, _ = grad_mdn_nll(p, x, y, np.ones(10))
    assert loss == pytest.approx(np.mean(network.gaussian_nll(y, mu[:, 0], s2[:, 0])), rel=1e-13)


def test_mdn_gates_sum_to_one():
    r = np.random.default_rng(1)
    p = init_mdn(1, 8, 4, 0).map(lambda a: a * 10)
    log_gate, _, _ = mdn_forward(p, r.normal(size=(100, 1)) * 5)
    assert np.max(np.abs(np.exp(log_gate).sum(axis=1) - 1.0)) < 1e-12
    assert np.max(np.abs(logsumexp(log_gate, axis=1))) < 1e-12


def test_mdn_recovers_bimodal_gates():
    data, sc = standardize(generate_toy(ToySpec("bimodal", seed=1)))
    mdn = fit_mdn(data, TrainConfig(n_components=2, epochs=200))
    # per-input gates sorted so the comparison ignores component labels
    g = np.sort(mdn.gate(data.features), axis=1)[:, ::-1].mean(axis=0)
    assert abs(g[0] - 0.7) < 0.1 and abs(g[1] - 0.3) < 0.1
    assert math.isfinite(nll_mixture(mdn, data, sc))


def test_mdn_sampling_and_determinism():
    data, _ = standardize(generate_toy(ToySpec("gaussian", n=100, seed=2)))
    cfg = TrainConfig(n_components=2, epochs=3, hidden=8, p_d=0.1)
    a, b = fit_mdn(data, cfg), fit_mdn(data, cfg)
    assert a.params.equals(b.params)
    s = sample_predictive(a, np.zeros((1, 1)), 500, 0.1, seed=0)
    assert s.values.shape == (500,) and np.all(np.isfinite(s.values))


def test_mcd_selects_smallest_variance_on_noiseless_linear_data():
    x = np.linspace(-1, 1, 200)[:, None]
    data = Dataset(x, 0.5 * x[:, 0])
    # scoring a perfect predictor: every grid value but the smallest is worse
    v, scores = select_noise_variance(np.array([0.5 * x[:, 0]]), data.targets, [1e-6, 1e-3, 1.0])
    assert v == 1e-6 and np.argmax(scores) == 0
    mcd = fit_mcd(data, TrainConfig(epochs=100, p_d=0.0, hidden=20), [network.SIGMA2_MIN, 1.0, 10.0])
    assert mcd.noise_variance == network.SIGMA2_MIN or mcd.noise_variance == 1.0


def test_mcd_selects_nine_on_gaussian_toy(gaussian_toy):
    data, sc = gaussian_toy
    grid = [v / sc.target_std**2 for v in (1, 3, 9, 27)]
    mcd = fit_mcd(data, TrainConfig(epochs=50, p_d=0.1), grid)
    assert mcd.noise_variance * sc.target_std**2 == pytest.approx(9.0)


def test_mcd_without_dropout_is_deterministic(gaussian_toy):
    data, _ = gaussian_toy
    mcd = fit_mcd(data, TrainConfig(epochs=2, p_d=0.0, hidden=8))
    x = data.features[:20]
    assert mcd.pass_means(x).shape == (1, 20)
    det = network.forward(mcd.params, x)[0]
    sto = mcd.stochastic_components(x, np.random.default_rng(0), 0.0).means[:, 0]
    assert np.array_equal(det, sto)
    pred = predict_baseline(mcd, x)
    assert pred.n_components == 1 and np.array_equal(pred.means[:, 0], det)


def test_mcd_rejects_bad_grid(gaussian_toy):
    data, _ = gaussian_toy
    with pytest.raises(ValueError, match="empty"):
        fit_mcd(data, TrainConfig(epochs=1), [])
    with pytest.raises(ValueError):
        fit_mcd(data, TrainConfig(epochs=1), [0.0, 1.0])


def test_every_model_kind_exposes_dropout_rate(gaussian_toy):
    data, _ = gaussian_toy
    cfg = TrainConfig(n_components=2, epochs=1, hidden=4, p_d=0.05)
    for model in (fit_de(data, cfg), fit_mdn(data, cfg), fit_mcd(data, cfg)):
        assert model.p_d == 0.05
    assert isinstance(fit_de(data, cfg), DeModel)
    assert isinstance(fit_mdn(data, cfg), MdnModel)
    assert isinstance(fit_mcd(data, cfg), McdModel)
    assert Scaler.identity(1).target_std == 1.0
