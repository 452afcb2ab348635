"""Predictive densities, moment summaries, sampling and metrics.

Every model kind exposes its prediction at a batch of inputs as a
``MixturePrediction``: per-point log-weights, means and variances of
shape ``(N, K)``.  All metrics are computed from that representation, so
they apply unchanged to the baselines.  Metrics take standardized data
plus the ``Scaler`` and report values in original target units.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import network
from .mixture import MixtureModel, logsumexp
from .seeding import STREAM_MC, STREAM_SAMPLE, derive_rng


@dataclass
class MixturePrediction:
    log_weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def n_components(self):
        return self.means.shape[1]

    def log_density(self, y):
        """Per-point log mixture density of ``y`` (shape ``(N,)``)."""
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        comp = -network.gaussian_nll(y, self.means, self.variances)
        return logsumexp(self.log_weights + comp, axis=1)

    def moments(self):
        w = self.weights
        mean = np.sum(w * self.means, axis=1)
        second = np.sum(w * (self.variances + self.means**2), axis=1)
        return mean, np.maximum(second - mean**2, 0.0)

    def at(self, i):
        return MixturePrediction(self.log_weights[i : i + 1], self.means[i : i + 1], self.variances[i : i + 1])


@dataclass
class PredictiveSamples:
    values: np.ndarray
    p_d: float
    seed: int
    n_draws: int


def _as_rows(x, d_x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, d_x)


def _member_components(members, log_weights, x, masks=None):
    outs = [network.forward(p, x, None if masks is None else masks[k]) for k, p in enumerate(members)]
    means = np.stack([o[0] for o in outs], axis=1)
    variances = np.stack([o[1] for o in outs], axis=1)
    lw = np.broadcast_to(np.asarray(log_weights, dtype=np.float64), means.shape).copy()
    return MixturePrediction(lw, means, variances)


def members_stochastic(members, log_weights, x, rng, p_d):
    """One dropout draw per point and per member."""
    h = members[0].hidden
    masks = [network.draw_mask(rng, (x.shape[0], h), p_d) for _ in members]
    return _member_components(members, log_weights, x, masks)


def sample_members(members, weights, x, n_draws, p_d, rng):
    """Component, dropout mask, then Gaussian draw; ``x`` is a single input row."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    ks = rng.choice(len(members), size=n_draws, p=np.asarray(weights) / np.sum(weights))
    masks = network.draw_mask(rng, (n_draws, members[0].hidden), p_d)
    noise = rng.standard_normal(n_draws)
    mu = np.empty(n_draws)
    sigma2 = np.empty(n_draws)
    for k, params in enumerate(members):
        rows = ks == k
        if rows.any():
            xs = np.repeat(x, rows.sum(), axis=0)
            mu[rows], sigma2[rows] = network.forward(params, xs, masks[rows])
    return mu + np.sqrt(sigma2) * noise


def predict_components(model, x):
    """Deterministic (maskless) per-component prediction at inputs ``x``."""
    if isinstance(model, MixtureModel):
        x = _as_rows(x, model.members[0].d_x)
        return _member_components(model.members, model.log_weights, x)
    return model.components(x)


def stochastic_components(model, x, rng, p_d):
    if isinstance(model, MixtureModel):
        x = _as_rows(x, model.members[0].d_x)
        return members_stochastic(model.members, model.log_weights, x, rng, p_d)
    return model.stochastic_components(x, rng, p_d)


def mc_components(model, x, n_masks, p_d, seed=0):
    """Monte Carlo dropout predictive as one large mixture.

    Each of ``n_masks`` dropout draws contributes every component with its
    weight divided by ``n_masks``, so the result is the average of the
    per-draw mixture densities.
    """
    if n_masks < 1:
        raise ValueError(f"n_masks must be >= 1, got {n_masks}")
    rng = derive_rng(seed, STREAM_MC)
    draws = [stochastic_components(model, x, rng, p_d) for _ in range(n_masks)]
    return MixturePrediction(
        np.concatenate([d.log_weights for d in draws], axis=1) - math.log(n_masks),
        np.concatenate([d.means for d in draws], axis=1),
        np.concatenate([d.variances for d in draws], axis=1),
    )


def _prediction(model, x, n_masks=0, p_d=None, seed=0):
    if n_masks:
        return mc_components(model, x, n_masks, model.p_d if p_d is None else p_d, seed)
    return predict_components(model, x)


def predict_moments(model, x):
    return predict_components(model, x).moments()


def sample_predictive(model, x, n_draws, p_d, seed):
    """Draw ``n_draws`` samples of y at the single input ``x``."""
    if n_draws < 1:
        raise ValueError(f"need at least one draw, got {n_draws}")
    if not 0.0 <= p_d < 1.0:
        raise ValueError(f"p_d must lie in [0, 1), got {p_d}")
    rng = derive_rng(seed, STREAM_SAMPLE)
    if isinstance(model, MixtureModel):
        values = sample_members(model.members, model.weights, x, n_draws, p_d, rng)
    else:
        values = model.sample(x, n_draws, p_d, rng)
    return PredictiveSamples(values, p_d, seed, n_draws)


def nll_mixture(model, data, scaler, n_masks=0, p_d=None, seed=0):
    """Mean negative log mixture density, in original target units.

    With ``n_masks > 0`` the density is the Monte Carlo dropout average
    over that many masks (rate ``p_d``, default the model's training rate).
    """
    pred = _prediction(model, data.features, n_masks, p_d, seed)
    return float(-np.mean(pred.log_density(data.targets))) + scaler.log_target_std


def nll_gaussian_summary(model, data, scaler, n_masks=0, p_d=None, seed=0):
    """Mean NLL of the moment-matched single Gaussian, in original units."""
    mean, var = _prediction(model, data.features, n_masks, p_d, seed).moments()
    var = np.maximum(var, network.SIGMA2_MIN)
    return float(np.mean(network.gaussian_nll(data.targets, mean, var))) + scaler.log_target_std


def rmse(model, data, scaler):
    mean, _ = predict_moments(model, data.features)
    return float(np.sqrt(np.mean((data.targets - mean) ** 2))) * scaler.target_std


def excess_kurtosis(samples):
    """Biased central-moment estimate ``m4 / m2**2 - 3``."""
    s = np.asarray(getattr(samples, "values", samples), dtype=np.float64).reshape(-1)
    if s.shape[0] < 4:
        raise ValueError(f"kurtosis needs at least 4 samples, got {s.shape[0]}")
    d = s - s.mean()
    m2 = np.mean(d * d)
    if not m2 > 0.0:
        raise ValueError("kurtosis undefined for zero-variance samples")
    return float(np.mean(d**4) / (m2 * m2) - 3.0)


METRICS = ("nll", "nll_gaussian", "rmse")


def evaluate(model, data, scaler, metrics=METRICS, prefix="", n_masks=0, seed=0):
    """Flat ``{prefix + metric: value}`` record for the requested metrics."""
    out = {}
    for name in metrics:
        if name == "nll":
            v = nll_mixture(model, data, scaler, n_masks=n_masks, seed=seed)
        elif name == "nll_gaussian":
            v = nll_gaussian_summary(model, data, scaler, n_masks=n_masks, seed=seed)
        elif name == "rmse":
            v = rmse(model, data, scaler)
        else:
            raise ValueError(f"unknown metric {name!r}; expected one of {METRICS}")
        out[prefix + name] = v
    return out

