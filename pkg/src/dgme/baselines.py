"""Comparison models built on the same network kernel.

* ``DeModel``: deep ensemble, K Gaussian members trained independently on
  the unweighted NLL and combined with uniform weights.  Trained by the
  DGME member-update routine with uniform responsibilities, so it matches
  the first EM round of a zero-initialized DGME bit for bit.
* ``MdnModel``: mixture density network, one shared hidden layer with
  K gate logits, K means and K raw variances.
* ``McdModel``: Monte Carlo dropout, a mean-only network trained on
  squared error with dropout plus a homoscedastic variance picked on a
  held-out split.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import network
from .mixture import Responsibilities, init_mixture, logsumexp, m_step_members
from .network import HALF_LOG_2PI, ParamSet, softplus, sigmoid
from .predictive import MixturePrediction, members_stochastic, sample_members, _member_components
from .seeding import STREAM_DROPOUT, STREAM_INIT, STREAM_MC, STREAM_SHUFFLE, STREAM_VALID, derive_rng, derive_seed


@dataclass
class DeModel:
    members: list
    p_d: float = 0.0

    kind = "de"

    @property
    def n_components(self):
        return len(self.members)

    @property
    def log_weights(self):
        return np.full(len(self.members), -math.log(len(self.members)))

    def components(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.members[0].d_x)
        return _member_components(self.members, self.log_weights, x)

    def stochastic_components(self, x, rng, p_d):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.members[0].d_x)
        return members_stochastic(self.members, self.log_weights, x, rng, p_d)

    def sample(self, x, n_draws, p_d, rng):
        k = len(self.members)
        return sample_members(self.members, np.full(k, 1.0 / k), x, n_draws, p_d, rng)


def fit_de(data, config):
    """Deep ensemble with ``config.epochs`` epochs per member.

    Members get the same init seeds as ``fit_em`` and are trained as the
    first EM round with every responsibility equal to ``1/K``.
    """
    config.validate()
    model = init_mixture(data.n_features, config)
    k = config.n_components
    resp = Responsibilities(np.full((len(data), k), -math.log(k)))
    members, _ = m_step_members(model, data, resp, config, round_index=1)
    return DeModel(members, config.p_d)


@dataclass
class MdnParams(ParamSet):
    W1: np.ndarray
    b1: np.ndarray
    W_gate: np.ndarray
    b_gate: np.ndarray
    W_mu: np.ndarray
    b_mu: np.ndarray
    W_var: np.ndarray
    b_var: np.ndarray

    @property
    def d_x(self):
        return self.W1.shape[0]

    @property
    def hidden(self):
        return self.W1.shape[1]

    @property
    def n_components(self):
        return self.b_gate.shape[0]


def init_mdn(d_x, h, k, seed=0):
    """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = np.random.default_rng(seed)
    a, b = 1.0 / math.sqrt(d_x), 1.0 / math.sqrt(h)
    return MdnParams(
        rng.uniform(-a, a, (d_x, h)),
        rng.uniform(-a, a, h),
        rng.uniform(-b, b, (h, k)),
        rng.uniform(-b, b, k),
        rng.uniform(-b, b, (h, k)),
        rng.uniform(-b, b, k),
        rng.uniform(-b, b, (h, k)),
        rng.uniform(-b, b, k),
    )


def mdn_forward_cache(params, x, mask=None):
    x = np.asarray(x, dtype=np.float64).reshape(-1, params.d_x)
    z = x @ params.W1 + params.b1
    a = np.maximum(z, 0.0)
    scale = None if mask is None else np.asarray(mask, dtype=np.float64)
    if scale is not None:
        a = a * scale
    logits = a @ params.W_gate + params.b_gate
    log_gate = logits - logsumexp(logits, axis=1)[:, None]
    mu = a @ params.W_mu + params.b_mu
    raw = a @ params.W_var + params.b_var
    sigma2 = softplus(raw) + network.SIGMA2_MIN
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma2)) and np.all(np.isfinite(log_gate))):
        norms = ", ".join(f"{n}={v:.3g}" for n, v in params.norms().items())
        raise network.NumericFault(f"non-finite MDN output (parameter norms: {norms})")
    return log_gate, mu, sigma2, (x, z, a, raw, scale)


def mdn_forward(params, x, mask=None):
    log_gate, mu, sigma2, _ = mdn_forward_cache(params, x, mask)
    return log_gate, mu, sigma2


def grad_mdn_nll(params, x, y, weights, mask=None):
    """Loss and gradient of the weighted mean mixture NLL of an MDN."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be non-negative with a positive sum")
    c = (w / w.sum())[:, None]
    log_gate, mu, sigma2, (x, z, a, raw, scale) = mdn_forward_cache(params, x, mask)
    r = y - mu
    joint = log_gate - (HALF_LOG_2PI + 0.5 * np.log(sigma2) + r * r / (2.0 * sigma2))
    lse = logsumexp(joint, axis=1)[:, None]
    post = np.exp(joint - lse)
    loss = float(-(c[:, 0] @ lse[:, 0]))
    d_logits = c * (np.exp(log_gate) - post)
    d_mu = -c * post * r / sigma2
    d_raw = c * post * (0.5 / sigma2 - 0.5 * r * r / (sigma2 * sigma2)) * sigmoid(raw)
    d_a = d_logits @ params.W_gate.T + d_mu @ params.W_mu.T + d_raw @ params.W_var.T
    if scale is not None:
        d_a = d_a * scale
    d_z = d_a * (z > 0.0)
    grads = MdnParams(
        x.T @ d_z,
        d_z.sum(axis=0),
        a.T @ d_logits,
        d_logits.sum(axis=0),
        a.T @ d_mu,
        d_mu.sum(axis=0),
        a.T @ d_raw,
        d_raw.sum(axis=0),
    )
    return loss, grads


@dataclass
class MdnModel:
    params: MdnParams
    p_d: float = 0.0

    kind = "mdn"

    @property
    def n_components(self):
        return self.params.n_components

    def components(self, x, mask=None):
        log_gate, mu, sigma2 = mdn_forward(self.params, x, mask)
        return MixturePrediction(log_gate, mu, sigma2)

    def stochastic_components(self, x, rng, p_d):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.params.d_x)
        return self.components(x, network.draw_mask(rng, (x.shape[0], self.params.hidden), p_d))

    def gate(self, x):
        return np.exp(mdn_forward(self.params, x)[0])

    def sample(self, x, n_draws, p_d, rng):
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        masks = network.draw_mask(rng, (n_draws, self.params.hidden), p_d)
        log_gate, mu, sigma2 = mdn_forward(self.params, np.repeat(x, n_draws, axis=0), masks)
        gate = np.exp(log_gate)
        cum = np.cumsum(gate, axis=1)
        u = rng.random(n_draws)[:, None] * cum[:, -1:]
        ks = np.minimum((u > cum).sum(axis=1), gate.shape[1] - 1)
        rows = np.arange(n_draws)
        return mu[rows, ks] + np.sqrt(sigma2[rows, ks]) * rng.standard_normal(n_draws)


def fit_mdn(data, config):
    config.validate()
    params = init_mdn(data.n_features, config.hidden, config.n_components, derive_seed(config.seed, STREAM_INIT, 0))
    x, y = data.features, data.targets
    ones = np.ones(len(data))
    drop_rng = derive_rng(config.seed, STREAM_DROPOUT, 0, 0)

    def grad_fn(p, idx):
        mask = network.draw_mask(drop_rng, (idx.shape[0], config.hidden), config.p_d) if config.p_d > 0 else None
        return grad_mdn_nll(p, x[idx], y[idx], ones[idx], mask)

    shuffle_rng = derive_rng(config.seed, STREAM_SHUFFLE, 0, 0)
    params, _ = network.run_adam(params, grad_fn, len(data), config.epochs, config.lr, config.batch_size, shuffle_rng)
    return MdnModel(params, config.p_d)


DEFAULT_VARIANCE_GRID = tuple(float(v) for v in np.logspace(-3, 2, 21))


@dataclass
class McdModel:
    params: network.MlpParams
    noise_variance: float
    p_d: float = 0.0
    n_passes: int = 50
    mc_seed: int = 0

    kind = "mcd"

    n_components = 1

    def pass_means(self, x, rng=None, n_passes=None):
        """``(n_passes, N)`` stochastic forward-pass means (one pass if ``p_d == 0``)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.params.d_x)
        if self.p_d == 0.0:
            return network.forward(self.params, x)[0][None, :]
        rng = rng if rng is not None else derive_rng(self.mc_seed, STREAM_MC)
        n = n_passes or self.n_passes
        h = self.params.hidden
        return np.stack([network.forward(self.params, x, network.draw_mask(rng, (x.shape[0], h), self.p_d))[0] for _ in range(n)])

    def components(self, x):
        mean = self.pass_means(x).mean(axis=0)
        n = mean.shape[0]
        return MixturePrediction(np.zeros((n, 1)), mean[:, None], np.full((n, 1), self.noise_variance))

    def stochastic_components(self, x, rng, p_d):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.params.d_x)
        mu, _ = network.forward(self.params, x, network.draw_mask(rng, (x.shape[0], self.params.hidden), p_d))
        n = mu.shape[0]
        return MixturePrediction(np.zeros((n, 1)), mu[:, None], np.full((n, 1), self.noise_variance))

    def sample(self, x, n_draws, p_d, rng):
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        masks = network.draw_mask(rng, (n_draws, self.params.hidden), p_d)
        mu, _ = network.forward(self.params, np.repeat(x, n_draws, axis=0), masks)
        return mu + math.sqrt(self.noise_variance) * rng.standard_normal(n_draws)


def select_noise_variance(pass_means, y, grid):
    """Grid value maximizing the mean Gaussian log-likelihood of ``y``."""
    mean = pass_means.mean(axis=0)
    sq = np.mean((y - mean) ** 2)
    scores = [-(HALF_LOG_2PI + 0.5 * math.log(v) + sq / (2.0 * v)) for v in grid]
    return float(grid[int(np.argmax(scores))]), scores


def fit_mcd(data, config, variance_grid=DEFAULT_VARIANCE_GRID, valid_fraction=0.1, n_passes=50):
    """Mean-only dropout network plus a held-out homoscedastic variance.

    The network is trained on a ``1 - valid_fraction`` split; the variance
    is the grid value that maximizes the Gaussian log-likelihood of the
    held-out targets around the Monte Carlo mean prediction.
    """
    config.validate()
    grid = [float(v) for v in variance_grid]
    if not grid:
        raise ValueError("variance grid is empty")
    if any(not v > 0 for v in grid):
        raise ValueError("variance grid values must be positive")
    n = len(data)
    perm = derive_rng(config.seed, STREAM_VALID).permutation(n)
    n_valid = max(1, int(round(valid_fraction * n))) if n > 1 else 0
    valid_idx, train_idx = perm[:n_valid], perm[n_valid:]
    if len(train_idx) == 0:
        train_idx, valid_idx = perm, perm
    train = data.subset(train_idx)
    valid = data.subset(valid_idx) if n_valid else train

    params = network.init_mlp(data.n_features, config.hidden, config.init, derive_seed(config.seed, STREAM_INIT, 0))
    x, y = train.features, train.targets
    ones = np.ones(len(train))
    drop_rng = derive_rng(config.seed, STREAM_DROPOUT, 0, 0)

    def grad_fn(p, idx):
        mask = network.draw_mask(drop_rng, (idx.shape[0], config.hidden), config.p_d) if config.p_d > 0 else None
        return network.grad_weighted_mse(p, x[idx], y[idx], ones[idx], mask)

    shuffle_rng = derive_rng(config.seed, STREAM_SHUFFLE, 0, 0)
    params, _ = network.run_adam(params, grad_fn, len(train), config.epochs, config.lr, config.batch_size, shuffle_rng)
    model = McdModel(params, grid[0], config.p_d, n_passes, derive_seed(config.seed, STREAM_MC))
    model.noise_variance, _ = select_noise_variance(model.pass_means(valid.features), valid.targets, grid)
    return model


def predict_baseline(model, x):
    """Uniform ``MixturePrediction`` view of any baseline model."""
    return model.components(x)
