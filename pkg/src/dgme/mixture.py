"""EM training of a weighted ensemble of Gaussian networks.

The conditional density is ``p(y|x) = sum_k pi_k N(y; mu_k(x), sigma2_k(x))``
with input-independent weights ``pi``.  Each EM round computes log
responsibilities, sets ``pi`` to their column means, then warm-starts
every member from its current parameters and runs ``epochs`` of Adam on
its responsibility-weighted NLL.
"""

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import network
from .network import INIT_SCHEMES, NumericFault
from .seeding import STREAM_DROPOUT, STREAM_INIT, STREAM_RESTART, STREAM_SHUFFLE, derive_rng, derive_seed


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())[()]


@dataclass
class TrainConfig:
    n_components: int = 5
    em_rounds: int = 5
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 32
    hidden: int = 50
    seed: int = 0
    init: str = "default_uniform"
    p_d: float = 0.0
    pi_floor: float = 1e-6
    restarts: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n_components", "em_rounds", "epochs", "batch_size", "hidden", "restarts"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.p_d < 1.0:
            raise ValueError(f"p_d must lie in [0, 1), got {self.p_d}")
        if not 0.0 < self.pi_floor < 1.0 / self.n_components:
            raise ValueError(f"pi_floor must lie in (0, 1/K), got {self.pi_floor}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class MixtureModel:
    weights: np.ndarray
    members: list
    p_d: float = 0.0
    history: list = field(default_factory=list)
    restart: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.shape[0] != len(self.members) or not self.members:
            raise ValueError("need one weight per member and at least one member")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError(f"weights must lie on the simplex, got {self.weights}")

    @property
    def n_components(self):
        return len(self.members)

    @property
    def log_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights)


@dataclass
class Responsibilities:
    log_gamma: np.ndarray

    @property
    def gamma(self):
        return np.exp(self.log_gamma)


def init_mixture(d_x, config):
    members = [
        network.init_mlp(d_x, config.hidden, config.init, derive_seed(config.seed, STREAM_INIT, k))
        for k in range(config.n_components)
    ]
    k = config.n_components
    return MixtureModel(np.full(k, 1.0 / k), members, config.p_d)


def member_log_densities(members, x, y):
    """``(N, K)`` matrix of per-member Gaussian log-densities."""
    return np.stack([-network.member_nll(p, x, y) for p in members], axis=1)


def _joint_terms(model, data):
    return model.log_weights + member_log_densities(model.members, data.features, data.targets)


def e_step(model, data):
    a = _joint_terms(model, data)
    # shift first so tied rows give exactly -log(K)
    shifted = a - np.max(a, axis=1, keepdims=True)
    return Responsibilities(shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True)))


def floor_simplex(pi, floor):
    """Raise entries below ``floor`` to exactly ``floor``, rescale the rest."""
    pi = np.asarray(pi, dtype=np.float64)
    low = pi < floor
    while True:
        free_mass = 1.0 - floor * low.sum()
        out = np.where(low, floor, pi * free_mass / pi[~low].sum())
        new_low = low | (out < floor)
        if np.array_equal(new_low, low):
            return out
        low = new_low


def m_step_weights(resp, pi_floor=1e-6):
    return floor_simplex(resp.gamma.mean(axis=0), pi_floor)


def _train_member(params, data, weights, config, member, round_index):
    x, y = data.features, data.targets
    shuffle_rng = derive_rng(config.seed, STREAM_SHUFFLE, member, round_index)
    drop_rng = derive_rng(config.seed, STREAM_DROPOUT, member, round_index)
    h = params.hidden

    def grad_fn(p, idx):
        w = weights[idx]
        if not w.sum() > 0.0:
            return None
        mask = network.draw_mask(drop_rng, (idx.shape[0], h), config.p_d) if config.p_d > 0 else None
        return network.grad_weighted_nll(p, x[idx], y[idx], w, mask)

    try:
        return network.run_adam(params, grad_fn, len(data), config.epochs, config.lr, config.batch_size, shuffle_rng)
    except NumericFault as exc:
        raise NumericFault(f"member {member}, EM round {round_index}: {exc}") from exc


def m_step_members(model, data, resp, config, round_index=1):
    """Train every member on its column of responsibilities.

    Members are independent given ``resp``; each draws its shuffling and
    dropout streams from ``(config.seed, member, round_index)``.  Adam
    state starts fresh each round.  Returns ``(members, loss_histories)``.
    """
    if resp.log_gamma.shape != (len(data), model.n_components):
        raise ValueError(f"responsibilities shape {resp.log_gamma.shape} does not match data/model")
    gamma = resp.gamma
    members, histories = [], []
    for k, params in enumerate(model.members):
        new, hist = _train_member(params, data, gamma[:, k], config, k, round_index)
        members.append(new)
        histories.append(hist)
    return members, histories


def joint_log_likelihood(model, data):
    return float(np.sum(logsumexp(_joint_terms(model, data), axis=1)))


def expected_joint_ll(model, resp, data):
    a = _joint_terms(model, data)
    g = resp.gamma
    return float(np.sum(np.where(g > 0.0, g * a, 0.0)))


def _run_em(data, config, model):
    n = len(data)
    history = list(model.history)
    for j in range(1, config.em_rounds + 1):
        resp = e_step(model, data)
        weights = m_step_weights(resp, config.pi_floor)
        staged = MixtureModel(weights, model.members, config.p_d)
        members, _ = m_step_members(staged, data, resp, config, round_index=j)
        model = MixtureModel(weights, members, config.p_d)
        history.append(
            {
                "round": j,
                "q": expected_joint_ll(model, resp, data),
                "joint_nll": -joint_log_likelihood(model, data) / n,
                "weights": weights.tolist(),
            }
        )
    model.history = history
    return model


def fit_em(data, config, model=None):
    """Run ``config.em_rounds`` rounds of E-step, weight update and member training.

    Per-round diagnostics are stored in ``model.history`` as dicts with
    keys ``round``, ``q``, ``joint_nll`` (mean per point) and ``weights``.

    With ``config.restarts > 1`` EM is repeated from independently seeded
    initializations and the run with the highest training joint
    log-likelihood is returned; restart 0 always uses ``config.seed`` so
    ``restarts=1`` is a single plain run.
    """
    config.validate()
    if model is not None:
        return _run_em(data, config, model)
    best, best_ll = None, -np.inf
    for r in range(config.restarts):
        cfg = config if r == 0 else replace(config, seed=derive_seed(config.seed, STREAM_RESTART, r), restarts=1)
        fitted = _run_em(data, cfg, init_mixture(data.n_features, cfg))
        ll = joint_log_likelihood(fitted, data)
        if ll > best_ll:
            best, best_ll = fitted, ll
            best.restart = r
    return best


def components_by_weight(model):
    """Member indices sorted by descending weight (reporting only)."""
    return [int(i) for i in np.argsort(-model.weights, kind="stable")]
