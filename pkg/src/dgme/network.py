"""One-hidden-layer ReLU network with a mean head and a variance head.

Everything is float64 numpy with hand-written backpropagation.  Shapes:
``W1`` is ``(d_x, h)``, ``b1``/``w_mu``/``w_var`` are ``(h,)`` and the two
head biases are ``(1,)``.  The variance head is
``softplus(raw) + SIGMA2_MIN`` so the predicted variance never collapses.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

SIGMA2_MIN = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
# softplus(RAW_VAR_UNIT) == 1
RAW_VAR_UNIT = math.log(math.expm1(1.0))

INIT_SCHEMES = (
    "default_uniform",
    "uniform_small",
    "normal_tiny",
    "xavier_uniform",
    "xavier_normal",
    "zeros_fixed_bias",
)


class NumericFault(FloatingPointError):
    pass


class ParamSet:
    """Mixin for dataclasses whose fields are all float64 arrays."""

    def names(self):
        return tuple(f.name for f in fields(self))

    def arrays(self):
        return [getattr(self, n) for n in self.names()]

    def map(self, fn, *others):
        return type(self)(*[fn(a, *[getattr(o, n) for o in others]) for n, a in zip(self.names(), self.arrays())])

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec):
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i : i + a.size], dtype=np.float64).reshape(a.shape))
            i += a.size
        return type(self)(*out)

    def norms(self):
        return {n: float(np.linalg.norm(a)) for n, a in zip(self.names(), self.arrays())}

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other):
        return type(self) is type(other) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    def to_dict(self):
        """Layer name -> ``{"shape", "data"}`` with data flattened row-major."""
        return {n: {"shape": list(a.shape), "data": a.ravel().tolist()} for n, a in zip(self.names(), self.arrays())}

    @classmethod
    def from_dict(cls, d):
        vals = []
        for f in fields(cls):
            entry = d[f.name]
            vals.append(np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        return cls(*vals)


@dataclass
class MlpParams(ParamSet):
    W1: np.ndarray
    b1: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_var: np.ndarray
    b_var: np.ndarray

    @property
    def d_x(self):
        return self.W1.shape[0]

    @property
    def hidden(self):
        return self.W1.shape[1]


@dataclass
class DropoutMask:
    values: np.ndarray
    keep_prob: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        if not np.all((self.values == 0.0) | (self.values == 1.0)):
            raise ValueError("dropout mask entries must be 0 or 1")

    def scaled(self):
        return self.values / self.keep_prob


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _layer_uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_mlp(d_x, h, scheme="default_uniform", seed=0):
    """Fresh parameters for a ``d_x -> h -> (mu, raw_var)`` network.

    ``zeros_fixed_bias`` ignores the seed: all weights are zero, the head
    biases give ``(mu, sigma2) = (0, 1 + SIGMA2_MIN)`` everywhere, and the
    hidden biases are a fixed positive ramp so every unit starts alive
    and the units are not interchangeable.
    """
    if d_x < 1 or h < 1:
        raise ValueError(f"need d_x >= 1 and h >= 1, got d_x={d_x}, h={h}")
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    shapes = {"W1": (d_x, h), "b1": (h,), "w_mu": (h,), "b_mu": (1,), "w_var": (h,), "b_var": (1,)}
    fan = {"W1": (d_x, h), "b1": (d_x, h), "w_mu": (h, 1), "b_mu": (h, 1), "w_var": (h, 1), "b_var": (h, 1)}
    out = {}
    if scheme == "zeros_fixed_bias":
        out = {k: np.zeros(s) for k, s in shapes.items()}
        out["b1"] = np.linspace(0.1, 1.0, h) if h > 1 else np.full(1, 0.5)
        out["b_var"] = np.full(1, RAW_VAR_UNIT)
        return MlpParams(**out)
    for name, shape in shapes.items():
        fan_in, fan_out = fan[name]
        is_bias = name.startswith("b")
        if scheme == "default_uniform":
            out[name] = _layer_uniform(rng, shape, 1.0 / math.sqrt(fan_in))
        elif scheme == "uniform_small":
            out[name] = _layer_uniform(rng, shape, 0.01)
        elif scheme == "normal_tiny":
            out[name] = rng.normal(0.0, 1e-6, size=shape)
        elif scheme == "xavier_uniform":
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            out[name] = np.zeros(shape) if is_bias else _layer_uniform(rng, shape, bound)
        elif scheme == "xavier_normal":
            std = math.sqrt(2.0 / (fan_in + fan_out))
            out[name] = np.zeros(shape) if is_bias else rng.normal(0.0, std, size=shape)
    return MlpParams(**out)


def _mask_scale(mask, n_rows, h):
    if mask is None:
        return None
    scale = mask.scaled() if isinstance(mask, DropoutMask) else np.asarray(mask, dtype=np.float64)
    if scale.shape not in ((h,), (n_rows, h)):
        raise ValueError(f"mask shape {scale.shape} incompatible with {n_rows} rows and {h} hidden units")
    return scale


def _as_rows(x, d_x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, d_x)
    if x.shape[1] != d_x:
        raise ValueError(f"input has {x.shape[1]} features, network expects {d_x}")
    return x


def _check_finite(params, *outputs):
    if not all(np.all(np.isfinite(o)) for o in outputs):
        norms = ", ".join(f"{k}={v:.3g}" for k, v in params.norms().items())
        raise NumericFault(f"non-finite network output (parameter norms: {norms})")


def forward_cache(params, x, mask=None):
    """Forward pass returning ``(mu, sigma2, cache)`` for use by ``backward``.

    ``mask`` may be a ``DropoutMask`` or a pre-scaled array of shape
    ``(h,)`` or ``(N, h)``; masked units are zeroed and survivors are
    rescaled by ``1 / keep_prob``.
    """
    x = _as_rows(x, params.d_x)
    z = x @ params.W1 + params.b1
    a = np.maximum(z, 0.0)
    scale = _mask_scale(mask, x.shape[0], params.hidden)
    if scale is not None:
        a = a * scale
    mu = a @ params.w_mu + params.b_mu[0]
    raw = a @ params.w_var + params.b_var[0]
    sigma2 = softplus(raw) + SIGMA2_MIN
    _check_finite(params, mu, sigma2)
    return mu, sigma2, (x, z, a, raw, scale)


def forward(params, x, mask=None):
    mu, sigma2, _ = forward_cache(params, x, mask)
    return mu, sigma2


def backward(params, cache, d_mu, d_sigma2):
    """Gradient of a loss given its derivatives w.r.t. ``mu`` and ``sigma2``."""
    x, z, a, raw, scale = cache
    d_raw = d_sigma2 * sigmoid(raw)
    g_w_mu = a.T @ d_mu
    g_w_var = a.T @ d_raw
    d_a = np.outer(d_mu, params.w_mu) + np.outer(d_raw, params.w_var)
    if scale is not None:
        d_a = d_a * scale
    d_z = d_a * (z > 0.0)
    return MlpParams(
        W1=x.T @ d_z,
        b1=d_z.sum(axis=0),
        w_mu=g_w_mu,
        b_mu=np.array([d_mu.sum()]),
        w_var=g_w_var,
        b_var=np.array([d_raw.sum()]),
    )


def gaussian_nll(y, mu, sigma2):
    """Per-sample negative Gaussian log-density."""
    return HALF_LOG_2PI + 0.5 * np.log(sigma2) + (y - mu) ** 2 / (2.0 * sigma2)


def member_nll(params, x, y, mask=None):
    mu, sigma2 = forward(params, x, mask)
    return gaussian_nll(np.asarray(y, dtype=np.float64).reshape(-1), mu, sigma2)


def _check_weights(weights, n):
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ValueError(f"{w.shape[0]} weights for {n} rows")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weight vector sums to zero")
    return w, total


def grad_weighted_nll(params, x, y, weights, mask=None):
    """Loss and gradient of ``sum(w * nll) / sum(w)`` over the batch."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w, total = _check_weights(weights, y.shape[0])
    mu, sigma2, cache = forward_cache(params, x, mask)
    c = w / total
    r = y - mu
    loss = float(c @ gaussian_nll(y, mu, sigma2))
    d_mu = -c * r / sigma2
    d_sigma2 = c * (0.5 / sigma2 - 0.5 * r * r / (sigma2 * sigma2))
    return loss, backward(params, cache, d_mu, d_sigma2)


def grad_weighted_mse(params, x, y, weights, mask=None):
    """Loss and gradient of the weighted mean squared error of the mean head."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w, total = _check_weights(weights, y.shape[0])
    mu, _, cache = forward_cache(params, x, mask)
    c = w / total
    r = y - mu
    loss = float(c @ (r * r))
    return loss, backward(params, cache, -2.0 * c * r, np.zeros_like(r))


@dataclass
class AdamState:
    m: ParamSet
    v: ParamSet
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params, **kw):
        return cls(params.zeros_like(), params.zeros_like(), **kw)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    b1, b2, eps = state.beta1, state.beta2, state.eps
    t = state.step + 1
    m = state.m.map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, grads)
    v = state.v.map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, grads)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new = params.map(lambda p, m_, v_: p - lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps), m, v)
    return new, AdamState(m, v, t, b1, b2, eps)


def draw_mask(rng, shape, p_d):
    """Inverted-dropout scale array: 0 for dropped units, ``1/(1-p_d)`` otherwise."""
    if not 0.0 <= p_d < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p_d}")
    if p_d == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p_d
    return keep / (1.0 - p_d)


def sample_dropout_mask(h, p_d, seed):
    """Per-unit mask where each unit is dropped with probability ``p_d``."""
    if not 0.0 <= p_d < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p_d}")
    rng = np.random.default_rng(seed)
    keep = (rng.random(h) >= p_d).astype(np.float64)
    return DropoutMask(keep, 1.0 - p_d)


def run_adam(params, grad_fn, n_rows, epochs, lr, batch_size, shuffle_rng, **adam_kw):
    """Mini-batch Adam over ``epochs`` shuffled passes of ``n_rows`` rows.

    ``grad_fn(params, idx)`` returns ``(loss, grads)`` for the row indices
    ``idx`` or ``None`` to skip the batch.  Returns the final parameters
    and a list of per-epoch mean batch losses.
    """
    state = AdamState.zeros(params, **adam_kw)
    history = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n_rows)
        losses = []
        for start in range(0, n_rows, batch_size):
            out = grad_fn(params, order[start : start + batch_size])
            if out is None:
                continue
            loss, grads = out
            params, state = adam_step(params, grads, state, lr)
            losses.append(loss)
        if not params.is_finite():
            raise NumericFault(f"non-finite parameters after epoch {epoch}")
        history.append(float(np.mean(losses)) if losses else float("nan"))
    return params, history
