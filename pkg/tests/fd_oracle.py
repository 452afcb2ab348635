"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

FD_STEP = 1e-5
# relative error |a - n| / max(|a|, |n|, FD_FLOOR).  Central differences
# of an O(1) loss carry roundoff of about eps * |loss| / FD_STEP ~ 1e-10
# absolute, so entries below FD_FLOOR are effectively checked to ~1e-9
# absolute instead of being judged relative to a near-zero value.
FD_FLOOR = 1e-5
# instances with a hidden pre-activation this close to the ReLU kink are
# redrawn, since a +-FD_STEP probe could cross it
KINK_MARGIN = 1e-3


def fd_gradient(loss_fn, params):
    flat = params.flatten()
    g = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += FD_STEP
        down[i] -= FD_STEP
        g[i] = (loss_fn(params.unflatten(up)) - loss_fn(params.unflatten(down))) / (2 * FD_STEP)
    return g


def rel_err(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FD_FLOOR)
