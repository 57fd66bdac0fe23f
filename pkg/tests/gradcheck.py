"""Central finite-difference gradient checks shared by the nn and acceptance tests."""
import numpy as np

from naswd import nn

H = 1e-5


def rel_error(a, n):
    """Norm-wise relative error of one gradient array.

    Element-wise ratios blow up on entries that are zero up to round-off, so
    the array norm is used as the scale.
    """
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def numeric_grads(params, loss_fn):
    """Finite-difference gradient of ``loss_fn()`` for every entry of every array."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + H
            up = loss_fn()
            p[i] = old - H
            down = loss_fn()
            p[i] = old
            g[i] = (up - down) / (2 * H)
        out.append(g)
    return out


def random_stack(rng, n_in=None, n_out=None, max_layers=3, max_units=16):
    """Random dense stack (<= 3 layers, <= 16 units) with smooth hidden activations."""
    n_layers = int(rng.integers(1, max_layers + 1))
    dims = [n_in or int(rng.integers(2, max_units + 1))]
    dims += [int(rng.integers(2, max_units + 1)) for _ in range(n_layers - 1)]
    dims.append(n_out or int(rng.integers(1, 5)))
    stack = []
    for i in range(n_layers):
        act = "identity" if i == n_layers - 1 else str(rng.choice(["sigmoid", "relu"]))
        stack.append(nn.DenseLayer(rng.normal(0, 0.7, (dims[i + 1], dims[i])),
                                   rng.normal(0, 0.3, dims[i + 1]), act))
    return stack


def stack_params(stack):
    return [a for layer in stack for a in (layer.W, layer.b)]


def stack_check(stack, X, y, kind, rng=None, dropout=0.0):
    """Worst relative error between backprop and finite differences for one stack.

    With dropout, the same masks are replayed for every loss evaluation.
    """
    seed = None if rng is None else int(rng.integers(2**31))

    def loss():
        r = None if seed is None else np.random.default_rng(seed)
        out, _ = nn.forward(stack, X, "train", dropout, r)
        return nn.loss_and_grad(out, y, kind)[0]

    r = None if seed is None else np.random.default_rng(seed)
    out, cache = nn.forward(stack, X, "train", dropout, r)
    _, g = nn.loss_and_grad(out, y, kind)
    grads, _ = nn.backward(stack, cache, g)
    analytic = [a for pair in grads for a in pair]
    numeric = numeric_grads(stack_params(stack), loss)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))
