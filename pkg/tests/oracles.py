"""Independent reference implementations used as test oracles.

Written for clarity, not speed: plain loops over the defining sums.
"""
import numpy as np

from nascty import engine
from nascty.engine import Network, cce_loss

from nascty.trace_model import SBOX

CLAMP = 1e-12


def conv1d_same(x, w, b):
    """Direct cross-correlation, stride 1, 'same' padding with the extra zero on the right.

    x: (L, C_in), w: (C_in, k, F), b: (F,)
    """
    length, c_in = x.shape
    _, k, f = w.shape
    left = (k - 1) // 2
    out = np.zeros((length, f))
    for t in range(length):
        for o in range(f):
            s = b[o]
            for j in range(k):
                src = t + j - left
                if 0 <= src < length:
                    for c in range(c_in):
                        s += x[src, c] * w[c, j, o]
            out[t, o] = s
    return out


def pool1d(x, size, stride, kind):
    length, c = x.shape
    n_out = (length - size) // stride + 1
    out = np.zeros((n_out, c))
    for i in range(n_out):
        win = x[i * stride:i * stride + size]
        out[i] = win.mean(axis=0) if kind == "avg" else win.max(axis=0)
    return out


def log_prob_vector(probs, plaintexts):
    """Double loop over candidates and traces."""
    out = np.zeros(256)
    for k in range(256):
        s = 0.0
        for i in range(len(plaintexts)):
            label = SBOX[int(plaintexts[i]) ^ k]
            s += np.log(max(float(probs[i][label]), CLAMP))
        out[k] = s
    return out


def key_rank(scores, true_key):
    """Position of the true key in a descending sort, counting only strictly larger scores."""
    order = sorted(range(256), key=lambda k: -scores[k])
    target = scores[true_key]
    rank = 0
    for k in order:
        if scores[k] > target:
            rank += 1
        else:
            break
    return rank


def numeric_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (modified in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| scaled by the larger gradient magnitude of the tensor.

    The floor only matters for tensors whose true gradient is identically
    zero (a conv bias feeding batch norm), where both sides are rounding noise.
    """
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    scale = max(np.abs(n).max(), np.abs(a).max(), floor)
    return float(np.abs(a - n).max() / scale)


def near_uniform_probs(n, rng, spread=1e-3):
    """Rows that are uniform up to tiny random perturbations (a network that learned nothing)."""
    p = 1.0 / 256 * (1 + spread * rng.standard_normal((n, 256)))
    return p / p.sum(axis=1, keepdims=True)


def uniform_attacker_mikr(rng, n_attack=10000, n_traces=200, folds=100):
    """MIKR of a near-uniform predictor, computed with the plain-loop oracles."""
    probs = near_uniform_probs(n_attack, rng)
    pts = rng.integers(0, 256, n_attack)
    key = int(rng.integers(256))
    logp = np.log(np.maximum(probs, CLAMP))
    total = 0.0
    for _ in range(folds):
        idx = rng.choice(n_attack, n_traces, replace=False)
        scores = np.zeros(256)
        for i in idx:
            scores += logp[i, SBOX[pts[i] ^ np.arange(256)]]
            total += np.count_nonzero(scores > scores[key])
    return total / (folds * n_traces)


def gradient_errors(specs, input_length, n=4, seed=0, n_classes=None):
    """Relative error of every parameter tensor and of the input, float64 net, batch of ``n``."""
    net = Network(specs, input_length, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(n, input_length))
    y = rng.integers(0, n_classes or specs[-1].n_classes, n)

    def loss():
        return cce_loss(net.forward(x, training=True), y)

    _, grads = engine.backward(net, x, y)
    errors = {name: relative_error(grads[name], numeric_gradient(loss, p))
              for name, p in net.parameters().items()}

    # input gradient: run backward once more to capture dx
    probs = net.forward(x, training=True)
    d = probs.copy()
    d[np.arange(n), y] -= 1
    d /= n
    for layer in reversed(net.layers):
        d = layer.backward(d)
    errors["input"] = relative_error(d[:, :, 0], numeric_gradient(loss, x))
    return errors
