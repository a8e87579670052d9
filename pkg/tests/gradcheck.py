"""Finite-difference oracle for the Siamese contrastive loss.

Independent of opensiam.siamese: the embedding and loss are re-derived here
with explicit loops over layers and plain numpy.
"""

import numpy as np


def embed_reference(weights, biases, activations, x):
    a = [float(v) for v in x]
    for W, b, tag in zip(weights, biases, activations):
        z = [sum(W[i][j] * a[j] for j in range(len(a))) + b[i] for i in range(len(b))]
        a = [max(v, 0.0) for v in z] if tag == "relu" else z
    return np.array(a)


def pair_loss_reference(weights, biases, activations, x1, x2, y, m):
    e1 = embed_reference(weights, biases, activations, x1)
    e2 = embed_reference(weights, biases, activations, x2)
    d = float(np.sqrt(np.sum((e1 - e2) ** 2)))
    return 0.5 * ((1 - y) * d**2 + y * max(0.0, m - d) ** 2)


def preactivations(weights, biases, x):
    a, out = np.asarray(x, float), []
    for W, b in zip(weights, biases):
        z = W @ a + b
        out.append(z)
        a = np.maximum(z, 0.0)
    return out


def numeric_grads(net, x1, x2, y, m, h=1e-5):
    """Central differences over every weight and bias entry."""
    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]

    def f():
        return pair_loss_reference(weights, biases, net.activations, x1, x2, y, m)

    out = []
    for arr in [p for pair in zip(weights, biases) for p in pair]:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = f()
            arr[idx] = old - h
            fm = f()
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
