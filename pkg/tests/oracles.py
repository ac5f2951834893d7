"""Independent reference computations used as test oracles."""

import numpy as np


def random_dag(n_nodes, seed, edge_prob=0.5):
    """Strictly upper-triangular weight matrix W (W[i, j] != 0 means i -> j)."""
    rng = np.random.default_rng(seed)
    mask = np.triu(rng.random((n_nodes, n_nodes)) < edge_prob, k=1)
    weights = rng.uniform(0.5, 1.5, size=(n_nodes, n_nodes)) * rng.choice([-1.0, 1.0], size=(n_nodes, n_nodes))
    return np.where(mask, weights, 0.0)


def sample(W, n, seed):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, W.shape[0]))
    for j in range(W.shape[0]):
        X[:, j] = X @ W[:, j] + rng.standard_normal(n)
    return X


def true_blankets(W):
    """Parents, children and spouses of every node."""
    adj = W != 0
    out = {}
    for v in range(W.shape[0]):
        parents = set(np.flatnonzero(adj[:, v]))
        children = set(np.flatnonzero(adj[v, :]))
        spouses = {p for c in children for p in np.flatnonzero(adj[:, c])}
        out[v] = tuple(sorted((parents | children | spouses) - {v}))
    return out


def numeric_gradient(f, params, eps=1e-4):
    """Central differences of scalar f(params) for every entry of every array in params."""
    grads = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + eps
            up = f(params)
            v[idx] = old - eps
            down = f(params)
            v[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads[k] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for k in analytic:
        a, n = np.ravel(analytic[k]), np.ravel(numeric[k])
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst


def brute_force_deviations(bundle, X):
    """Recompute every deviation with scalar loops straight from the stored parameters."""
    col = {e: j for j, e in enumerate(X.event_ids)}
    D = np.zeros(X.counts.shape)
    for i, row in enumerate(X.counts.astype(float)):
        for e, model in bundle.models.items():
            if model.kind == "proximity":
                expected = model.mean
            else:
                reg = model.regressor
                z = [(row[col[s]] - mu) / sd for s, mu, sd in zip(reg.inputs, reg.x_mean, reg.x_std)]
                W1, b1, W2, b2 = (reg.params[k] for k in ("W1", "b1", "W2", "b2"))
                out = float(b2[0])
                for h in range(len(b1)):
                    a = b1[h] + sum(z[k] * W1[k, h] for k in range(len(z)))
                    out += W2[h] * np.tanh(a)
                expected = reg.y_mean + reg.y_scale * out
            D[i, col[e]] = abs(row[col[e]] - expected)
    return D
