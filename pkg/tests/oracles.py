"""Independent reference implementations used as test oracles.

Nothing here imports the tape or the trainer: the plain trainer below is a
hand-derived numpy forward/backward pass of the deterministic two-branch
network with cross-entropy and its own Adam.
"""

import numpy as np


def plain_forward(p, xc, xq):
    cache = {}
    for br, x in (("context", xc), ("query", xq)):
        pre = x @ p[f"{br}.0.weight"].T + p[f"{br}.0.bias"]
        h = np.maximum(pre, 0.0)
        cache[br] = (x, pre, h, h @ p[f"{br}.1.weight"].T + p[f"{br}.1.bias"])
    z = np.concatenate([cache["context"][3], cache["query"][3]], axis=1)
    pre = z @ p["decoder.0.weight"].T + p["decoder.0.bias"]
    h = np.maximum(pre, 0.0)
    logits = h @ p["decoder.1.weight"].T + p["decoder.1.bias"]
    cache["decoder"] = (z, pre, h, logits)
    return logits, cache


def plain_loss_and_grads(p, xc, xq, y):
    logits, cache = plain_forward(p, xc, xq)
    B = len(y)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(B), y].mean()
    d_logits = np.exp(logp)
    d_logits[np.arange(B), y] -= 1.0
    d_logits /= B
    g = {}

    def back_two_layer(name, cache_entry, d_out):
        x, pre, h, _ = cache_entry
        g[f"{name}.1.weight"] = d_out.T @ h
        g[f"{name}.1.bias"] = d_out.sum(axis=0)
        d_pre = (d_out @ p[f"{name}.1.weight"]) * (pre > 0)
        g[f"{name}.0.weight"] = d_pre.T @ x
        g[f"{name}.0.bias"] = d_pre.sum(axis=0)
        return d_pre @ p[f"{name}.0.weight"]

    dz = back_two_layer("decoder", cache["decoder"], d_logits)
    d = p["context.1.weight"].shape[0]
    back_two_layer("context", cache["context"], dz[:, :d])
    back_two_layer("query", cache["query"], dz[:, d:])
    return loss, g


class PlainAdam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def update(self, p, g):
        self.t += 1
        for k in p:
            self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g[k]
            self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g[k] ** 2
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            p[k] = p[k] - self.lr * mh / (np.sqrt(vh) + self.eps)


def plain_train(params, xc, xq, y, lr, batch, seed, n_steps):
    """Per-step losses of the plain loop: reshuffle each epoch from
    ``default_rng([seed, 0, epoch])``, drop a trailing batch smaller than 2."""
    p = {k: v.copy() for k, v in params.items()}
    opt = PlainAdam(lr)
    losses = []
    epoch = 0
    while len(losses) < n_steps:
        order = np.random.default_rng([seed, 0, epoch]).permutation(len(y))
        for start in range(0, len(y), batch):
            idx = order[start : start + batch]
            if len(idx) < 2:
                continue
            loss, g = plain_loss_and_grads(p, xc[idx], xq[idx], y[idx])
            opt.update(p, g)
            losses.append(loss)
            if len(losses) == n_steps:
                break
        epoch += 1
    return np.array(losses), p


def brute_spearman(a, b):
    """Pearson correlation of average ranks, ranks computed by counting."""
    a, b = np.asarray(a, float), np.asarray(b, float)

    def ranks(x):
        less = (x[None, :] < x[:, None]).sum(axis=1)
        equal = (x[None, :] == x[:, None]).sum(axis=1)
        return less + (equal + 1) / 2.0

    ra, rb = ranks(a), ranks(b)
    ra, rb = ra - ra.mean(), rb - rb.mean()
    den = np.sqrt((ra**2).sum() * (rb**2).sum())
    return 0.0 if den == 0 else float((ra * rb).sum() / den)
