"""Independent reference implementations used as test oracles.

Everything here is written against the math directly (loops, math.erf,
exp/sum) and never calls into the package's op layer, so gradient and
forward checks compare two genuinely separate paths.
"""

import math

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def softmax_direct(v):
    e = np.exp(np.asarray(v, dtype=np.float64))
    return e / e.sum()


def layernorm_rows(x, gamma, beta, eps):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        mu = float(x[i].mean())
        var = float(((x[i] - mu) ** 2).mean())
        out[i] = gamma * (x[i] - mu) / math.sqrt(var + eps) + beta
    return out


def gelu_erf(x):
    flat = np.asarray(x, dtype=np.float64).ravel()
    out = np.array([0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in flat])
    return out.reshape(np.shape(x))


def cross_entropy_rows(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for i in range(logits.shape[0]):
        e = np.exp(logits[i])
        total += -math.log(e[labels[i]] / e.sum())
    return total / logits.shape[0]


def adamw_scalar_steps(p0, grads, lr, b1, b2, eps, wd):
    """Reference AdamW recursion on a single scalar parameter."""
    p, m, v = float(p0), 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        p *= 1.0 - lr * wd
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= lr * mhat / (math.sqrt(vhat) + eps)
    return p


def central_diff(f, arrays, h=1e-5):
    """Central finite-difference gradients of scalar f() w.r.t. each array,
    perturbing entries in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f1 = f()
            flat[i] = orig - h
            f0 = f()
            flat[i] = orig
            gflat[i] = (f1 - f0) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(got, want, floor=1e-6):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return float((np.abs(got - want) / denom).max())


# ---------------------------------------------------------------------------
# straight-line scalar reimplementation of the masked ViT forward
# ---------------------------------------------------------------------------

def _ln_token(vec, gamma, beta, eps):
    mu = float(np.mean(vec))
    var = float(np.mean((vec - mu) ** 2))
    return gamma * (vec - mu) / math.sqrt(var + eps) + beta


def vit_forward_scalar(params, masks, images, cfg, eps=1e-6):
    """params: name -> float64 array. masks: dict with attn [L,H,d],
    mlp [L,M], patch_raw [L,N] float64 arrays, or None."""
    B = images.shape[0]
    g, p = cfg.grid, cfg.patch_size
    N, D, H, d, M = (cfg.num_patches, cfg.embed_dim, cfg.heads, cfg.head_dim,
                     cfg.mlp_dim)
    cls = 1 if cfg.use_class_token else 0
    T = N + cls

    patches = np.zeros((B, N, cfg.patch_dim))
    for b in range(B):
        for gy in range(g):
            for gx in range(g):
                vec = []
                for c in range(cfg.channels):
                    for yy in range(p):
                        for xx in range(p):
                            vec.append(float(images[b, c, gy * p + yy, gx * p + xx]))
                patches[b, gy * g + gx] = vec

    x = np.zeros((B, T, D))
    for b in range(B):
        for t in range(N):
            for dd in range(D):
                s = 0.0
                for k in range(cfg.patch_dim):
                    s += patches[b, t, k] * params["embed.weight"][k, dd]
                x[b, t + cls, dd] = s + params["embed.bias"][dd]
        if cls:
            x[b, 0] = params["cls_token"]
        x[b] += params["pos_embed"]

    for l in range(cfg.layers):
        pre = f"blocks.{l}."
        if masks is not None:
            for b in range(B):
                for i in range(N):
                    x[b, i + cls] = x[b, i + cls] * math.tanh(masks["patch_raw"][l, i])
        h1 = np.zeros_like(x)
        for b in range(B):
            for t in range(T):
                h1[b, t] = _ln_token(x[b, t], params[pre + "ln1.gamma"],
                                     params[pre + "ln1.beta"], eps)
        att_out = np.zeros_like(x)
        for b in range(B):
            cat = np.zeros((T, H * d))
            for head in range(H):
                q = np.zeros((T, d))
                kk = np.zeros((T, d))
                vv = np.zeros((T, d))
                for t in range(T):
                    for j in range(d):
                        col = head * d + j
                        sq = sk = sv = 0.0
                        for u in range(D):
                            sq += h1[b, t, u] * params[pre + "q.weight"][u, col]
                            sk += h1[b, t, u] * params[pre + "k.weight"][u, col]
                            sv += h1[b, t, u] * params[pre + "v.weight"][u, col]
                        q[t, j] = sq + params[pre + "q.bias"][col]
                        kk[t, j] = sk + params[pre + "k.bias"][col]
                        vv[t, j] = sv + params[pre + "v.bias"][col]
                if masks is not None:
                    for j in range(d):
                        z = masks["attn"][l, head, j]
                        q[:, j] *= z
                        kk[:, j] *= z
                        vv[:, j] *= z
                scale = 1.0 / math.sqrt(d)
                for t in range(T):
                    logits = np.array([float(np.dot(q[t], kk[u])) * scale
                                       for u in range(T)])
                    e = np.exp(logits - logits.max())
                    a = e / e.sum()
                    for j in range(d):
                        cat[t, head * d + j] = float(np.dot(a, vv[:, j]))
            for t in range(T):
                for dd in range(D):
                    s = 0.0
                    for j in range(H * d):
                        s += cat[t, j] * params[pre + "proj.weight"][j, dd]
                    att_out[b, t, dd] = s + params[pre + "proj.bias"][dd]
        x = x + att_out

        h2 = np.zeros_like(x)
        for b in range(B):
            for t in range(T):
                h2[b, t] = _ln_token(x[b, t], params[pre + "ln2.gamma"],
                                     params[pre + "ln2.beta"], eps)
        mlp_out = np.zeros_like(x)
        for b in range(B):
            for t in range(T):
                hid = np.zeros(M)
                for j in range(M):
                    s = 0.0
                    for u in range(D):
                        s += h2[b, t, u] * params[pre + "fc1.weight"][u, j]
                    s += params[pre + "fc1.bias"][j]
                    s = 0.5 * s * (1.0 + math.erf(s / math.sqrt(2.0)))
                    if masks is not None:
                        s *= masks["mlp"][l, j]
                    hid[j] = s
                for dd in range(D):
                    s = 0.0
                    for j in range(M):
                        s += hid[j] * params[pre + "fc2.weight"][j, dd]
                    mlp_out[b, t, dd] = s + params[pre + "fc2.bias"][dd]
        x = x + mlp_out

    logits = np.zeros((B, cfg.num_classes))
    for b in range(B):
        pooled = x[b, 0] if cls else x[b].mean(axis=0)
        for c in range(cfg.num_classes):
            logits[b, c] = (float(np.dot(pooled, params["head.weight"][:, c]))
                            + params["head.bias"][c])
    return logits


def linear_probe_accuracy(train_ds, test_ds):
    """Least-squares one-hot probe on flattened pixels."""
    xtr = train_ds.images.reshape(train_ds.n, -1).astype(np.float64)
    xte = test_ds.images.reshape(test_ds.n, -1).astype(np.float64)
    xtr = np.hstack([xtr, np.ones((xtr.shape[0], 1))])
    xte = np.hstack([xte, np.ones((xte.shape[0], 1))])
    k = int(train_ds.labels.max()) + 1
    onehot = np.eye(k)[train_ds.labels]
    w, *_ = np.linalg.lstsq(xtr, onehot, rcond=None)
    pred = np.argmax(xte @ w, axis=1)
    return float((pred == test_ds.labels).mean())
