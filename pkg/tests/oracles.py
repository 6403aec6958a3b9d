"""Independent reference computations used as test oracles."""

import math

import numpy as np

from hpcnn.cnn import CnnModel


def naive_conv(x, filters, biases, stride=1):
    """Quadruple loop valid cross-correlation: (H, W) -> (K, Ho, Wo)."""
    k_count, f, _ = filters.shape
    h, w = x.shape
    ho, wo = (h - f) // stride + 1, (w - f) // stride + 1
    out = np.zeros((k_count, ho, wo))
    for k in range(k_count):
        for i in range(ho):
            for j in range(wo):
                acc = biases[k]
                for u in range(f):
                    for v in range(f):
                        acc += x[i * stride + u, j * stride + v] * filters[k, u, v]
                out[k, i, j] = acc
    return out


def naive_pool(maps, size, stride):
    k_count, h, w = maps.shape
    ho, wo = (h - size) // stride + 1, (w - size) // stride + 1
    out = np.zeros((k_count, ho, wo))
    for k in range(k_count):
        for i in range(ho):
            for j in range(wo):
                out[k, i, j] = maps[k, i * stride : i * stride + size, j * stride : j * stride + size].max()
    return out


def naive_loss(params, x, target, model: CnnModel):
    """Cross-entropy of one sample, computed without the production code path."""
    filters, conv_b, dense_w, dense_b = params
    conv = naive_conv(x, filters, conv_b, model.conv.stride)
    act = np.where(conv > 0, conv, 0.0)
    pooled = naive_pool(act, model.pool_size, model.pool_stride).reshape(-1)
    logits = [sum(dense_w[j, i] * pooled[i] for i in range(len(pooled))) + dense_b[j] for j in range(len(dense_b))]
    top = max(logits)
    log_norm = top + math.log(sum(math.exp(z - top) for z in logits))
    return -sum(t * (z - log_norm) for t, z in zip(target, logits))


def finite_difference(params, x, target, model, eps=1e-3):
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = naive_loss(params, x, target, model)
            p[idx] = orig - eps
            down = naive_loss(params, x, target, model)
            p[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def kink_free_toy(rng, side=7, k=4, n_classes=3, f=3, margin=2e-3, pool=2, pool_stride=1):
    """
    Random model + input whose ReLU inputs and pooling winners all sit more
    than ``margin`` away from a non-differentiable point, so central
    differences with eps < margin/1 stay on one smooth piece.
    """
    while True:
        filters = rng.uniform(-1, 1, (k, f, f))
        conv_b = rng.uniform(-0.5, 0.5, k)
        x = rng.random((side, side))
        conv = naive_conv(x, filters, conv_b)
        if np.min(np.abs(conv)) <= margin:
            continue
        act = np.maximum(conv, 0)
        ok = True
        ho = (act.shape[1] - pool) // pool_stride + 1
        for kk in range(k):
            for i in range(ho):
                for j in range(ho):
                    win = np.sort(act[kk, i * pool_stride : i * pool_stride + pool, j * pool_stride : j * pool_stride + pool].ravel())
                    if win[-1] > 0 and win[-1] - win[-2] <= 2 * margin:
                        ok = False
        if not ok:
            continue
        p = (side - f + 1 - pool) // pool_stride + 1
        dense_w = rng.normal(0, 0.5, (n_classes, k * p * p))
        dense_b = rng.normal(0, 0.1, n_classes)
        model = CnnModel.create(filters, conv_b, dense_w, dense_b, side, [f"c{i}" for i in range(n_classes)], pool_size=pool, pool_stride=pool_stride)
        target = np.eye(n_classes)[rng.integers(n_classes)]
        return model, x, target
