"""Scalar-loop reference implementations, deliberately independent of the package code."""
import math

import numpy as np


def conv2d_loop(x, w, b, stride=1, padding=0):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for r in range(ho):
                for s in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                y = r * stride + u - padding
                                z = s * stride + v - padding
                                if 0 <= y < h and 0 <= z < wd:
                                    acc += x[i, ch, y, z] * w[o, ch, u, v]
                    out[i, o, r, s] = acc
    return out


def max_pool_loop(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for i in range(n):
        for ch in range(c):
            for r in range(h // 2):
                for s in range(w // 2):
                    out[i, ch, r, s] = max(x[i, ch, 2 * r + u, 2 * s + v] for u in range(2) for v in range(2))
    return out


def upsample_loop(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w))
    for i in range(n):
        for ch in range(c):
            for r in range(2 * h):
                for s in range(2 * w):
                    out[i, ch, r, s] = x[i, ch, r // 2, s // 2]
    return out


def bce_loop(pred, target, eps=1e-7):
    p = np.asarray(pred).ravel()
    y = np.asarray(target).ravel()
    total = 0.0
    for pi, yi in zip(p, y):
        pi = min(max(pi, eps), 1 - eps)
        total += -(yi * math.log(pi) + (1 - yi) * math.log(1 - pi))
    return total / len(p)


def euclid_loop(q, m):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(q, m)))


def cosine_loop(q, m):
    dot = sum(a * b for a, b in zip(q, m))
    nq = math.sqrt(sum(a * a for a in q))
    nm = math.sqrt(sum(b * b for b in m))
    return 1.0 - dot / (nq * nm)


def prototypes_loop(emb, labels, k):
    out = []
    for c in range(k):
        rows = [emb[i] for i in range(len(labels)) if labels[i] == c]
        out.append([sum(r[d] for r in rows) / len(rows) for d in range(len(emb[0]))])
    return np.array(out)


def probabilities_loop(queries, protos, dist):
    out = []
    for q in queries:
        weights = [math.exp(-dist(q, p)) for p in protos]
        z = sum(weights)
        out.append([w / z for w in weights])
    return np.array(out)


def nll_loop(probs, labels):
    return sum(-math.log(probs[j][labels[j]]) for j in range(len(labels))) / len(labels)


def accuracy_loop(probs, labels):
    hits = 0
    for row, y in zip(probs, labels):
        best = 0
        for c in range(1, len(row)):
            if row[c] > row[best]:
                best = c
        hits += best == y
    return hits / len(labels)


def apply_mask_loop(images, masks):
    b, c, h, w = images.shape
    out = np.zeros_like(images)
    for i in range(b):
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    out[i, ch, y, x] = images[i, ch, y, x] * masks[i, 0, y, x]
    return out


def adam_scalar(grad_fn, x, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        x = x - lr * mh / (math.sqrt(vh) + eps)
    return x


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy().ravel()
        dn = x.copy().ravel()
        up[i] += h
        dn[i] -= h
        g.ravel()[i] = (f(up.reshape(x.shape)) - f(dn.reshape(x.shape))) / (2 * h)
    return g
