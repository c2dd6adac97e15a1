"""Brute-force reference implementations used by several test modules."""

import math

import numpy as np


def cosine(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def nt_xent_loop(z, zp, t):
    n = len(z)

    def direction(anchor, partner):
        total = 0.0
        for i in range(n):
            pos = math.exp(cosine(anchor[i], partner[i]) / t)
            neg = sum(math.exp(cosine(anchor[i], partner[m]) / t) for m in range(n) if m != i)
            total += -math.log(pos / neg)
        return total / n

    return 0.5 * (direction(z, zp) + direction(zp, z))


GROUPS = {
    "dual": [(0, 1), (2, 3), (0, 2), (1, 3)],
    "data-only": [(0, 2)],
    "model-only": [(0, 1)],
    "pairwise-all": [(i, j) for i in range(4) for j in range(i + 1, 4)],
}


def multi_view_loop(views, t, mode):
    return sum(nt_xent_loop(views[i], views[j], t) for i, j in GROUPS[mode])


def alignment_loop(a, b, alpha):
    total = 0.0
    for x, y in zip(a, b):
        x = x / np.linalg.norm(x)
        y = y / np.linalg.norm(y)
        total += math.sqrt(sum((p - q) ** 2 for p, q in zip(x, y))) ** alpha
    return total / len(a)


def uniformity_loop(v, beta):
    v = [row / np.linalg.norm(row) for row in v]
    total, count = 0.0, 0
    for i in range(len(v)):
        for j in range(len(v)):
            if i != j:
                d = math.sqrt(sum((p - q) ** 2 for p, q in zip(v[i], v[j])))
                total += math.exp(-beta * d ** beta)
                count += 1
    return math.log(total / count)
