"""Brute-force partition metrics written straight from their definitions."""

import math

import numpy as np

from episeg.core_model import Segmentation


def brute_pairs(z, zh):
    a = b = c = d = 0
    T = len(z)
    for i in range(T):
        for j in range(i + 1, T):
            same_t = z[i] == z[j]
            same_e = zh[i] == zh[j]
            if same_t and same_e:
                a += 1
            elif same_t:
                b += 1
            elif same_e:
                c += 1
            else:
                d += 1
    return a, b, c, d


def brute_ari(z, zh):
    a, b, c, d = brute_pairs(z, zh)
    n = math.comb(len(z), 2)
    e = (a + b) * (a + c) + (c + d) * (b + d)
    if n * n == e:
        return 1.0
    return (n * (a + d) - e) / (n * n - e)


def _counts(z, zh):
    T = len(z)
    n = {}
    nh = {}
    nj = {}
    for i in range(T):
        n[z[i]] = n.get(z[i], 0) + 1
        nh[zh[i]] = nh.get(zh[i], 0) + 1
        nj[(z[i], zh[i])] = nj.get((z[i], zh[i]), 0) + 1
    return T, n, nh, nj


def brute_mi(z, zh):
    T, n, nh, nj = _counts(z, zh)
    return sum(v * math.log(v * T / (n[k] * nh[kh])) for (k, kh), v in nj.items()) / T


def brute_nvi(z, zh):
    T, n, nh, nj = _counts(z, zh)
    if T == 1:
        return 0.0
    s = sum(v * math.log(v / T) for v in n.values())
    s += sum(v * math.log(v / T) for v in nh.values())
    s += 2 * sum(v * math.log(v * T / (n[k] * nh[kh])) for (k, kh), v in nj.items())
    return -s / (T * math.log(T))


def brute_f(z, zh):
    T, n, nh, nj = _counts(z, zh)
    total = 0.0
    for k, nk in n.items():
        total += nk * max(nj.get((k, kh), 0) / (nk + nhk) for kh, nhk in nh.items())
    return 2.0 * total / T


def random_segmentation_labels(rng, T):
    m = int(rng.integers(1, min(T, 8) + 1))
    cps = np.sort(rng.choice(np.arange(1, T), size=m - 1, replace=False)) if T > 1 else []
    return Segmentation.from_changepoints(T, cps).labels
