"""Independent brute-force oracles used by the tests."""

import itertools

import numpy as np


def isotonic_by_enumeration(y):
    """L2 non-increasing fit by trying every contiguous block partition."""
    y = np.asarray(y, dtype=float)
    n = y.size
    best, best_cost = None, np.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        edges = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = [y[a:b].mean() for a, b in zip(edges[:-1], edges[1:])]
        if any(m2 > m1 for m1, m2 in zip(means, means[1:])):
            continue
        fit = np.concatenate([np.full(b - a, m) for a, b, m in zip(edges[:-1], edges[1:], means)])
        cost = float(((fit - y) ** 2).sum())
        if cost < best_cost:
            best, best_cost = fit, cost
    return best


def _ordered_partitions(items):
    if not items:
        yield []
        return
    for size in range(1, len(items) + 1):
        for first in itertools.combinations(items, size):
            rest = [i for i in items if i not in first]
            for tail in _ordered_partitions(rest):
                yield [list(first)] + tail


def in_permutohedron(mu, w, tol=1e-9):
    """Majorization test: sorted partial sums of mu never exceed those of w."""
    a = np.cumsum(np.sort(mu)[::-1])
    b = np.cumsum(np.sort(w)[::-1])
    return abs(a[-1] - b[-1]) <= tol and np.all(a <= b + tol)


def permutohedron_projection(z, w=None):
    """Exact Euclidean projection of z onto the permutohedron of w.

    Every face of the permutohedron belongs to an ordered set partition; on
    that face each block must receive the next |block| largest entries of w
    in total. Projecting z onto each face's affine hull and keeping the
    closest feasible candidate gives the projection.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    w = np.arange(n, 0, -1, dtype=float) if w is None else np.sort(np.asarray(w, float))[::-1]
    best, best_dist = None, np.inf
    for blocks in _ordered_partitions(list(range(n))):
        mu = np.empty(n)
        pos = 0
        for block in blocks:
            target = w[pos:pos + len(block)].sum()
            pos += len(block)
            mu[block] = z[block] + (target - z[block].sum()) / len(block)
        if not in_permutohedron(mu, w, tol=1e-9 * max(1.0, np.abs(z).max())):
            continue
        dist = float(((mu - z) ** 2).sum())
        if dist < best_dist:
            best, best_dist = mu, dist
    return best


def ranks_by_counting(values):
    """Average ranks (1 = smallest) by counting, no sorting."""
    v = np.asarray(values, dtype=float)
    less = (v[None, :] < v[:, None]).sum(axis=1)
    equal = (v[None, :] == v[:, None]).sum(axis=1)
    return less + (equal + 1) / 2.0


def pearson_by_hand(x, y):
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / (sxx * syy) ** 0.5


def sh_ranking_by_sort_key(curves, eta):
    """Successive-halving ranking rebuilt from a per-algorithm sort key.

    Simulates the rounds to find the last level each algorithm was observed
    at, then ranks by (later level first, higher performance there, lower
    index).
    """
    curves = np.asarray(curves, dtype=float)
    n_alg, n_fid = curves.shape
    seen = {}
    alive = list(range(n_alg))
    for level in range(n_fid):
        for a in alive:
            seen[a] = level
        if level == n_fid - 1 or len(alive) == 1:
            break
        keep = -(-len(alive) // eta)
        alive = sorted(alive, key=lambda a: (-curves[a, level], a))[:keep]
        if len(alive) == 1:
            seen[alive[0]] = level
            break
    order = sorted(range(n_alg), key=lambda a: (-seen[a], -curves[a, seen[a]], a))
    ranking = np.empty(n_alg)
    for pos, a in enumerate(order):
        ranking[a] = pos + 1
    return ranking
