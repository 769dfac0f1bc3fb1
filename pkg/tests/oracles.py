"""Brute-force reference implementations used as test oracles.

Everything here is written with plain Python loops (or mpmath) and shares no
code with the package under test.
"""
import itertools
import math

import mpmath


def cosine_matrix(q, it):
    out = []
    for a in q:
        na = math.sqrt(sum(x * x for x in a))
        row = []
        for b in it:
            nb = math.sqrt(sum(x * x for x in b))
            row.append(sum(x * y for x, y in zip(a, b)) / (na * nb))
        out.append(row)
    return out


def top_k_indices(values, k, exclude=()):
    cand = [j for j in range(len(values)) if j not in exclude]
    return sorted(cand, key=lambda j: (-values[j], j))[:k]


def hinge_terms(s, alpha, kind, k=None):
    """Per-anchor hinge terms of the diagonal-paired batch losses.

    Returns (row_terms, col_terms): row_terms[a] lists the selected hinge
    values [alpha - s[a][a] + s[a][j]]_+ for anchor row a, likewise for
    columns.
    """
    n = len(s)
    rows, cols = [], []
    for a in range(n):
        negs = [j for j in range(n) if j != a]
        vals = {j: alpha - s[a][a] + s[a][j] for j in negs}
        if kind == "sum":
            chosen = negs
        elif kind == "max":
            chosen = [max(negs, key=lambda j: (s[a][j], -j))]
        else:
            chosen = sorted(negs, key=lambda j: (-s[a][j], j))[:k]
        rows.append([max(0.0, vals[j]) for j in chosen])
    for t in range(n):
        negs = [r for r in range(n) if r != t]
        vals = {r: alpha - s[t][t] + s[r][t] for r in negs}
        if kind == "sum":
            chosen = negs
        elif kind == "max":
            chosen = [max(negs, key=lambda r: (s[r][t], -r))]
        else:
            chosen = sorted(negs, key=lambda r: (-s[r][t], r))[:k]
        cols.append([max(0.0, vals[r]) for r in chosen])
    return rows, cols


def loss_value(s, alpha, kind, k=None):
    rows, cols = hinge_terms(s, alpha, kind, k)
    return math.fsum(itertools.chain.from_iterable(rows + cols))


def loss_from_embeddings(q, it, alpha, kind, k=None):
    return loss_value(cosine_matrix(q, it), alpha, kind, k)


def inverted_softmax(s, beta, dps=50):
    """Unshifted evaluation of exp(b s[q][t]) / sum_{r != q} exp(b s[r][t])."""
    with mpmath.workdps(dps):
        nq, ni = len(s), len(s[0])
        ex = [[mpmath.exp(mpmath.mpf(beta) * mpmath.mpf(s[q][t])) for t in range(ni)] for q in range(nq)]
        out = []
        for q in range(nq):
            row = []
            for t in range(ni):
                den = mpmath.fsum(ex[r][t] for r in range(nq) if r != q)
                row.append(ex[q][t] / den)
            out.append(row)
        return out


def csls(s, k):
    nq, ni = len(s), len(s[0])
    col_mean = []
    for t in range(ni):
        col = sorted((s[q][t] for q in range(nq)), reverse=True)
        col_mean.append(math.fsum(col[:k]) / k)
    row_mean = []
    for q in range(nq):
        row = sorted(s[q], reverse=True)
        row_mean.append(math.fsum(row[:k]) / k)
    return [[2 * s[q][t] - col_mean[t] - row_mean[q] for t in range(ni)] for q in range(nq)]


def ranking(row):
    return sorted(range(len(row)), key=lambda j: (-row[j], j))


def best_assignment(w):
    """Maximum weight over all permutations; lexicographically smallest on ties."""
    n = len(w)
    best, best_perm = None, None
    for perm in itertools.permutations(range(n)):
        total = math.fsum(w[i][perm[i]] for i in range(n))
        if best is None or total > best:
            best, best_perm = total, perm
    return best, list(best_perm)


def min_ranks(ranked, positives):
    out = []
    for q, lst in enumerate(ranked):
        for pos, item in enumerate(lst, 1):
            if item in positives[q]:
                out.append(pos)
                break
    return out
