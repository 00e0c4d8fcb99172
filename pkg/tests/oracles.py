"""Brute-force reference implementations used to validate the library's
metric paths.  Deliberately naive: all-pairs distances, literal 2^n sign
enumeration, hand-rolled average ranks.  These never call the code they check.
"""

import itertools
import math

import numpy as np


def surface_points_mm(mask):
    pts = []
    fg = mask.data
    dims = fg.shape
    for idx in np.argwhere(fg):
        x, y, z = idx
        on_border = x in (0, dims[0] - 1) or y in (0, dims[1] - 1) or z in (0, dims[2] - 1)
        has_bg_neighbor = False
        for axis, step in itertools.product(range(3), (-1, 1)):
            n = idx.copy()
            n[axis] += step
            if 0 <= n[axis] < dims[axis] and not fg[tuple(n)]:
                has_bg_neighbor = True
        if on_border or has_bg_neighbor:
            pts.append(idx * np.asarray(mask.spacing))
    return np.asarray(pts, dtype=float)


def hd95(pred, gt):
    a = surface_points_mm(pred)
    b = surface_points_mm(gt)
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        return math.sqrt(sum((n * s) ** 2 for n, s in zip(pred.dims, pred.spacing)))
    d_ab = [min(np.linalg.norm(p - q) for q in b) for p in a]
    d_ba = [min(np.linalg.norm(q - p) for p in a) for q in b]
    return float(np.percentile(np.asarray(d_ab + d_ba), 95.0))


def dice(pred, gt):
    na = int(np.count_nonzero(pred.data))
    nb = int(np.count_nonzero(gt.data))
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pred.data & gt.data)) / (na + nb)


def precision(pred, gt):
    na = int(np.count_nonzero(pred.data))
    if na == 0:
        return 1.0 if int(np.count_nonzero(gt.data)) == 0 else 0.0
    return int(np.count_nonzero(pred.data & gt.data)) / na


def average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def wilcoxon_exact(diffs, direction):
    d = [x for x in diffs if x != 0.0]
    if direction == "less":
        d = [-x for x in d]
    n = len(d)
    ranks = average_ranks([abs(x) for x in d])
    observed = sum(r for r, x in zip(ranks, d) if x > 0)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if w >= observed - 1e-9:
            hits += 1
    return hits / 2.0**n
