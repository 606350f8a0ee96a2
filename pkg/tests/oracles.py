"""Brute-force oracles used only by the tests: exhaustive simplex-grid
maximization of the reweighted loss, and a closed-form 1-Wasserstein
distance for up to three atoms via the star-tree embedding."""

import numpy as np


def tree_w1_distance(q, p, metric):
    """Exact W1 on <=3 atoms: any 3-point metric embeds in a weighted star,
    where optimal transport routes through the hub edge by edge."""
    m = len(p)
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if m == 1:
        return 0.0
    if m == 2:
        return float(metric[0, 1] * abs(q[0] - p[0]))
    if m == 3:
        a = 0.5 * (metric[0, 1] + metric[0, 2] - metric[1, 2])
        b = 0.5 * (metric[0, 1] + metric[1, 2] - metric[0, 2])
        c = 0.5 * (metric[0, 2] + metric[1, 2] - metric[0, 1])
        if min(a, b, c) < -1e-12:
            raise ValueError("metric violates the triangle inequality")
        return float(a * abs(q[0] - p[0]) + b * abs(q[1] - p[1])
                     + c * abs(q[2] - p[2]))
    raise ValueError("tree closed form implemented for m <= 3")


def _grid_2simplex(step, lo=None, hi=None):
    """All points of the 3-atom simplex on a regular grid, optionally
    restricted to a box [lo, hi] per coordinate."""
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    q1, q2 = np.meshgrid(ticks, ticks, indexing="ij")
    q1, q2 = q1.ravel(), q2.ravel()
    q3 = 1.0 - q1 - q2
    keep = q3 >= -1e-12
    q = np.stack([q1, q2, np.maximum(q3, 0.0)], axis=1)[keep]
    if lo is not None:
        keep = np.all((q >= lo - 1e-12) & (q <= hi + 1e-12), axis=1)
        q = q[keep]
    return q


def _grid_1simplex(step):
    q1 = np.arange(0.0, 1.0 + step / 2, step)
    return np.stack([q1, 1.0 - q1], axis=1)


def _divergences(q, p, kind, metric):
    if kind == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(q > 0, q * np.log(q / p), 0.0)
        out = terms.sum(axis=1)
        out[np.any((q > 0) & (p <= 0), axis=1)] = np.inf
        return out
    if kind == "tv":
        return np.abs(q - p).sum(axis=1)
    if kind == "w1":
        m = len(p)
        if m == 2:
            return metric[0, 1] * np.abs(q[:, 0] - p[0])
        a = 0.5 * (metric[0, 1] + metric[0, 2] - metric[1, 2])
        b = 0.5 * (metric[0, 1] + metric[1, 2] - metric[0, 2])
        c = 0.5 * (metric[0, 2] + metric[1, 2] - metric[0, 1])
        return (a * np.abs(q[:, 0] - p[0]) + b * np.abs(q[:, 1] - p[1])
                + c * np.abs(q[:, 2] - p[2]))
    raise ValueError(kind)


def brute_force_worst_case(values, p, kind, delta, metric=None, step=0.001,
                           refine_rounds=5):
    """Exhaustive feasible-grid maximum of E_q[values], with local grid
    refinement around the incumbent so the answer is sharp to ~1e-6."""
    values = np.asarray(values, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    m = len(p)
    if m not in (2, 3):
        raise ValueError("brute force supports 2 or 3 atoms")

    def scan(grid):
        div = _divergences(grid, p, kind, metric)
        ok = div <= delta + 1e-12
        if not np.any(ok):
            return None, None
        vals = grid[ok] @ values
        i = int(np.argmax(vals))
        return float(vals[i]), grid[ok][i]

    def local_grid(center, half, cur_step):
        if m == 2:
            ticks = np.arange(center[0] - half, center[0] + half + cur_step / 2,
                              cur_step)
            ticks = np.clip(ticks, 0.0, 1.0)
            return np.stack([ticks, 1.0 - ticks], axis=1)
        lo = np.clip(center[:2] - half, 0.0, 1.0)
        hi = np.clip(center[:2] + half, 0.0, 1.0)
        t1 = np.arange(lo[0], hi[0] + cur_step / 2, cur_step)
        t2 = np.arange(lo[1], hi[1] + cur_step / 2, cur_step)
        g1, g2 = np.meshgrid(t1, t2, indexing="ij")
        g1, g2 = g1.ravel(), g2.ravel()
        g3 = 1.0 - g1 - g2
        keep = g3 >= -1e-12
        return np.stack([g1, g2, np.maximum(g3, 0.0)], axis=1)[keep]

    grid = _grid_1simplex(step) if m == 2 else _grid_2simplex(step)
    best, best_q = scan(grid)
    prev_step = step
    for _ in range(refine_rounds):
        cur_step = prev_step / 5.0
        # rescan at the same resolution until the incumbent stops moving,
        # so flat boundary directions cannot drift out of the next window
        for _ in range(6):
            val, q = scan(local_grid(best_q, 4.0 * prev_step, cur_step))
            if val is None or val <= best + 1e-15:
                break
            best, best_q = val, q
        prev_step = cur_step

    # direction-shooting pass: the maximizer sits on the divergence boundary
    # (or a simplex face), so shoot rays from p over an angular grid and
    # bisect each ray's feasible length; pure enumeration, no duality
    val, q = _shoot_rays(values, p, kind, delta, metric)
    if val is not None and val > best:
        best, best_q = val, q
    return best, best_q


def _shoot_rays(values, p, kind, delta, metric, n_dirs=4096, iters=80):
    m = len(p)
    if m == 2:
        dirs = np.array([[1.0, -1.0], [-1.0, 1.0]])
    else:
        ang = np.linspace(0.0, 2 * np.pi, n_dirs, endpoint=False)
        # orthonormal basis of the zero-sum plane
        e1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        e2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
        dirs = np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2)

    # cap each ray at the simplex faces
    with np.errstate(divide="ignore"):
        caps = np.where(dirs < 0, -p / np.where(dirs < 0, dirs, -1.0), np.inf)
    s_max = np.minimum(caps.min(axis=1), 2.0)
    qs = p + s_max[:, None] * dirs
    feasible_at_cap = _divergences(np.clip(qs, 0.0, None), p, kind, metric) \
        <= delta + 1e-14
    lo = np.zeros(len(dirs))
    hi = s_max.copy()
    lo[feasible_at_cap] = s_max[feasible_at_cap]
    active = ~feasible_at_cap
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        qm = np.clip(p + mid[:, None] * dirs, 0.0, None)
        ok = _divergences(qm, p, kind, metric) <= delta + 1e-14
        lo = np.where(active & ok, mid, lo)
        hi = np.where(active & ~ok, mid, hi)
    qb = np.clip(p + lo[:, None] * dirs, 0.0, None)
    qb = qb / qb.sum(axis=1, keepdims=True)
    keep = _divergences(qb, p, kind, metric) <= delta + 1e-10
    if not np.any(keep):
        return None, None
    vals = qb[keep] @ values
    i = int(np.argmax(vals))
    return float(vals[i]), qb[keep][i]
