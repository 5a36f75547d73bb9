"""Pure-Python event loop.  Mirrors ``_ckernel.pyx`` draw for draw."""
from __future__ import annotations

import heapq
import math

import numpy as np

_BLOCK = 4096


class _Uniforms:
    """Buffered next_double() stream from a numpy Generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.buf = []
        self.pos = 0

    def __call__(self) -> float:
        if self.pos >= len(self.buf):
            self.buf = self.rng.random(_BLOCK).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


def run_kernel(p: dict, rng: np.random.Generator) -> dict:
    uni = _Uniforms(rng)
    log1p = math.log1p

    mu = p["mu"].tolist()
    cs = p["c"].tolist()
    ks = p["k"].tolist()
    ds = p["d"].tolist()
    ng = len(mu)
    svc = [mu[i] / cs[i] for i in range(ng)]
    timeout = float(p["timeout"])
    service_only = bool(p["service_only"])
    loss_zero = bool(p["loss_zero"])
    proportional = bool(p["proportional"])

    cur = p["agent_good"].tolist()
    tol = p["tol"].tolist()
    adaptive = p["adaptive"].tolist()
    beta = p["beta"].tolist()
    x = p["x"].tolist()
    na = len(cur)

    seg_end = p["seg_end"].tolist()
    seg_lam = p["seg_lam"].tolist()
    nseg = len(seg_end)
    horizon = float(p["horizon"])
    interval = float(p["interval"])
    nsamp = int(p["n_samples"])

    occ_s = np.zeros((nsamp, ng), dtype=np.int64)
    fail_s = np.zeros((nsamp, ng), dtype=np.int64)
    res_s = np.zeros((nsamp, ng), dtype=np.int64)
    tolsum_s = np.zeros((nsamp, ng), dtype=np.float64)
    tmin_s = np.full(nsamp, -1, dtype=np.int64)
    tmax_s = np.full(nsamp, -1, dtype=np.int64)

    occ = [0] * ng
    for g in cur:
        occ[g] += 1
    adaptive_ids = [a for a in range(na) if adaptive[a]]
    tolsum = [0.0] * ng
    for a in adaptive_ids:
        for j in range(ng):
            tolsum[j] += tol[a][j]
    win_fail = [0] * ng
    win_res = [0] * ng
    soj = [0] * ng
    soj_att = [0] * ng
    shifts = 0
    fails_now = [0] * na
    attempts = [0] * na
    epoch = [0] * na

    deps = [[] for _ in range(ng)]
    free = [[0.0] * cs[i] for i in range(ng)]

    heap = []
    seq = 0
    seg = 0
    rate = seg_lam[0] * na
    t_issue = -log1p(-uni()) / rate if rate > 0 else math.inf
    t_bound = seg_end[0] if nseg > 1 else math.inf
    j_s = 0
    t_s = interval
    t_now = 0.0
    inf = math.inf

    while True:
        t_res = heap[0][0] if heap else inf
        te = t_issue if t_issue < t_res else t_res
        if t_bound <= te:
            te = t_bound
        while j_s < nsamp and t_s <= te:
            occ_s[j_s] = occ
            fail_s[j_s] = win_fail
            res_s[j_s] = win_res
            tolsum_s[j_s] = tolsum
            if adaptive_ids:
                sums = [sum(tol[a]) for a in adaptive_ids]
                tmin_s[j_s] = min(sums)
                tmax_s[j_s] = max(sums)
            win_fail = [0] * ng
            win_res = [0] * ng
            j_s += 1
            t_s = (j_s + 1) * interval
        if te > horizon or te == inf:
            break
        if te < t_now:
            raise RuntimeError(f"event queue out of order: {te} < {t_now}")
        t_now = te

        if te == t_bound:
            seg += 1
            t_bound = seg_end[seg] if seg < nseg - 1 else inf
            rate = seg_lam[seg] * na
            t_issue = te - log1p(-uni()) / rate if rate > 0 else inf
            continue

        if te == t_issue and t_issue < t_res:
            a = int(uni() * na)
            g = cur[a]
            d = ds[g]
            ta = te + d
            q = [v for v in deps[g] if v > ta]
            deps[g] = q
            if len(q) >= ks[g]:
                failed = True
                t_r = te if loss_zero else te + 2.0 * d
            else:
                fr = free[g]
                pi = fr.index(min(fr))
                start = ta if ta > fr[pi] else fr[pi]
                service = -log1p(-uni()) / svc[g]
                dep = start + service
                fr[pi] = dep
                q.append(dep)
                rt = 2.0 * d + (service if service_only else dep - ta)
                if rt > timeout:
                    failed = True
                    t_r = te + timeout
                else:
                    failed = False
                    t_r = te + rt
            heapq.heappush(heap, (t_r, seq, a, g, epoch[a], failed))
            seq += 1
            t_issue = te - log1p(-uni()) / rate
            continue

        _, _, a, g, ep, failed = heapq.heappop(heap)
        win_res[g] += 1
        if failed:
            win_fail[g] += 1
        if ep != epoch[a]:
            continue
        attempts[a] += 1
        if not failed:
            continue
        fails_now[a] += 1
        trow = tol[a]
        if fails_now[a] < trow[g]:
            continue
        # tolerance reached: learn, then shift
        r = attempts[a]
        soj[g] += 1
        soj_att[g] += r
        if adaptive[a]:
            xrow = x[a]
            tg = trow[g]
            xrow[g] = (1.0 - beta[a]) * xrow[g] + beta[a] * tg / r
            lo = 0
            for j in range(1, ng):
                if xrow[j] < xrow[lo]:
                    lo = j
            if xrow[lo] < xrow[g] and tg > 1:
                trow[g] = tg - 1
                trow[lo] += 1
                tolsum[g] -= 1.0
                tolsum[lo] += 1.0
        new = _shift(g, trow, ng, proportional, uni)
        if new != g:
            occ[g] -= 1
            occ[new] += 1
            cur[a] = new
            shifts += 1
        fails_now[a] = 0
        attempts[a] = 0
        epoch[a] += 1

    return {
        "occupancy": occ_s,
        "failures": fail_s,
        "resolved": res_s,
        "tol_sum": tolsum_s,
        "agent_tol_min": tmin_s,
        "agent_tol_max": tmax_s,
        "sojourns": np.array(soj, dtype=np.int64),
        "sojourn_attempts": np.array(soj_att, dtype=np.int64),
        "shifts": shifts,
        "final_good": np.array(cur, dtype=np.int64),
        "final_tol": np.array(tol, dtype=np.int64).reshape(na, ng),
        "final_x": np.array(x, dtype=np.float64).reshape(na, ng),
    }


def _shift(g, trow, ng, proportional, uni):
    if ng < 2:
        return g
    if proportional:
        total = 0
        for j in range(ng):
            if j != g:
                total += trow[j]
        if total == 0:
            return g
        target = uni() * total
        acc = 0.0
        last = g
        for j in range(ng):
            if j == g or trow[j] == 0:
                continue
            acc += trow[j]
            last = j
            if target < acc:
                return j
        return last
    usable = False
    for j in range(ng):
        if j != g and trow[j] > 0:
            usable = True
            break
    if not usable:
        return g
    pos = g
    while True:
        j = int(uni() * (ng - 1))
        if j >= pos:
            j += 1
        pos = j
        if trow[pos] > 0:
            return pos
