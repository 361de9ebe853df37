"""Compiled inner loops: event-driven simulation and exact trajectory replay.

All kernels work on flat site indices with a neighbor table ``nbr`` of shape
(n_sites, 2d) and a rate table of the same shape. Random numbers come from
numba's per-thread Mersenne Twister, seeded at the start of each kernel, so a
kernel call is a deterministic function of its arguments.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _tree_build(weights):
    n = weights.size
    P = 1
    while P < n:
        P *= 2
    tree = np.zeros(2 * P)
    for i in range(n):
        tree[P + i] = weights[i]
    for i in range(P - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]
    return tree, P


@njit(cache=True)
def _tree_set(tree, P, i, w):
    k = P + i
    tree[k] = w
    k //= 2
    while k >= 1:
        tree[k] = tree[2 * k] + tree[2 * k + 1]
        k //= 2


@njit(cache=True)
def _tree_pick(tree, P):
    # resample on the (rounding-only) event of landing on an empty leaf
    while True:
        r = np.random.random() * tree[1]
        k = 1
        while k < P:
            left = tree[2 * k]
            if r < left:
                k = 2 * k
            else:
                r -= left
                k = 2 * k + 1
        if tree[k] > 0.0:
            return k - P


@njit(cache=True)
def _pick_direction(rates, x, total):
    D = rates.shape[1]
    r = np.random.random() * total
    acc = 0.0
    for j in range(D - 1):
        acc += rates[x, j]
        if r < acc:
            return j
    return D - 1


@njit(cache=True)
def _grow(times, src, dirs):
    m = times.size
    t2 = np.empty(2 * m)
    s2 = np.empty(2 * m, dtype=np.int32)
    d2 = np.empty(2 * m, dtype=np.int8)
    t2[:m] = times
    s2[:m] = src
    d2[:m] = dirs
    return t2, s2, d2


@njit(cache=True)
def simulate_kernel(eta, nbr, rates, gtab, T, seed, capacity):
    """Run the zero-range dynamics on ``eta`` (modified in place) up to time T."""
    np.random.seed(seed)
    n = eta.size
    ratesum = np.empty(n)
    for i in range(n):
        ratesum[i] = rates[i].sum()
    w = np.empty(n)
    for i in range(n):
        w[i] = gtab[eta[i]] * ratesum[i]
    tree, P = _tree_build(w)
    times = np.empty(max(capacity, 16))
    src = np.empty(max(capacity, 16), dtype=np.int32)
    dirs = np.empty(max(capacity, 16), dtype=np.int8)
    m = 0
    t = 0.0
    while True:
        total = tree[1]
        if total <= 0.0:
            break
        t += -np.log(1.0 - np.random.random()) / total
        if t > T:
            break
        x = _tree_pick(tree, P)
        j = _pick_direction(rates, x, ratesum[x])
        y = nbr[x, j]
        eta[x] -= 1
        eta[y] += 1
        _tree_set(tree, P, x, gtab[eta[x]] * ratesum[x])
        _tree_set(tree, P, y, gtab[eta[y]] * ratesum[y])
        if m == times.size:
            times, src, dirs = _grow(times, src, dirs)
        times[m] = t
        src[m] = x
        dirs[m] = j
        m += 1
    return times[:m].copy(), src[:m].copy(), dirs[:m].copy()


@njit(cache=True)
def coupled_kernel(eta_lo, eta_up, nbr, rates, gtab, T, seed, capacity):
    """Basic coupling of two copies with ``eta_lo <= eta_up`` and non-decreasing g.

    Bond clocks run at the upper copy's rate; the lower copy follows a jump
    with probability ``g(eta_lo(x)) / g(eta_up(x))``. Returns both event logs
    and the number of order violations seen after any event.
    """
    np.random.seed(seed)
    n = eta_up.size
    ratesum = np.empty(n)
    for i in range(n):
        ratesum[i] = rates[i].sum()
    w = np.empty(n)
    for i in range(n):
        w[i] = gtab[eta_up[i]] * ratesum[i]
    tree, P = _tree_build(w)
    cap = max(capacity, 16)
    t_up = np.empty(cap)
    s_up = np.empty(cap, dtype=np.int32)
    d_up = np.empty(cap, dtype=np.int8)
    t_lo = np.empty(cap)
    s_lo = np.empty(cap, dtype=np.int32)
    d_lo = np.empty(cap, dtype=np.int8)
    mu = 0
    ml = 0
    violations = 0
    t = 0.0
    while True:
        total = tree[1]
        if total <= 0.0:
            break
        t += -np.log(1.0 - np.random.random()) / total
        if t > T:
            break
        x = _tree_pick(tree, P)
        j = _pick_direction(rates, x, ratesum[x])
        y = nbr[x, j]
        follow = np.random.random() * gtab[eta_up[x]] < gtab[eta_lo[x]]
        eta_up[x] -= 1
        eta_up[y] += 1
        _tree_set(tree, P, x, gtab[eta_up[x]] * ratesum[x])
        _tree_set(tree, P, y, gtab[eta_up[y]] * ratesum[y])
        if mu == t_up.size:
            t_up, s_up, d_up = _grow(t_up, s_up, d_up)
        t_up[mu] = t
        s_up[mu] = x
        d_up[mu] = j
        mu += 1
        if follow:
            eta_lo[x] -= 1
            eta_lo[y] += 1
            if ml == t_lo.size:
                t_lo, s_lo, d_lo = _grow(t_lo, s_lo, d_lo)
            t_lo[ml] = t
            s_lo[ml] = x
            d_lo[ml] = j
            ml += 1
        if eta_lo[x] > eta_up[x] or eta_lo[y] > eta_up[y] or eta_lo[x] < 0:
            violations += 1
    return (t_lo[:ml].copy(), s_lo[:ml].copy(), d_lo[:ml].copy(),
            t_up[:mu].copy(), s_up[:mu].copy(), d_up[:mu].copy(), violations)


@njit(cache=True)
def integrate_kernel(eta0, ev_t, ev_src, ev_dst, T, weights, tables, lin, tgrid):
    """Exact time integrals along a piecewise-constant trajectory.

    For every term k returns ``int_0^t sum_x weights[k, x] tables[k, eta_s(x)] ds``
    and for every row p of ``lin`` the pairing ``sum_x lin[p, x] eta_t(x)``,
    both at each time of the sorted array ``tgrid`` (entries <= T).
    """
    eta = eta0.copy()
    K = weights.shape[0]
    Pn = lin.shape[0]
    n = eta.size
    S = np.zeros(K)
    for k in range(K):
        acc = 0.0
        for x in range(n):
            acc += weights[k, x] * tables[k, eta[x]]
        S[k] = acc
    L = np.zeros(Pn)
    for p in range(Pn):
        acc = 0.0
        for x in range(n):
            acc += lin[p, x] * eta[x]
        L[p] = acc
    J = np.zeros(K)
    outJ = np.zeros((tgrid.size, K))
    outL = np.zeros((tgrid.size, Pn))
    t_prev = 0.0
    gi = 0
    m = ev_t.size
    e = 0
    while gi < tgrid.size:
        t_next = ev_t[e] if e < m else np.inf
        if tgrid[gi] < t_next:
            for k in range(K):
                outJ[gi, k] = J[k] + S[k] * (tgrid[gi] - t_prev)
            for p in range(Pn):
                outL[gi, p] = L[p]
            gi += 1
            continue
        for k in range(K):
            J[k] += S[k] * (t_next - t_prev)
        t_prev = t_next
        x = ev_src[e]
        y = ev_dst[e]
        for k in range(K):
            S[k] += weights[k, x] * (tables[k, eta[x] - 1] - tables[k, eta[x]])
            S[k] += weights[k, y] * (tables[k, eta[y] + 1] - tables[k, eta[y]])
        for p in range(Pn):
            L[p] += lin[p, y] - lin[p, x]
        eta[x] -= 1
        eta[y] += 1
        e += 1
    return outJ, outL


@njit(cache=True)
def snapshots_kernel(eta0, ev_t, ev_src, ev_dst, tgrid):
    """Occupation numbers at each time of the sorted array ``tgrid``."""
    eta = eta0.copy()
    out = np.zeros((tgrid.size, eta.size), dtype=np.int64)
    e = 0
    m = ev_t.size
    for gi in range(tgrid.size):
        while e < m and ev_t[e] <= tgrid[gi]:
            eta[ev_src[e]] -= 1
            eta[ev_dst[e]] += 1
            e += 1
        out[gi] = eta
    return out


@njit(cache=True)
def replay_check_kernel(eta0, ev_t, ev_src, ev_dst, T):
    """Return (ok, final eta); ok is False on a negative occupancy or bad times."""
    eta = eta0.copy()
    t_prev = 0.0
    for e in range(ev_t.size):
        if not (ev_t[e] > t_prev and ev_t[e] <= T):
            return False, eta
        t_prev = ev_t[e]
        x = ev_src[e]
        if eta[x] <= 0:
            return False, eta
        eta[x] -= 1
        eta[ev_dst[e]] += 1
    return True, eta


@njit(cache=True)
def max_intensity_kernel(eta0, ev_src, ev_dst, ratesum, gtab):
    """Largest total jump intensity visited along the trajectory."""
    eta = eta0.copy()
    S = 0.0
    for x in range(eta.size):
        S += gtab[eta[x]] * ratesum[x]
    best = S
    for e in range(ev_src.size):
        x = ev_src[e]
        y = ev_dst[e]
        S += (gtab[eta[x] - 1] - gtab[eta[x]]) * ratesum[x]
        S += (gtab[eta[y] + 1] - gtab[eta[y]]) * ratesum[y]
        eta[x] -= 1
        eta[y] += 1
        if S > best:
            best = S
    return best


@njit(cache=True)
def replacement_kernel(eta0, ev_t, ev_src, ev_dst, T, box, gtab, phitab, norm):
    """``int_0^T norm * sum_x |mean_box g(eta) - phi(mean_box eta)| ds``.

    ``box[x]`` lists the sites of the box centred at x; ``phitab[m]`` is phi
    at density ``m / box_size``.
    """
    eta = eta0.copy()
    n = eta.size
    B = box.shape[1]
    # member[z] lists the boxes containing z (translation invariance makes it box-shaped)
    nsum = np.zeros(n, dtype=np.int64)
    gsum = np.zeros(n)
    for x in range(n):
        for b in range(B):
            z = box[x, b]
            nsum[x] += eta[z]
            gsum[x] += gtab[eta[z]]
    members = np.empty((n, B), dtype=np.int64)
    fill = np.zeros(n, dtype=np.int64)
    for x in range(n):
        for b in range(B):
            z = box[x, b]
            members[z, fill[z]] = x
            fill[z] += 1
    V = 0.0
    for x in range(n):
        V += abs(gsum[x] / B - phitab[nsum[x]])
    total = 0.0
    t_prev = 0.0
    for e in range(ev_t.size):
        total += V * (ev_t[e] - t_prev)
        t_prev = ev_t[e]
        x = ev_src[e]
        y = ev_dst[e]
        for b in range(B):
            c = members[x, b]
            V -= abs(gsum[c] / B - phitab[nsum[c]])
            nsum[c] -= 1
            gsum[c] += gtab[eta[x] - 1] - gtab[eta[x]]
            V += abs(gsum[c] / B - phitab[nsum[c]])
        eta[x] -= 1
        for b in range(B):
            c = members[y, b]
            V -= abs(gsum[c] / B - phitab[nsum[c]])
            nsum[c] += 1
            gsum[c] += gtab[eta[y] + 1] - gtab[eta[y]]
            V += abs(gsum[c] / B - phitab[nsum[c]])
        eta[y] += 1
    total += V * (T - t_prev)
    return total * norm
