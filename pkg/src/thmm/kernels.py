"""Per-tree message-passing kernels.

Two implementations share one calling convention:

* ``numba`` -- loop kernels compiled with ``@njit(nogil=True)``;
* ``numpy`` -- per-node vectorized numpy, no compilation.

The numba path is used when numba imports and ``THMM_NO_NUMBA`` is unset
(or ``0``).  ``set_backend`` switches at runtime.

Tree arrays are those of :class:`thmm.corpus.DepTree`: ``words``,
``funcs``, ``parents`` (CoNLL heads, 0 = root) and ``order`` (0-based,
parents before children).  A packed forest concatenates them and adds
``offsets`` (length n_trees + 1).

Kernels return an error code instead of raising: ``-1`` means success,
otherwise the 0-based node whose belief or message lost all mass.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numba kernels

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _nb_upward(words, funcs, parents, order, trans, emis, root, keep_k,
                   beliefs, msgs, scale):
        K = words.shape[0]
        N = trans.shape[1]
        inbox = np.ones((K, N))
        loglik = 0.0
        for t in range(K - 1, -1, -1):
            k = order[t]
            r = funcs[k]
            w = words[k]
            b = beliefs[k]
            z = 0.0
            for i in range(N):
                b[i] = emis[r, i, w] * inbox[k, i]
                z += b[i]
            if not (z > 0.0) or not math.isfinite(z):
                return loglik, k
            for i in range(N):
                b[i] /= z
            s = math.log(z)
            if 0 < keep_k < N:
                idx = np.argsort(-b, kind="mergesort")
                for q in range(keep_k, N):
                    b[idx[q]] = 0.0
                z = 0.0
                for i in range(N):
                    z += b[i]
                if not (z > 0.0):
                    return loglik, k
                for i in range(N):
                    b[i] /= z
                s += math.log(z)
            p = parents[k]
            if p == 0:
                acc = 0.0
                for i in range(N):
                    acc += root[r, i] * b[i]
                if not (acc > 0.0):
                    return loglik, k
                s += math.log(acc)
                for j in range(N):
                    msgs[k, j] = 0.0
            else:
                zm = 0.0
                for j in range(N):
                    acc = 0.0
                    for i in range(N):
                        acc += trans[r, j, i] * b[i]
                    msgs[k, j] = acc
                    zm += acc
                if not (zm > 0.0):
                    return loglik, k
                for j in range(N):
                    msgs[k, j] /= zm
                    inbox[p - 1, j] *= msgs[k, j]
                s += math.log(zm)
            scale[k] = s
            loglik += s
        return loglik, -1

    @njit(cache=True, nogil=True)
    def _nb_downward(words, funcs, parents, order, trans, emis, root, beliefs, msgs,
                     projected, post, edge_w):
        """Fill node posteriors and, for non-root-attached nodes, the parent
        side ``edge_w`` with edge[i, j] = trans[r, j, i] * b[i] * edge_w[j]."""
        K = words.shape[0]
        N = trans.shape[1]
        # child lists, in traversal order
        count = np.zeros(K + 1, dtype=np.int64)
        for t in range(K):
            count[parents[order[t]]] += 1
        start = np.zeros(K + 2, dtype=np.int64)
        for n in range(K + 1):
            start[n + 1] = start[n] + count[n]
        fill = start.copy()
        kids = np.empty(K, dtype=np.int64)
        for t in range(K):
            k = order[t]
            p = parents[k]
            kids[fill[p]] = k
            fill[p] += 1

        down = np.empty((K, N))
        excl = np.empty((K, N))
        base = np.empty(N)
        pre = np.empty(N)
        suf = np.empty(N)
        dun = np.empty(N)
        for t in range(K):
            k = order[t]
            r = funcs[k]
            p = parents[k]
            if p == 0:
                for i in range(N):
                    dun[i] = root[r, i]
            else:
                for i in range(N):
                    dun[i] = 0.0
                for j in range(N):
                    e = excl[k, j]
                    if e != 0.0:
                        for i in range(N):
                            dun[i] += trans[r, j, i] * e
            zd = 0.0
            zb = 0.0
            for i in range(N):
                zd += dun[i]
                zb += beliefs[k, i] * dun[i]
            if not (zd > 0.0) or not (zb > 0.0):
                return k
            for i in range(N):
                down[k, i] = dun[i] / zd
                post[k, i] = beliefs[k, i] * dun[i] / zb
            if p != 0:
                for j in range(N):
                    edge_w[k, j] = excl[k, j] / zb
            else:
                for j in range(N):
                    edge_w[k, j] = 0.0
            # parent-side vectors for the children of k
            a, bnd = start[k + 1], start[k + 2]
            if a == bnd:
                continue
            w = words[k]
            for j in range(N):
                v = down[k, j] * emis[r, j, w]
                if projected and beliefs[k, j] == 0.0:
                    v = 0.0
                base[j] = v
                pre[j] = v
                suf[j] = 1.0
            for q in range(a, bnd):
                c = kids[q]
                for j in range(N):
                    excl[c, j] = pre[j]
                    pre[j] *= msgs[c, j]
            for q in range(bnd - 1, a - 1, -1):
                c = kids[q]
                ze = 0.0
                for j in range(N):
                    excl[c, j] *= suf[j]
                    suf[j] *= msgs[c, j]
                    ze += excl[c, j]
                if not (ze > 0.0):
                    return c
                for j in range(N):
                    excl[c, j] /= ze
        return -1

    @njit(cache=True, nogil=True)
    def _nb_estep_forest(words, funcs, parents, order, offsets, trans, emis, root,
                         keep_k, tau, rho, posts):
        N = trans.shape[1]
        total = 0.0
        projected = 0 < keep_k < N
        for n in range(offsets.shape[0] - 1):
            a, b = offsets[n], offsets[n + 1]
            K = b - a
            beliefs = np.empty((K, N))
            msgs = np.empty((K, N))
            scale = np.empty(K)
            ll, bad = _nb_upward(words[a:b], funcs[a:b], parents[a:b], order[a:b],
                                 trans, emis, root, keep_k, beliefs, msgs, scale)
            if bad >= 0:
                return total, n, bad
            total += ll
            post = posts[a:b]
            edge_w = np.empty((K, N))
            bad = _nb_downward(words[a:b], funcs[a:b], parents[a:b], order[a:b],
                               trans, emis, root, beliefs, msgs, projected, post, edge_w)
            if bad >= 0:
                return total, n, bad
            for k in range(K):
                r = funcs[a + k]
                if parents[a + k] == 0:
                    for i in range(N):
                        rho[r, i] += post[k, i]
                else:
                    for j in range(N):
                        e = edge_w[k, j]
                        if e != 0.0:
                            for i in range(N):
                                tau[r, j, i] += trans[r, j, i] * beliefs[k, i] * e
        return total, -1, -1

    @njit(cache=True, nogil=True)
    def _nb_loglik_forest(words, funcs, parents, order, offsets, trans, emis, root,
                          keep_k, out):
        N = trans.shape[1]
        for n in range(offsets.shape[0] - 1):
            a, b = offsets[n], offsets[n + 1]
            K = b - a
            ll, bad = _nb_upward(words[a:b], funcs[a:b], parents[a:b], order[a:b],
                                 trans, emis, root, keep_k, np.empty((K, N)),
                                 np.empty((K, N)), np.empty(K))
            if bad >= 0:
                return n, bad
            out[n] = ll
        return -1, -1

    @njit(cache=True, nogil=True)
    def _nb_scatter_emissions(omega, funcs, words, posts):
        N = omega.shape[1]
        for k in range(words.shape[0]):
            r = funcs[k]
            w = words[k]
            for j in range(N):
                omega[r, j, w] += posts[k, j]

    @njit(cache=True, nogil=True)
    def _nb_max_product(words, funcs, parents, order, ltrans, lemis, lroot, states):
        # log-domain tables; -inf marks impossible events
        K = words.shape[0]
        N = ltrans.shape[1]
        inbox = np.zeros((K, N))
        back = np.zeros((K, N), dtype=np.int64)
        score = np.empty(N)
        best = 0.0
        for t in range(K - 1, -1, -1):
            k = order[t]
            r = funcs[k]
            w = words[k]
            for i in range(N):
                score[i] = lemis[r, i, w] + inbox[k, i]
            p = parents[k]
            if p == 0:
                arg = 0
                top = -np.inf
                for i in range(N):
                    v = score[i] + lroot[r, i]
                    if v > top:
                        top = v
                        arg = i
                back[k, 0] = arg
                best += top
            else:
                for j in range(N):
                    arg = 0
                    top = -np.inf
                    for i in range(N):
                        v = score[i] + ltrans[r, j, i]
                        if v > top:
                            top = v
                            arg = i
                    back[k, j] = arg
                    inbox[p - 1, j] += top
        for t in range(K):
            k = order[t]
            p = parents[k]
            states[k] = back[k, 0] if p == 0 else back[k, states[p - 1]]
        return best


# ---------------------------------------------------------------------------
# numpy kernels

def _np_upward(words, funcs, parents, order, trans, emis, root, keep_k, beliefs, msgs,
               scale):
    K = words.shape[0]
    N = trans.shape[1]
    inbox = np.ones((K, N))
    loglik = 0.0
    for k in order[::-1]:
        r = funcs[k]
        b = emis[r, :, words[k]] * inbox[k]
        z = b.sum()
        if not (z > 0.0) or not np.isfinite(z):
            return loglik, int(k)
        b /= z
        s = math.log(z)
        if 0 < keep_k < N:
            b[np.argsort(-b, kind="stable")[keep_k:]] = 0.0
            z = b.sum()
            b /= z
            s += math.log(z)
        beliefs[k] = b
        p = parents[k]
        if p == 0:
            acc = root[r] @ b
            if not (acc > 0.0):
                return loglik, int(k)
            s += math.log(acc)
            msgs[k] = 0.0
        else:
            m = trans[r] @ b
            zm = m.sum()
            if not (zm > 0.0):
                return loglik, int(k)
            msgs[k] = m / zm
            inbox[p - 1] *= msgs[k]
            s += math.log(zm)
        scale[k] = s
        loglik += s
    return loglik, -1


def _np_downward(words, funcs, parents, order, trans, emis, root, beliefs, msgs,
                 projected, post, edge_w):
    K = words.shape[0]
    children: list[list[int]] = [[] for _ in range(K)]
    for k in order:
        if parents[k]:
            children[parents[k] - 1].append(int(k))
    excl = np.zeros_like(beliefs)
    for k in order:
        r = funcs[k]
        p = parents[k]
        dun = root[r].copy() if p == 0 else excl[k] @ trans[r]
        zd = dun.sum()
        zb = beliefs[k] @ dun
        if not (zd > 0.0) or not (zb > 0.0):
            return int(k)
        post[k] = beliefs[k] * dun / zb
        edge_w[k] = 0.0 if p == 0 else excl[k] / zb
        kids = children[k]
        if not kids:
            continue
        base = dun / zd * emis[r, :, words[k]]
        if projected:
            base[beliefs[k] == 0.0] = 0.0
        m = msgs[kids]
        prefix = np.cumprod(np.vstack([base, m[:-1]]), axis=0)
        suffix = np.cumprod(np.vstack([np.ones_like(base), m[:0:-1]]), axis=0)[::-1]
        e = prefix * suffix
        ze = e.sum(axis=1)
        if not (ze > 0.0).all():
            return kids[int(np.argmin(ze))]
        excl[kids] = e / ze[:, None]
    return -1


def _np_estep_forest(words, funcs, parents, order, offsets, trans, emis, root, keep_k,
                     tau, rho, posts):
    N = trans.shape[1]
    total = 0.0
    projected = 0 < keep_k < N
    for n in range(len(offsets) - 1):
        a, b = offsets[n], offsets[n + 1]
        sl = slice(a, b)
        K = b - a
        beliefs = np.empty((K, N))
        msgs = np.empty((K, N))
        ll, bad = _np_upward(words[sl], funcs[sl], parents[sl], order[sl], trans, emis,
                             root, keep_k, beliefs, msgs, np.empty(K))
        if bad >= 0:
            return total, n, bad
        total += ll
        post = posts[sl]
        edge_w = np.empty((K, N))
        bad = _np_downward(words[sl], funcs[sl], parents[sl], order[sl], trans, emis,
                           root, beliefs, msgs, projected, post, edge_w)
        if bad >= 0:
            return total, n, bad
        par = parents[sl]
        fn = funcs[sl]
        at_root = par == 0
        np.add.at(rho, fn[at_root], post[at_root])
        inner = ~at_root
        if inner.any():
            contrib = trans[fn[inner]] * edge_w[inner][:, :, None] * beliefs[inner][:, None, :]
            np.add.at(tau, fn[inner], contrib)
    return total, -1, -1


def _np_loglik_forest(words, funcs, parents, order, offsets, trans, emis, root, keep_k,
                      out):
    N = trans.shape[1]
    for n in range(len(offsets) - 1):
        sl = slice(offsets[n], offsets[n + 1])
        K = offsets[n + 1] - offsets[n]
        ll, bad = _np_upward(words[sl], funcs[sl], parents[sl], order[sl], trans, emis,
                             root, keep_k, np.empty((K, N)), np.empty((K, N)), np.empty(K))
        if bad >= 0:
            return n, bad
        out[n] = ll
    return -1, -1


def _np_scatter_emissions(omega, funcs, words, posts):
    # omega[funcs[k], :, words[k]] += posts[k], in token order
    flat = omega.transpose(0, 2, 1)
    np.add.at(flat, (funcs, words), posts)


def _np_max_product(words, funcs, parents, order, ltrans, lemis, lroot, states):
    K = words.shape[0]
    N = ltrans.shape[1]
    inbox = np.zeros((K, N))
    back = np.zeros((K, N), dtype=np.int64)
    best = 0.0
    for k in order[::-1]:
        r = funcs[k]
        score = lemis[r, :, words[k]] + inbox[k]
        p = parents[k]
        if p == 0:
            v = score + lroot[r]
            back[k, 0] = int(np.argmax(v))
            best += v[back[k, 0]]
        else:
            v = ltrans[r] + score[None, :]
            back[k] = np.argmax(v, axis=1)
            inbox[p - 1] += v[np.arange(N), back[k]]
    for k in order:
        p = parents[k]
        states[k] = back[k, 0] if p == 0 else back[k, states[p - 1]]
    return best


# ---------------------------------------------------------------------------
# dispatch

class Backend:
    def __init__(self, name, upward, downward, estep_forest, loglik_forest,
                 scatter_emissions, max_product):
        self.name = name
        self.upward = upward
        self.downward = downward
        self.estep_forest = estep_forest
        self.loglik_forest = loglik_forest
        self.scatter_emissions = scatter_emissions
        self.max_product = max_product

    def __repr__(self):
        return f"Backend({self.name!r})"


NUMPY = Backend("numpy", _np_upward, _np_downward, _np_estep_forest, _np_loglik_forest,
                _np_scatter_emissions, _np_max_product)
NUMBA = Backend("numba", _nb_upward, _nb_downward, _nb_estep_forest, _nb_loglik_forest,
                _nb_scatter_emissions, _nb_max_product) if HAVE_NUMBA else None

BACKENDS = {b.name: b for b in (NUMPY, NUMBA) if b is not None}


def _default() -> Backend:
    if os.environ.get("THMM_NO_NUMBA", "0") not in ("", "0") or NUMBA is None:
        return NUMPY
    return NUMBA


_active = _default()


def backend() -> Backend:
    return _active


def set_backend(name: str) -> Backend:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    prev, _active = _active, BACKENDS[name]
    return prev
