"""Compiled forward-backward / Baum-Welch / Viterbi kernels.

Sequences are passed packed: one flat int64 symbol array plus ``starts`` and
``lengths`` offsets. All kernels assume the chain starts in state 0.
"""

from __future__ import annotations

import math
import os

# prefer OpenMP so numba does not probe (and warn about) an old TBB
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

import numpy as np
from numba import njit, prange

NEG_INF = -np.inf


@njit(cache=True)
def forward_ll(obs, starts, lengths, trans, emit):
    """Total log-likelihood via the scaled forward recursion."""
    h = trans.shape[0]
    total = 0.0
    alpha = np.empty(h)
    nxt = np.empty(h)
    for s in range(starts.shape[0]):
        base = starts[s]
        for i in range(h):
            alpha[i] = 0.0
        alpha[0] = emit[0, obs[base]]
        c = alpha[0]
        if c <= 0.0:
            return NEG_INF
        alpha[0] /= c
        total += math.log(c)
        for t in range(1, lengths[s]):
            o = obs[base + t]
            c = 0.0
            for j in range(h):
                acc = 0.0
                for i in range(j + 1):
                    acc += alpha[i] * trans[i, j]
                acc *= emit[j, o]
                nxt[j] = acc
                c += acc
            if c <= 0.0:
                return NEG_INF
            for j in range(h):
                alpha[j] = nxt[j] / c
            total += math.log(c)
    return total


@njit(cache=True)
def forward_ll_each(obs, starts, lengths, trans, emit):
    """Per-sequence log-likelihoods; -inf marks impossible sequences."""
    n = starts.shape[0]
    out = np.empty(n)
    for s in range(n):
        out[s] = forward_ll(obs[starts[s] : starts[s] + lengths[s]], np.zeros(1, np.int64), lengths[s : s + 1], trans, emit)
    return out


@njit(cache=True, error_model="numpy")
def _em_single(obs, starts, lengths, max_len, trans, emit, max_iter, tol, trace):
    """Run Baum-Welch in place on ``trans``/``emit``.

    ``trace[k]`` receives the log-likelihood of the parameters entering
    iteration ``k``. Returns (final log-likelihood, iterations run). The
    returned parameters are those whose likelihood is reported.
    """
    h = trans.shape[0]
    m = emit.shape[1]
    alpha = np.empty((max_len, h))
    beta = np.empty((max_len, h))
    inv = np.empty(max_len)
    xi = np.empty((h, h))
    ecount = np.empty((h, m))
    tmp = np.empty(h)
    emit_t = np.empty((m, h))
    prev = NEG_INF
    ll = NEG_INF
    it = 0
    while it < max_iter:
        xi[:] = 0.0
        ecount[:] = 0.0
        for k in range(m):
            for i in range(h):
                emit_t[k, i] = emit[i, k]
        ll = 0.0
        for s in range(starts.shape[0]):
            base = starts[s]
            n = lengths[s]
            c = emit_t[obs[base], 0]
            if c <= 0.0:
                ll = NEG_INF
                break
            alpha[0, :] = 0.0
            alpha[0, 0] = 1.0
            inv[0] = 1.0 / c
            prod = c
            for t in range(1, n):
                e = emit_t[obs[base + t]]
                a0 = alpha[t - 1]
                a1 = alpha[t]
                c = 0.0
                for j in range(h):
                    acc = 0.0
                    for i in range(j + 1):
                        acc += a0[i] * trans[i, j]
                    acc *= e[j]
                    a1[j] = acc
                    c += acc
                if c <= 0.0:
                    ll = NEG_INF
                    break
                ic = 1.0 / c
                for j in range(h):
                    a1[j] *= ic
                inv[t] = ic
                prod *= c
                if t % 32 == 0:
                    ll += math.log(prod)
                    prod = 1.0
            if ll == NEG_INF:
                break
            ll += math.log(prod)
            beta[n - 1, :] = 1.0
            for t in range(n - 2, -1, -1):
                e = emit_t[obs[base + t + 1]]
                b1 = beta[t + 1]
                b0 = beta[t]
                at = alpha[t]
                ic = inv[t + 1]
                for j in range(h):
                    tmp[j] = e[j] * b1[j] * ic
                for i in range(h):
                    acc = 0.0
                    ai = at[i]
                    for j in range(i, h):
                        w = trans[i, j] * tmp[j]
                        acc += w
                        xi[i, j] += ai * w
                    b0[i] = acc
            for t in range(n):
                o = obs[base + t]
                at = alpha[t]
                bt = beta[t]
                for i in range(h):
                    ecount[i, o] += at[i] * bt[i]
        if trace.shape[0] > it:
            trace[it] = ll
        if ll == NEG_INF:
            break
        if it > 0 and ll - prev < tol:
            it += 1
            break
        prev = ll
        # M-step; rows with no expected visits keep their previous values
        for i in range(h):
            row = 0.0
            for j in range(i, h):
                row += xi[i, j]
            if row > 0.0:
                for j in range(i, h):
                    trans[i, j] = xi[i, j] / row
            row = 0.0
            for k in range(m):
                row += ecount[i, k]
            if row > 0.0:
                for k in range(m):
                    emit[i, k] = ecount[i, k] / row
        it += 1
    if it == max_iter and ll != NEG_INF:
        # the last M-step moved the parameters; report their likelihood
        ll = forward_ll(obs, starts, lengths, trans, emit)
    return ll, it


@njit(cache=True)
def em_traced(obs, starts, lengths, trans, emit, max_iter, tol):
    max_len = 1
    for s in range(lengths.shape[0]):
        if lengths[s] > max_len:
            max_len = lengths[s]
    trace = np.full(max_iter, np.nan)
    ll, it = _em_single(obs, starts, lengths, max_len, trans, emit, max_iter, tol, trace)
    return ll, it, trace


@njit(cache=True)
def viterbi(seq, log_trans, log_emit):
    """Most probable state path (state 0 start) and its joint log-probability."""
    h = log_trans.shape[0]
    n = seq.shape[0]
    delta = np.empty((n, h))
    back = np.zeros((n, h), dtype=np.int64)
    for i in range(h):
        delta[0, i] = NEG_INF
    delta[0, 0] = log_emit[0, seq[0]]
    for t in range(1, n):
        o = seq[t]
        for j in range(h):
            best = NEG_INF
            arg = j
            for i in range(j + 1):
                v = delta[t - 1, i] + log_trans[i, j]
                if v > best:
                    best = v
                    arg = i
            delta[t, j] = best + log_emit[j, o]
            back[t, j] = arg
    path = np.empty(n, dtype=np.int64)
    best = NEG_INF
    arg = 0
    for i in range(h):
        if delta[n - 1, i] > best:
            best = delta[n - 1, i]
            arg = i
    path[n - 1] = arg
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


def pad(obs, starts, lengths):
    """Time-major padded layout (T, N) plus a 0/1 validity mask."""
    n = starts.shape[0]
    t_max = int(lengths.max())
    sym = np.zeros((t_max, n), dtype=np.int64)
    valid = np.zeros((t_max, n))
    for s in range(n):
        sym[: lengths[s], s] = obs[starts[s] : starts[s] + lengths[s]]
        valid[: lengths[s], s] = 1.0
    return sym, valid


@njit(cache=True, error_model="numpy")
def _em_seqvec(sym, valid, trans, emit, n_iter, tol, state, buf):
    """Advance one restart by up to ``n_iter`` EM iterations.

    The E-step runs over all sequences at once (sequence index innermost) so
    it vectorizes. Padded positions emit with probability 1 and are masked
    out of the expected counts. ``state`` is [prev_ll, done, final_ll, iters].
    """
    t_max, n = sym.shape
    h = trans.shape[0]
    m = emit.shape[1]
    alpha, beta, bem, inv, tmp, prod, xi, gam = buf
    ec = np.empty((h, m))
    xs = np.empty((h, h))
    for _ in range(n_iter):
        if state[1] != 0.0:
            break
        for t in range(t_max):
            for j in range(h):
                row = bem[t, j]
                e = emit[j]
                for q in range(n):
                    row[q] = e[sym[t, q]] if valid[t, q] != 0.0 else 1.0
        xi[:] = 0.0
        gam[:] = 0.0
        ll = 0.0
        # forward
        alpha[0] = 0.0
        a0 = alpha[0, 0]
        b0 = bem[0, 0]
        i0 = inv[0]
        for q in range(n):
            a0[q] = 1.0
            prod[q] = b0[q]
            i0[q] = 1.0 / b0[q]
        for t in range(1, t_max):
            last = alpha[t - 1]
            cur = alpha[t]
            for j in range(h):
                row = cur[j]
                row[:] = 0.0
                for i in range(j + 1):
                    a = last[i]
                    p = trans[i, j]
                    for q in range(n):
                        row[q] += a[q] * p
                b = bem[t, j]
                for q in range(n):
                    row[q] *= b[q]
            ic = inv[t]
            ic[:] = 0.0
            for j in range(h):
                row = cur[j]
                for q in range(n):
                    ic[q] += row[q]
            for q in range(n):
                prod[q] *= ic[q]
                ic[q] = 1.0 / ic[q]
            for j in range(h):
                row = cur[j]
                for q in range(n):
                    row[q] *= ic[q]
            if t % 32 == 0:
                for q in range(n):
                    ll += math.log(prod[q])
                    prod[q] = 1.0
        for q in range(n):
            ll += math.log(prod[q])
        if not ll > NEG_INF:
            state[1] = 1.0
            state[2] = NEG_INF
            state[3] += 1.0
            break
        # backward and expected counts
        beta[t_max - 1] = 1.0
        for t in range(t_max - 2, -1, -1):
            bn = beta[t + 1]
            bc = beta[t]
            at = alpha[t]
            ic = inv[t + 1]
            vn = valid[t + 1]
            for j in range(h):
                tp = tmp[j]
                b = bn[j]
                e = bem[t + 1, j]
                for q in range(n):
                    tp[q] = e[q] * b[q] * ic[q]
            for i in range(h):
                bi = bc[i]
                bi[:] = 0.0
                a = at[i]
                for j in range(i, h):
                    p = trans[i, j]
                    tp = tmp[j]
                    x = xi[i, j]
                    for q in range(n):
                        w = p * tp[q]
                        bi[q] += w
                        x[q] += a[q] * w * vn[q]
        for t in range(t_max):
            vt = valid[t]
            for i in range(h):
                a = alpha[t, i]
                b = beta[t, i]
                g = gam[t, i]
                for q in range(n):
                    g[q] = a[q] * b[q] * vt[q]
        if state[3] > 0.0 and ll - state[0] < tol:
            state[1] = 1.0
            state[2] = ll
            state[3] += 1.0
            break
        state[0] = ll
        state[2] = ll
        # M-step; rows with no expected visits keep their previous values
        xs[:] = 0.0
        ec[:] = 0.0
        for i in range(h):
            for j in range(i, h):
                acc = 0.0
                x = xi[i, j]
                for q in range(n):
                    acc += x[q]
                xs[i, j] = acc
        for t in range(t_max):
            st = sym[t]
            for i in range(h):
                g = gam[t, i]
                for q in range(n):
                    ec[i, st[q]] += g[q]
        for i in range(h):
            row = 0.0
            for j in range(i, h):
                row += xs[i, j]
            if row > 0.0:
                for j in range(i, h):
                    trans[i, j] = xs[i, j] / row
            row = 0.0
            for k in range(m):
                row += ec[i, k]
            if row > 0.0:
                for k in range(m):
                    emit[i, k] = ec[i, k] / row
        state[3] += 1.0


@njit(cache=True)
def _buffers(t_max, h, n):
    return (
        np.empty((t_max, h, n)),
        np.empty((t_max, h, n)),
        np.empty((t_max, h, n)),
        np.empty((t_max, n)),
        np.empty((h, n)),
        np.empty(n),
        np.empty((h, h, n)),
        np.empty((t_max, h, n)),
    )


@njit(cache=True, parallel=True)
def em_restarts(sym, valid, trans, emit, n_iter, tol, state, chunk):
    """Advance every restart (``trans`` (R, h, h), ``emit`` (R, h, M),
    ``state`` (R, 4)) in place; restarts are split into parallel chunks."""
    r = trans.shape[0]
    h = trans.shape[1]
    t_max, n = sym.shape
    n_chunks = (r + chunk - 1) // chunk
    for c in prange(n_chunks):
        buf = _buffers(t_max, h, n)
        for k in range(c * chunk, min(r, (c + 1) * chunk)):
            _em_seqvec(sym, valid, trans[k], emit[k], n_iter, tol, state[k], buf)
