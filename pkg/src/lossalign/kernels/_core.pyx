# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled training chunks: same contract as pyimpl, loop-level C.

Semantics are defined by kernels/pyimpl.py; this module replicates them
with flat-indexed C loops. Within one backend results are bit-stable;
across backends they agree to float tolerance only (BLAS vs plain loops).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite, log, log1p, sqrt

cnp.import_array()

cdef enum:
    TRIPLET = 0
    MIXTURE = 1
    FOCAL = 2
    DEFAULT_SEL = 3

KIND_TRIPLET = TRIPLET
KIND_MIXTURE = MIXTURE
KIND_FOCAL = FOCAL
KIND_DEFAULT = DEFAULT_SEL

OPT_MOMENTUM = 0
OPT_RMSPROP = 1

cdef double PROB_EPS = 1e-7
cdef double DISTANCE_FLOOR = 1e-4
cdef double NORM_FLOOR = 1e-12


cdef inline double _clipd(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef void _stack_forward(double[::1] theta,
                         cnp.int64_t[:, ::1] layout,
                         cnp.int64_t[::1] woff, cnp.int64_t[::1] boff,
                         double[::1] acts, cnp.int64_t[::1] aoff,
                         Py_ssize_t R) noexcept nogil:
    cdef Py_ssize_t L = layout.shape[0]
    cdef Py_ssize_t l, i, j, k, ni, no, abase, obase, wbase, bbase, arow, orow
    cdef double av
    for l in range(L):
        ni = layout[l, 0]
        no = layout[l, 1]
        wbase = woff[l]
        bbase = boff[l]
        abase = aoff[l]
        obase = aoff[l + 1]
        for i in range(R):
            orow = obase + i * no
            for k in range(no):
                acts[orow + k] = theta[bbase + k]
            arow = abase + i * ni
            for j in range(ni):
                av = acts[arow + j]
                for k in range(no):
                    acts[orow + k] += av * theta[wbase + j * no + k]
            if l < L - 1:
                for k in range(no):
                    if acts[orow + k] < 0.0:
                        acts[orow + k] = 0.0


cdef void _stack_backward(double[::1] theta, double[::1] vel, double[::1] grad,
                          cnp.int64_t[:, ::1] layout,
                          cnp.int64_t[::1] woff, cnp.int64_t[::1] boff,
                          double[::1] acts, cnp.int64_t[::1] aoff,
                          double[::1] dz, double[::1] dz2,
                          Py_ssize_t R, int opt_kind,
                          double lr, double p1, double p2) noexcept nogil:
    # dz enters holding the gradient at the final raw output; weights are
    # read for the downstream gradient before they are stepped.
    cdef Py_ssize_t L = layout.shape[0]
    cdef Py_ssize_t l, i, j, k, t, ni, no, abase, wbase, bbase, arow, zrow, wend
    cdef double acc, av, g
    for l in range(L - 1, -1, -1):
        ni = layout[l, 0]
        no = layout[l, 1]
        wbase = woff[l]
        bbase = boff[l]
        wend = bbase + no
        abase = aoff[l]
        for t in range(wbase, wend):
            grad[t] = 0.0
        for i in range(R):
            arow = abase + i * ni
            zrow = i * no
            for j in range(ni):
                av = acts[arow + j]
                if av != 0.0:
                    for k in range(no):
                        grad[wbase + j * no + k] += av * dz[zrow + k]
            for k in range(no):
                grad[bbase + k] += dz[zrow + k]
        if l > 0:
            for i in range(R):
                arow = abase + i * ni
                zrow = i * no
                for j in range(ni):
                    if acts[arow + j] > 0.0:
                        acc = 0.0
                        for k in range(no):
                            acc += dz[zrow + k] * theta[wbase + j * no + k]
                        dz2[i * ni + j] = acc
                    else:
                        dz2[i * ni + j] = 0.0
            for t in range(R * ni):
                dz[t] = dz2[t]
        if opt_kind == 0:
            for t in range(wbase, wend):
                vel[t] = p1 * vel[t] + grad[t]
                theta[t] -= lr * vel[t]
        else:
            for t in range(wbase, wend):
                g = grad[t]
                vel[t] = p1 * vel[t] + (1.0 - p1) * g * g
                theta[t] -= lr * g / (sqrt(vel[t]) + p2)


cdef double _ala_head(double[::1] acts, Py_ssize_t obase,
                      cnp.int64_t[::1] yb, double[:, ::1] phi,
                      double[::1] dz, double[::1] pbuf,
                      Py_ssize_t B, Py_ssize_t C) noexcept nogil:
    cdef Py_ssize_t i, k, row
    cdef double m, tot, s, sig, tsum, dsc, pk, rowk
    cdef double loss = 0.0
    for i in range(B):
        row = obase + i * C
        m = acts[row]
        for k in range(1, C):
            if acts[row + k] > m:
                m = acts[row + k]
        tot = 0.0
        for k in range(C):
            pbuf[k] = exp(acts[row + k] - m)
            tot += pbuf[k]
        s = 0.0
        tsum = 0.0
        for k in range(C):
            pbuf[k] /= tot
            pk = pbuf[k]
            rowk = phi[yb[i], k]
            s += rowk * log(_clipd(pk, PROB_EPS, 1.0 - PROB_EPS))
            if PROB_EPS < pk < 1.0 - PROB_EPS:
                tsum += rowk
        sig = 1.0 / (1.0 + exp(-s))
        loss -= sig
        dsc = -sig * (1.0 - sig) / B
        for k in range(C):
            pk = pbuf[k]
            rowk = phi[yb[i], k] if PROB_EPS < pk < 1.0 - PROB_EPS else 0.0
            dz[i * C + k] = dsc * (rowk - pk * tsum)
    return loss / B


def classifier_chunk(double[::1] theta,
                     double[::1] velocity,
                     cnp.int64_t[:, ::1] layout,
                     double[:, ::1] X,
                     cnp.int64_t[::1] labels,
                     double[:, ::1] phi,
                     cnp.int64_t[:, ::1] batch_idx,
                     int opt_kind,
                     double lr,
                     double p1,
                     double p2):
    cdef Py_ssize_t L = layout.shape[0]
    cdef Py_ssize_t n_iters = batch_idx.shape[0]
    cdef Py_ssize_t B = batch_idx.shape[1]
    cdef Py_ssize_t C = layout[L - 1, 1]
    cdef Py_ssize_t d = layout[0, 0]

    woff_np = np.zeros(L, dtype=np.int64)
    boff_np = np.zeros(L, dtype=np.int64)
    aoff_np = np.zeros(L + 1, dtype=np.int64)
    cdef Py_ssize_t off = 0, atot = B * d, maxw = d, l
    for l in range(L):
        woff_np[l] = off
        boff_np[l] = off + layout[l, 0] * layout[l, 1]
        off = boff_np[l] + layout[l, 1]
        aoff_np[l + 1] = atot
        atot += B * layout[l, 1]
        if layout[l, 1] > maxw:
            maxw = layout[l, 1]
    cdef cnp.int64_t[::1] woff = woff_np
    cdef cnp.int64_t[::1] boff = boff_np
    cdef cnp.int64_t[::1] aoff = aoff_np
    cdef double[::1] acts = np.empty(atot)
    cdef double[::1] dz = np.empty(B * maxw)
    cdef double[::1] dz2 = np.empty(B * maxw)
    cdef double[::1] grad = np.empty(off)
    cdef double[::1] pbuf = np.empty(C)
    yb_np = np.empty(B, dtype=np.int64)
    cdef cnp.int64_t[::1] yb = yb_np

    cdef Py_ssize_t it, i, j, obase = aoff[L]
    cdef cnp.int64_t src
    cdef double loss, loss_sum = 0.0
    for it in range(n_iters):
        with nogil:
            for i in range(B):
                src = batch_idx[it, i]
                yb[i] = labels[src]
                for j in range(d):
                    acts[i * d + j] = X[src, j]
            _stack_forward(theta, layout, woff, boff, acts, aoff, B)
            loss = _ala_head(acts, obase, yb, phi, dz, pbuf, B, C)
        if not isfinite(loss):
            return float("nan")
        loss_sum += loss
        with nogil:
            _stack_backward(theta, velocity, grad, layout, woff, boff,
                            acts, aoff, dz, dz2, B, opt_kind, lr, p1, p2)
    return loss_sum / n_iters


cdef inline double _fplus_val(double dv, double[::1] phi) noexcept nogil:
    cdef double d2 = dv * dv, sd = sqrt(dv)
    return (phi[0] * d2 + phi[1] * d2 * sd + phi[2] * dv * sd
            + phi[3] * (0.5 * exp(0.6 * d2) - 0.5)
            + phi[4] * (0.5 * exp(0.6 * dv) - 0.5))


cdef inline double _fplus_der(double dv, double[::1] phi) noexcept nogil:
    cdef double d2 = dv * dv, sd = sqrt(dv)
    return (phi[0] * 2.0 * dv + phi[1] * 2.5 * dv * sd + phi[2] * 1.5 * sd
            + phi[3] * 0.6 * dv * exp(0.6 * d2)
            + phi[4] * 0.3 * exp(0.6 * dv))


cdef inline double _fminus_val(double dv, double[::1] phi) noexcept nogil:
    cdef double ld = log(dv)
    return (phi[5] * 0.5 / dv + phi[6] * 0.2 / dv + phi[7] * 0.1 / (dv * dv)
            - phi[8] * ld - phi[9] * 2.0 * ld)


cdef inline double _fminus_der(double dv, double[::1] phi) noexcept nogil:
    cdef double d2 = dv * dv
    return (-phi[5] * 0.5 / d2 - phi[6] * 0.2 / d2 - phi[7] * 0.2 / (d2 * dv)
            - phi[8] / dv - phi[9] * 2.0 / dv)


def embedding_chunk(double[::1] theta,
                    double[::1] velocity,
                    cnp.int64_t[:, ::1] layout,
                    double[:, ::1] X,
                    cnp.int64_t[:, ::1] a_idx,
                    cnp.int64_t[:, ::1] p_idx,
                    cnp.int64_t[:, ::1] n_idx,
                    int kind,
                    double[::1] phi,
                    double margin,
                    double alpha,
                    int opt_kind,
                    double lr,
                    double p1,
                    double p2):
    cdef Py_ssize_t L = layout.shape[0]
    cdef Py_ssize_t n_iters = a_idx.shape[0]
    cdef Py_ssize_t B = a_idx.shape[1]
    cdef Py_ssize_t R = 3 * B
    cdef Py_ssize_t E = layout[L - 1, 1]
    cdef Py_ssize_t d = layout[0, 0]

    woff_np = np.zeros(L, dtype=np.int64)
    boff_np = np.zeros(L, dtype=np.int64)
    aoff_np = np.zeros(L + 1, dtype=np.int64)
    cdef Py_ssize_t off = 0, atot = R * d, maxw = d, l
    for l in range(L):
        woff_np[l] = off
        boff_np[l] = off + layout[l, 0] * layout[l, 1]
        off = boff_np[l] + layout[l, 1]
        aoff_np[l + 1] = atot
        atot += R * layout[l, 1]
        if layout[l, 1] > maxw:
            maxw = layout[l, 1]
    cdef cnp.int64_t[::1] woff = woff_np
    cdef cnp.int64_t[::1] boff = boff_np
    cdef cnp.int64_t[::1] aoff = aoff_np
    cdef double[::1] acts = np.empty(atot)
    cdef double[::1] dz = np.empty(R * maxw)
    cdef double[::1] dz2 = np.empty(R * maxw)
    cdef double[::1] grad = np.empty(off)
    cdef double[::1] emb = np.empty(R * E)
    cdef double[::1] norms = np.empty(R)
    cdef double[::1] dpos = np.empty(B)
    cdef double[::1] dneg = np.empty(B)
    cdef double[::1] dldp = np.empty(B)
    cdef double[::1] dldn = np.empty(B)

    cdef Py_ssize_t it, i, j, t, obase
    cdef cnp.int64_t src
    cdef double acc, q, dv, dnc, spos, sneg, gp, gn, wpj, wnj, upj, unj
    cdef double loss, loss_sum = 0.0
    obase = aoff_np[L]

    for it in range(n_iters):
        loss = 0.0
        with nogil:
            for i in range(B):
                for j in range(d):
                    acts[i * d + j] = X[a_idx[it, i], j]
                    acts[(B + i) * d + j] = X[p_idx[it, i], j]
                    acts[(2 * B + i) * d + j] = X[n_idx[it, i], j]
            _stack_forward(theta, layout, woff, boff, acts, aoff, R)
            for i in range(R):
                acc = 0.0
                for j in range(E):
                    dv = acts[obase + i * E + j]
                    acc += dv * dv
                acc = sqrt(acc)
                norms[i] = acc if acc > NORM_FLOOR else NORM_FLOOR
                for j in range(E):
                    emb[i * E + j] = acts[obase + i * E + j] / norms[i]
            for i in range(B):
                acc = 0.0
                q = 0.0
                for j in range(E):
                    dv = emb[i * E + j] - emb[(B + i) * E + j]
                    acc += dv * dv
                    dv = emb[i * E + j] - emb[(2 * B + i) * E + j]
                    q += dv * dv
                dpos[i] = sqrt(acc)
                dneg[i] = sqrt(q)

            if kind == TRIPLET:
                for i in range(B):
                    q = dpos[i] * dpos[i] - dneg[i] * dneg[i] + margin
                    if q > 0.0:
                        loss += q
                        dldp[i] = 1.0 / B   # gradient w.r.t. squared distances
                        dldn[i] = -1.0 / B
                    else:
                        dldp[i] = 0.0
                        dldn[i] = 0.0
                loss /= B
            elif kind == MIXTURE:
                for i in range(B):
                    dnc = dneg[i] if dneg[i] > DISTANCE_FLOOR else DISTANCE_FLOOR
                    loss += _fplus_val(dpos[i], phi) + _fminus_val(dnc, phi)
                    dldp[i] = _fplus_der(dpos[i], phi) / B
                    if dneg[i] > DISTANCE_FLOOR:
                        dldn[i] = _fminus_der(dnc, phi) / B
                    else:
                        dldn[i] = 0.0
                loss /= B
            elif kind == DEFAULT_SEL:
                # the starting mixture written out by hand; MIXTURE at the
                # initial weights must reproduce this arithmetic exactly
                for i in range(B):
                    dnc = dneg[i] if dneg[i] > DISTANCE_FLOOR else DISTANCE_FLOOR
                    loss += dpos[i] * dpos[i] + 0.5 / dnc
                    dldp[i] = 2.0 * dpos[i] / B
                    if dneg[i] > DISTANCE_FLOOR:
                        dldn[i] = -0.5 / (dnc * dnc) / B
                    else:
                        dldn[i] = 0.0
                loss /= B
            else:
                spos = 0.0
                sneg = 0.0
                for i in range(B):
                    dldp[i] = exp(phi[0] * (dpos[i] - alpha))
                    dldn[i] = exp(-phi[1] * (dneg[i] - alpha))
                    spos += dldp[i]
                    sneg += dldn[i]
                loss = log1p(spos) / phi[0] + log1p(sneg) / phi[1]
                for i in range(B):
                    dldp[i] = dldp[i] / (1.0 + spos)
                    dldn[i] = -dldn[i] / (1.0 + sneg)

            # chain into embeddings, then through the row normalization
            for t in range(R * E):
                dz[t] = 0.0
            for i in range(B):
                if kind == TRIPLET:
                    for j in range(E):
                        upj = emb[i * E + j] - emb[(B + i) * E + j]
                        unj = emb[i * E + j] - emb[(2 * B + i) * E + j]
                        wpj = 2.0 * dldp[i] * upj
                        wnj = 2.0 * dldn[i] * unj
                        dz[i * E + j] += wpj + wnj
                        dz[(B + i) * E + j] -= wpj
                        dz[(2 * B + i) * E + j] -= wnj
                else:
                    gp = dldp[i] / dpos[i] if dpos[i] > NORM_FLOOR else 0.0
                    gn = dldn[i] / dneg[i] if dneg[i] > NORM_FLOOR else 0.0
                    for j in range(E):
                        upj = emb[i * E + j] - emb[(B + i) * E + j]
                        unj = emb[i * E + j] - emb[(2 * B + i) * E + j]
                        wpj = gp * upj
                        wnj = gn * unj
                        dz[i * E + j] += wpj + wnj
                        dz[(B + i) * E + j] -= wpj
                        dz[(2 * B + i) * E + j] -= wnj
            for i in range(R):
                acc = 0.0
                for j in range(E):
                    acc += emb[i * E + j] * dz[i * E + j]
                for j in range(E):
                    dz[i * E + j] = (dz[i * E + j] - emb[i * E + j] * acc) / norms[i]
        if not isfinite(loss):
            return float("nan")
        loss_sum += loss
        with nogil:
            _stack_backward(theta, velocity, grad, layout, woff, boff,
                            acts, aoff, dz, dz2, R, opt_kind, lr, p1, p2)
    return loss_sum / n_iters
