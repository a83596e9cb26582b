# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled linearization backend: per-factor C loops over the packed tables.

Semantics mirror ``_backend_py`` exactly; agreement is enforced by tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, log, sin, sqrt

cnp.import_array()

name = "cython"

cdef double LOG_2PI = 1.8378770664093453
cdef double FD_STEP = 1e-6
cdef double JLP_EPSILON = 1e-6


cdef inline double _wrap(double t) nogil:
    return atan2(sin(t), cos(t))


def accumulate(packed, cnp.ndarray[cnp.float64_t, ndim=1] flat,
               cnp.ndarray[cnp.float64_t, ndim=2] H,
               cnp.ndarray[cnp.float64_t, ndim=1] g):
    cdef double cost = 0.0
    cdef double lognorm = 0.0
    cdef double[:] fv = flat
    cdef double[:, :] Hv = H
    cdef double[:] gv = g

    cdef cnp.int64_t[:] pp_idx = packed.pose_prior_idx
    cdef double[:, :] pp_mean = packed.pose_prior_mean
    cdef double[:, :, :] pp_W = packed.pose_prior_W
    cdef double[:] pp_logdet = packed.pose_prior_logdetW
    cdef Py_ssize_t n, i, j, k, a, b
    cdef double r0, r1, r2, w00
    cdef double[3] r
    cdef double[3] wr

    n = pp_idx.shape[0]
    for k in range(n):
        a = pp_idx[k]
        r[0] = fv[a] - pp_mean[k, 0]
        r[1] = fv[a + 1] - pp_mean[k, 1]
        r[2] = _wrap(fv[a + 2] - pp_mean[k, 2])
        for i in range(3):
            wr[i] = 0.0
            for j in range(3):
                wr[i] += pp_W[k, i, j] * r[j]
        for i in range(3):
            cost += 0.5 * r[i] * wr[i]
            gv[a + i] += wr[i]
            for j in range(3):
                Hv[a + i, a + j] += pp_W[k, i, j]
        lognorm += -1.5 * LOG_2PI + 0.5 * pp_logdet[k]

    cdef cnp.int64_t[:] rel_ia = packed.rel_ia
    cdef cnp.int64_t[:] rel_ib = packed.rel_ib
    cdef double[:, :] rel_meas = packed.rel_meas
    cdef double[:, :, :] rel_W = packed.rel_W
    cdef double[:] rel_logdet = packed.rel_logdetW
    cdef double ca, sa, ex, ey, dx, dy
    cdef double[3][3] Ja
    cdef double[3][3] Jb
    cdef double[3][3] WJa
    cdef double[3][3] WJb
    cdef double acc

    n = rel_ia.shape[0]
    for k in range(n):
        a = rel_ia[k]
        b = rel_ib[k]
        ca = cos(fv[a + 2])
        sa = sin(fv[a + 2])
        ex = fv[b] - fv[a]
        ey = fv[b + 1] - fv[a + 1]
        dx = ca * ex + sa * ey
        dy = -sa * ex + ca * ey
        r[0] = dx - rel_meas[k, 0]
        r[1] = dy - rel_meas[k, 1]
        r[2] = _wrap(fv[b + 2] - fv[a + 2] - rel_meas[k, 2])
        Ja[0][0] = -ca; Ja[0][1] = -sa; Ja[0][2] = dy
        Ja[1][0] = sa;  Ja[1][1] = -ca; Ja[1][2] = -dx
        Ja[2][0] = 0.0; Ja[2][1] = 0.0; Ja[2][2] = -1.0
        Jb[0][0] = ca;  Jb[0][1] = sa;  Jb[0][2] = 0.0
        Jb[1][0] = -sa; Jb[1][1] = ca;  Jb[1][2] = 0.0
        Jb[2][0] = 0.0; Jb[2][1] = 0.0; Jb[2][2] = 1.0
        for i in range(3):
            wr[i] = 0.0
            for j in range(3):
                wr[i] += rel_W[k, i, j] * r[j]
        for i in range(3):
            cost += 0.5 * r[i] * wr[i]
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for a2 in range(3):
                    acc += rel_W[k, i, a2] * Ja[a2][j]
                WJa[i][j] = acc
                acc = 0.0
                for a2 in range(3):
                    acc += rel_W[k, i, a2] * Jb[a2][j]
                WJb[i][j] = acc
        for i in range(3):
            acc = 0.0
            for j in range(3):
                acc += Ja[j][i] * wr[j]
            gv[a + i] += acc
            acc = 0.0
            for j in range(3):
                acc += Jb[j][i] * wr[j]
            gv[b + i] += acc
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for a2 in range(3):
                    acc += Ja[a2][i] * WJa[a2][j]
                Hv[a + i, a + j] += acc
                acc = 0.0
                for a2 in range(3):
                    acc += Ja[a2][i] * WJb[a2][j]
                Hv[a + i, b + j] += acc
                acc = 0.0
                for a2 in range(3):
                    acc += Jb[a2][i] * WJa[a2][j]
                Hv[b + i, a + j] += acc
                acc = 0.0
                for a2 in range(3):
                    acc += Jb[a2][i] * WJb[a2][j]
                Hv[b + i, b + j] += acc
        lognorm += -1.5 * LOG_2PI + 0.5 * rel_logdet[k]

    cdef double[:, :] sem = packed.sem
    cdef Py_ssize_t icam, iobj
    cdef double psi, h, var, hp, hm, dh, res, W1, jc, jo

    n = sem.shape[0]
    for k in range(n):
        icam = <Py_ssize_t> sem[k, 0]
        iobj = <Py_ssize_t> sem[k, 1]
        psi = fv[iobj + 2] - fv[icam + 2]
        h = sem[k, 3] * cos(2.0 * psi) + sem[k, 4]
        var = sqrt(1.0 / (sem[k, 5] * cos(psi) + sem[k, 6]))
        hp = sem[k, 3] * cos(2.0 * (psi + FD_STEP)) + sem[k, 4]
        hm = sem[k, 3] * cos(2.0 * (psi - FD_STEP)) + sem[k, 4]
        dh = (hp - hm) / (2.0 * FD_STEP)
        res = sem[k, 2] - h
        W1 = 1.0 / var
        cost += 0.5 * W1 * res * res
        lognorm += -0.5 * LOG_2PI + 0.5 * log(W1)
        jc = dh
        jo = -dh
        gv[icam + 2] += W1 * res * jc
        gv[iobj + 2] += W1 * res * jo
        Hv[icam + 2, icam + 2] += W1 * jc * jc
        Hv[iobj + 2, iobj + 2] += W1 * jo * jo
        Hv[icam + 2, iobj + 2] += W1 * jc * jo
        Hv[iobj + 2, icam + 2] += W1 * jc * jo

    cdef double[:, :] jlp = packed.jlp
    cdef Py_ssize_t ip, inx
    cdef double E, sig, inc0, incp, incm, dinc, Phi, noise
    cdef double[4] jay
    cdef Py_ssize_t[4] idx4

    n = jlp.shape[0]
    for k in range(n):
        ip = <Py_ssize_t> jlp[k, 0]
        inx = <Py_ssize_t> jlp[k, 1]
        icam = <Py_ssize_t> jlp[k, 2]
        iobj = <Py_ssize_t> jlp[k, 3]
        E = jlp[k, 4]
        sig = jlp[k, 5]
        psi = fv[iobj + 2] - fv[icam + 2]
        inc0 = _jlp_inc(jlp, k, psi, E, &Phi)
        incp = _jlp_inc(jlp, k, psi + FD_STEP, E, NULL)
        incm = _jlp_inc(jlp, k, psi - FD_STEP, E, NULL)
        dinc = (incp - incm) / (2.0 * FD_STEP)
        res = fv[inx] - fv[ip] - inc0
        noise = Phi * Phi * sig + JLP_EPSILON
        W1 = 1.0 / noise
        cost += 0.5 * W1 * res * res
        lognorm += -0.5 * LOG_2PI + 0.5 * log(W1)
        idx4[0] = ip; idx4[1] = inx; idx4[2] = icam + 2; idx4[3] = iobj + 2
        jay[0] = -1.0; jay[1] = 1.0; jay[2] = dinc; jay[3] = -dinc
        for i in range(4):
            gv[idx4[i]] += W1 * res * jay[i]
            for j in range(4):
                Hv[idx4[i], idx4[j]] += W1 * jay[i] * jay[j]

    return cost, lognorm


cdef double _jlp_inc(double[:, :] jlp, Py_ssize_t k, double p, double E,
                     double* phi_out) nogil:
    cdef double h1 = jlp[k, 6] * cos(2.0 * p) + jlp[k, 7]
    cdef double v1 = sqrt(1.0 / (jlp[k, 8] * cos(p) + jlp[k, 9]))
    cdef double h2 = jlp[k, 10] * cos(2.0 * p) + jlp[k, 11]
    cdef double v2 = sqrt(1.0 / (jlp[k, 12] * cos(p) + jlp[k, 13]))
    cdef double Phi = h1 / v1 - h2 / v2
    cdef double phi = h1 * h1 / v1 - h2 * h2 / v2
    if phi_out != NULL:
        phi_out[0] = Phi
    return Phi * E - 0.5 * phi


def accumulate_batch(cnp.ndarray[cnp.int64_t, ndim=1] pp_idx,
                     cnp.ndarray[cnp.float64_t, ndim=2] pp_mean,
                     cnp.ndarray[cnp.float64_t, ndim=3] pp_W,
                     cnp.ndarray[cnp.float64_t, ndim=1] pp_logdet,
                     cnp.ndarray[cnp.int64_t, ndim=1] rel_ia,
                     cnp.ndarray[cnp.int64_t, ndim=1] rel_ib,
                     cnp.ndarray[cnp.float64_t, ndim=2] rel_meas,
                     cnp.ndarray[cnp.float64_t, ndim=3] rel_W,
                     cnp.ndarray[cnp.float64_t, ndim=1] rel_logdet,
                     cnp.ndarray[cnp.int64_t, ndim=1] sem_cam,
                     cnp.ndarray[cnp.int64_t, ndim=1] sem_obj,
                     cnp.ndarray[cnp.float64_t, ndim=2] sem_lg,
                     cnp.ndarray[cnp.float64_t, ndim=3] sem_params,
                     cnp.ndarray[cnp.float64_t, ndim=2] V,
                     cnp.ndarray[cnp.float64_t, ndim=3] H,
                     cnp.ndarray[cnp.float64_t, ndim=2] g,
                     cnp.ndarray[cnp.float64_t, ndim=1] cost,
                     cnp.ndarray[cnp.float64_t, ndim=1] lognorm):
    """Batched variant over instance rows of V; semantics match accumulate."""
    cdef Py_ssize_t A = V.shape[0]
    cdef double[:, :] fv = V
    cdef double[:, :, :] Hv = H
    cdef double[:, :] gv = g
    cdef double[:] costv = cost
    cdef double[:] lognormv = lognorm
    cdef cnp.int64_t[:] ppi = pp_idx
    cdef double[:, :] ppm = pp_mean
    cdef double[:, :, :] ppw = pp_W
    cdef double[:] ppl = pp_logdet
    cdef cnp.int64_t[:] ria = rel_ia
    cdef cnp.int64_t[:] rib = rel_ib
    cdef double[:, :] rmeas = rel_meas
    cdef double[:, :, :] rW = rel_W
    cdef double[:] rl = rel_logdet
    cdef cnp.int64_t[:] scam = sem_cam
    cdef cnp.int64_t[:] sobj = sem_obj
    cdef double[:, :] slg = sem_lg
    cdef double[:, :, :] spar = sem_params

    cdef Py_ssize_t ai, n, i, j, k, a, b, a2, icam, iobj
    cdef double[3] r
    cdef double[3] wr
    cdef double ca, sa, ex, ey, dx, dy, acc
    cdef double[3][3] Ja
    cdef double[3][3] Jb
    cdef double[3][3] WJa
    cdef double[3][3] WJb
    cdef double psi, h, var, hp, hm, dh, res, W1, jc, jo
    cdef double shared_rel = 0.0
    cdef double shared_pp = 0.0

    for k in range(ppi.shape[0]):
        shared_pp += -1.5 * LOG_2PI + 0.5 * ppl[k]
    for k in range(ria.shape[0]):
        shared_rel += -1.5 * LOG_2PI + 0.5 * rl[k]

    for ai in range(A):
        lognormv[ai] += shared_pp + shared_rel
        for k in range(ppi.shape[0]):
            a = ppi[k]
            r[0] = fv[ai, a] - ppm[k, 0]
            r[1] = fv[ai, a + 1] - ppm[k, 1]
            r[2] = _wrap(fv[ai, a + 2] - ppm[k, 2])
            for i in range(3):
                wr[i] = 0.0
                for j in range(3):
                    wr[i] += ppw[k, i, j] * r[j]
            for i in range(3):
                costv[ai] += 0.5 * r[i] * wr[i]
                gv[ai, a + i] += wr[i]
                for j in range(3):
                    Hv[ai, a + i, a + j] += ppw[k, i, j]

        for k in range(ria.shape[0]):
            a = ria[k]
            b = rib[k]
            ca = cos(fv[ai, a + 2])
            sa = sin(fv[ai, a + 2])
            ex = fv[ai, b] - fv[ai, a]
            ey = fv[ai, b + 1] - fv[ai, a + 1]
            dx = ca * ex + sa * ey
            dy = -sa * ex + ca * ey
            r[0] = dx - rmeas[k, 0]
            r[1] = dy - rmeas[k, 1]
            r[2] = _wrap(fv[ai, b + 2] - fv[ai, a + 2] - rmeas[k, 2])
            Ja[0][0] = -ca; Ja[0][1] = -sa; Ja[0][2] = dy
            Ja[1][0] = sa;  Ja[1][1] = -ca; Ja[1][2] = -dx
            Ja[2][0] = 0.0; Ja[2][1] = 0.0; Ja[2][2] = -1.0
            Jb[0][0] = ca;  Jb[0][1] = sa;  Jb[0][2] = 0.0
            Jb[1][0] = -sa; Jb[1][1] = ca;  Jb[1][2] = 0.0
            Jb[2][0] = 0.0; Jb[2][1] = 0.0; Jb[2][2] = 1.0
            for i in range(3):
                wr[i] = 0.0
                for j in range(3):
                    wr[i] += rW[k, i, j] * r[j]
            for i in range(3):
                costv[ai] += 0.5 * r[i] * wr[i]
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for a2 in range(3):
                        acc += rW[k, i, a2] * Ja[a2][j]
                    WJa[i][j] = acc
                    acc = 0.0
                    for a2 in range(3):
                        acc += rW[k, i, a2] * Jb[a2][j]
                    WJb[i][j] = acc
            for i in range(3):
                acc = 0.0
                for j in range(3):
                    acc += Ja[j][i] * wr[j]
                gv[ai, a + i] += acc
                acc = 0.0
                for j in range(3):
                    acc += Jb[j][i] * wr[j]
                gv[ai, b + i] += acc
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for a2 in range(3):
                        acc += Ja[a2][i] * WJa[a2][j]
                    Hv[ai, a + i, a + j] += acc
                    acc = 0.0
                    for a2 in range(3):
                        acc += Ja[a2][i] * WJb[a2][j]
                    Hv[ai, a + i, b + j] += acc
                    acc = 0.0
                    for a2 in range(3):
                        acc += Jb[a2][i] * WJa[a2][j]
                    Hv[ai, b + i, a + j] += acc
                    acc = 0.0
                    for a2 in range(3):
                        acc += Jb[a2][i] * WJb[a2][j]
                    Hv[ai, b + i, b + j] += acc

        for k in range(scam.shape[0]):
            icam = scam[k]
            iobj = sobj[k]
            psi = fv[ai, iobj + 2] - fv[ai, icam + 2]
            h = spar[k, ai, 0] * cos(2.0 * psi) + spar[k, ai, 1]
            var = sqrt(1.0 / (spar[k, ai, 2] * cos(psi) + spar[k, ai, 3]))
            hp = spar[k, ai, 0] * cos(2.0 * (psi + FD_STEP)) + spar[k, ai, 1]
            hm = spar[k, ai, 0] * cos(2.0 * (psi - FD_STEP)) + spar[k, ai, 1]
            dh = (hp - hm) / (2.0 * FD_STEP)
            res = slg[k, ai] - h
            W1 = 1.0 / var
            costv[ai] += 0.5 * W1 * res * res
            lognormv[ai] += -0.5 * LOG_2PI + 0.5 * log(W1)
            jc = dh
            jo = -dh
            gv[ai, icam + 2] += W1 * res * jc
            gv[ai, iobj + 2] += W1 * res * jo
            Hv[ai, icam + 2, icam + 2] += W1 * jc * jc
            Hv[ai, iobj + 2, iobj + 2] += W1 * jo * jo
            Hv[ai, icam + 2, iobj + 2] += W1 * jc * jo
            Hv[ai, iobj + 2, icam + 2] += W1 * jc * jo
    return None
