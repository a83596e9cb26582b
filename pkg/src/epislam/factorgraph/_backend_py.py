"""Vectorized NumPy linearization backend (pure-Python fallback).

Whole factor families are processed as batched array operations and
scatter-added into the dense normal equations; per-iteration Python
overhead is a fixed number of NumPy calls per family rather than per
factor.
"""

from __future__ import annotations

import numpy as np

from ._factors import FD_STEP, JLP_EPSILON

LOG_2PI = float(np.log(2.0 * np.pi))
_AX3 = np.arange(3)

name = "python"


def accumulate(packed, flat, H, g):
    cost = 0.0
    lognorm = 0.0

    if packed.pose_prior_idx.size:
        idx = packed.pose_prior_idx
        x = flat[idx[:, None] + _AX3]
        r = x - packed.pose_prior_mean
        r[:, 2] = _wrap(r[:, 2])
        W = packed.pose_prior_W
        Wr = np.einsum("nij,nj->ni", W, r)
        cost += 0.5 * float(np.einsum("ni,ni->", r, Wr))
        lognorm += float(-1.5 * LOG_2PI * idx.size + 0.5 * packed.pose_prior_logdetW.sum())
        np.add.at(g, idx[:, None] + _AX3, Wr)
        rows = idx[:, None, None] + _AX3[None, :, None]
        cols = idx[:, None, None] + _AX3[None, None, :]
        np.add.at(H, (rows, cols), W)

    if packed.rel_ia.size:
        ia, ib = packed.rel_ia, packed.rel_ib
        a = flat[ia[:, None] + _AX3]
        b = flat[ib[:, None] + _AX3]
        ca, sa = np.cos(a[:, 2]), np.sin(a[:, 2])
        ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
        dx = ca * ex + sa * ey
        dy = -sa * ex + ca * ey
        dpsi = b[:, 2] - a[:, 2]
        r = np.stack([dx, dy, dpsi], axis=1) - packed.rel_meas
        r[:, 2] = _wrap(r[:, 2])
        n = ia.size
        Ja = np.zeros((n, 3, 3))
        Ja[:, 0, 0] = -ca
        Ja[:, 0, 1] = -sa
        Ja[:, 0, 2] = dy
        Ja[:, 1, 0] = sa
        Ja[:, 1, 1] = -ca
        Ja[:, 1, 2] = -dx
        Ja[:, 2, 2] = -1.0
        Jb = np.zeros((n, 3, 3))
        Jb[:, 0, 0] = ca
        Jb[:, 0, 1] = sa
        Jb[:, 1, 0] = -sa
        Jb[:, 1, 1] = ca
        Jb[:, 2, 2] = 1.0
        W = packed.rel_W
        Wr = np.einsum("nij,nj->ni", W, r)
        cost += 0.5 * float(np.einsum("ni,ni->", r, Wr))
        lognorm += float(-1.5 * LOG_2PI * n + 0.5 * packed.rel_logdetW.sum())
        WJa = np.einsum("nij,njk->nik", W, Ja)
        WJb = np.einsum("nij,njk->nik", W, Jb)
        np.add.at(g, ia[:, None] + _AX3, np.einsum("nji,nj->ni", Ja, Wr))
        np.add.at(g, ib[:, None] + _AX3, np.einsum("nji,nj->ni", Jb, Wr))
        for iu, Ju, pairs in (
            (ia, Ja, ((ia, WJa), (ib, WJb))),
            (ib, Jb, ((ia, WJa), (ib, WJb))),
        ):
            for iv, WJv in pairs:
                block = np.einsum("nji,njk->nik", Ju, WJv)
                rows = iu[:, None, None] + _AX3[None, :, None]
                cols = iv[:, None, None] + _AX3[None, None, :]
                np.add.at(H, (rows, cols), block)

    if packed.sem.shape[0]:
        tab = packed.sem
        icam = tab[:, 0].astype(np.int64)
        iobj = tab[:, 1].astype(np.int64)
        lg = tab[:, 2]
        psi = flat[iobj + 2] - flat[icam + 2]
        h = tab[:, 3] * np.cos(2.0 * psi) + tab[:, 4]
        var = np.sqrt(1.0 / (tab[:, 5] * np.cos(psi) + tab[:, 6]))
        hp = tab[:, 3] * np.cos(2.0 * (psi + FD_STEP)) + tab[:, 4]
        hm = tab[:, 3] * np.cos(2.0 * (psi - FD_STEP)) + tab[:, 4]
        dh = (hp - hm) / (2.0 * FD_STEP)
        r = lg - h
        W = 1.0 / var
        cost += 0.5 * float((W * r * r).sum())
        lognorm += float(-0.5 * LOG_2PI * r.size + 0.5 * np.log(W).sum())
        jc = dh          # d r / d theta_cam
        jo = -dh         # d r / d theta_obj
        np.add.at(g, icam + 2, W * r * jc)
        np.add.at(g, iobj + 2, W * r * jo)
        np.add.at(H, (icam + 2, icam + 2), W * jc * jc)
        np.add.at(H, (iobj + 2, iobj + 2), W * jo * jo)
        np.add.at(H, (icam + 2, iobj + 2), W * jc * jo)
        np.add.at(H, (iobj + 2, icam + 2), W * jc * jo)

    if packed.jlp.shape[0]:
        tab = packed.jlp
        ip = tab[:, 0].astype(np.int64)
        inx = tab[:, 1].astype(np.int64)
        icam = tab[:, 2].astype(np.int64)
        iobj = tab[:, 3].astype(np.int64)
        E = tab[:, 4]
        sig = tab[:, 5]
        psi = flat[iobj + 2] - flat[icam + 2]

        def inc(p):
            h1 = tab[:, 6] * np.cos(2.0 * p) + tab[:, 7]
            v1 = np.sqrt(1.0 / (tab[:, 8] * np.cos(p) + tab[:, 9]))
            h2 = tab[:, 10] * np.cos(2.0 * p) + tab[:, 11]
            v2 = np.sqrt(1.0 / (tab[:, 12] * np.cos(p) + tab[:, 13]))
            Phi = h1 / v1 - h2 / v2
            phi = h1 * h1 / v1 - h2 * h2 / v2
            return Phi * E - 0.5 * phi, Phi

        inc0, Phi = inc(psi)
        incp, _ = inc(psi + FD_STEP)
        incm, _ = inc(psi - FD_STEP)
        dinc = (incp - incm) / (2.0 * FD_STEP)
        r = flat[inx] - flat[ip] - inc0
        noise = Phi * Phi * sig + JLP_EPSILON
        W = 1.0 / noise
        cost += 0.5 * float((W * r * r).sum())
        lognorm += float(-0.5 * LOG_2PI * r.size + 0.5 * np.log(W).sum())
        idxs = (ip, inx, icam + 2, iobj + 2)
        jays = (-np.ones_like(r), np.ones_like(r), dinc, -dinc)
        for iu, ju in zip(idxs, jays):
            np.add.at(g, iu, W * r * ju)
            for iv, jv in zip(idxs, jays):
                np.add.at(H, (iu, iv), W * ju * jv)

    return cost, lognorm


def _wrap(values: np.ndarray) -> np.ndarray:
    return np.arctan2(np.sin(values), np.cos(values))
