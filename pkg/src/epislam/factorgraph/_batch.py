"""Batched optimization of structurally identical graphs.

Every multi-hybrid component shares one factor-graph topology at all
times: the same priors, odometry, and geometric factors, with per-component
semantic measurements, class hypotheses, and (after planning compression)
joint Gaussian priors.  This module packs that shared structure once and
runs Levenberg-damped Gauss-Newton over all components as stacked arrays,
writing results back into the individual ``Graph`` objects so that every
per-graph query (marginals, evidence, snapshots) behaves exactly as if
``optimize`` had been called on each graph.
"""

from __future__ import annotations

import numpy as np

from ..errors import OptimizationError
from ._factors import (
    FD_STEP,
    JLP_EPSILON,
    GaussianInfoFactor,
    GeometricFactor,
    OdometryFactor,
    PriorFactor,
    SemanticFactor,
)

LOG_2PI = float(np.log(2.0 * np.pi))
_AX3 = np.arange(3)
_COMPILED = None
_COMPILED_CHECKED = False


def _compiled_batch():
    global _COMPILED, _COMPILED_CHECKED
    if not _COMPILED_CHECKED:
        _COMPILED_CHECKED = True
        import os

        if os.environ.get("EPISLAM_BACKEND", "").strip().lower() != "python":
            try:
                from ._backend_c import accumulate_batch

                _COMPILED = accumulate_batch
            except ImportError:
                _COMPILED = None
    return _COMPILED


def _is_cosine(model) -> bool:
    from ..clsmodel import CosineModel

    return isinstance(model, CosineModel)


class BatchStructure:
    """Shared topology plus per-instance parameter columns."""

    def __init__(self, graphs: list):
        base = graphs[0]
        packed = base._ensure_packed()
        self.slots = packed.slots
        self.total_dim = packed.total_dim
        self.pose_theta_indices = packed.pose_theta_indices
        self.B = len(graphs)
        factors = base.factors

        pp_idx, pp_mean, pp_W, pp_logdet = [], [], [], []
        rel_ia, rel_ib, rel_meas, rel_W, rel_logdet = [], [], [], [], []
        sem_cam, sem_obj = [], []
        sem_lg, sem_params = [], []   # (F, B) and (F, B, 4)
        joints = []                   # (idx, theta_local, grid, means (B,d), infos (B,d,d), ln (B,))
        self.supported = True
        for fi, f in enumerate(factors):
            if isinstance(f, PriorFactor) and f.kind == "pose":
                pp_idx.append(self.slots[f.key][0])
                pp_mean.append(f.mean)
                pp_W.append(f.W)
                pp_logdet.append(2.0 * f.lognorm + 3.0 * LOG_2PI)
            elif isinstance(f, (OdometryFactor, GeometricFactor)):
                rel_ia.append(self.slots[f.key_a][0])
                rel_ib.append(self.slots[f.key_b][0])
                rel_meas.append(f.measured)
                rel_W.append(f.W)
                rel_logdet.append(2.0 * f.lognorm + 3.0 * LOG_2PI)
            elif isinstance(f, SemanticFactor) and _is_cosine(f.model):
                sem_cam.append(self.slots[f.key_cam][0])
                sem_obj.append(self.slots[f.key_obj][0])
                lg_col, par_col = [], []
                for g in graphs:
                    fb = g.factors[fi]
                    spec = fb.model.classes[fb.cls - 1]
                    lg_col.append(float(fb.lgamma[0]))
                    par_col.append((spec.h_amp, spec.h_off, spec.r_amp, spec.r_off))
                sem_lg.append(lg_col)
                sem_params.append(par_col)
            elif isinstance(f, GaussianInfoFactor):
                idx = []
                theta_local = []
                pos = 0
                for key, mean, kind in zip(f.keys_, f.means, f.kinds):
                    off, dim = self.slots[key]
                    idx.extend(range(off, off + dim))
                    if kind == "pose":
                        theta_local.append(pos + 2)
                    pos += dim
                idx = np.array(idx, dtype=np.int64)
                means = np.stack(
                    [np.concatenate(g.factors[fi].means) for g in graphs]
                )
                infos = np.stack([g.factors[fi].info for g in graphs])
                lns = np.array([g.factors[fi].lognorm for g in graphs])
                joints.append(
                    (idx, np.array(theta_local, dtype=np.int64),
                     np.ix_(idx, idx), means, infos, lns)
                )
            else:
                self.supported = False
                return

        self.pp_idx = np.array(pp_idx, dtype=np.int64)
        self.pp_mean = np.array(pp_mean, dtype=float).reshape(-1, 3)
        self.pp_W = np.array(pp_W, dtype=float).reshape(-1, 3, 3)
        self.pp_logdet = np.array(pp_logdet, dtype=float)
        self.rel_ia = np.array(rel_ia, dtype=np.int64)
        self.rel_ib = np.array(rel_ib, dtype=np.int64)
        self.rel_meas = np.array(rel_meas, dtype=float).reshape(-1, 3)
        self.rel_W = np.array(rel_W, dtype=float).reshape(-1, 3, 3)
        self.rel_logdet = np.array(rel_logdet, dtype=float)
        self.sem_cam = np.array(sem_cam, dtype=np.int64)
        self.sem_obj = np.array(sem_obj, dtype=np.int64)
        self.sem_lg = np.array(sem_lg, dtype=float).reshape(len(sem_cam), self.B)
        self.sem_params = np.array(sem_params, dtype=float).reshape(
            len(sem_cam), self.B, 4
        )
        self.joints = joints

    def values_matrix(self, graphs) -> np.ndarray:
        V = np.empty((self.B, self.total_dim))
        for b, g in enumerate(graphs):
            for key, (off, dim) in self.slots.items():
                V[b, off:off + dim] = g._values[key]
        return V

    def linearize(self, V: np.ndarray, sel=None):
        """Normal equations for the instance subset ``sel`` (default: all)."""
        if sel is None:
            sel = np.arange(V.shape[0])
        B, n = V.shape
        H = np.zeros((B, n, n))
        g = np.zeros((B, n))
        cost = np.zeros(B)
        lognorm = np.zeros(B)

        compiled = _compiled_batch()
        if compiled is not None:
            compiled(
                self.pp_idx, self.pp_mean, self.pp_W, self.pp_logdet,
                self.rel_ia, self.rel_ib, self.rel_meas, self.rel_W, self.rel_logdet,
                self.sem_cam, self.sem_obj,
                np.ascontiguousarray(self.sem_lg[:, sel]),
                np.ascontiguousarray(self.sem_params[:, sel, :]),
                V, H, g, cost, lognorm,
            )
            for idx, theta_local, grid, means, infos, lns in self.joints:
                r = V[:, idx] - means[sel]
                if theta_local.size:
                    r[:, theta_local] = np.arctan2(np.sin(r[:, theta_local]),
                                                   np.cos(r[:, theta_local]))
                wr = np.einsum("bij,bj->bi", infos[sel], r)
                cost += 0.5 * np.einsum("bi,bi->b", r, wr)
                lognorm = lognorm + lns[sel]
                g[:, idx] += wr
                H[(slice(None),) + grid] += infos[sel]
            return H, g, cost, lognorm

        if self.pp_idx.size:
            idx = self.pp_idx
            x = V[:, idx[:, None] + _AX3]                      # (B, F, 3)
            r = x - self.pp_mean
            r[..., 2] = np.arctan2(np.sin(r[..., 2]), np.cos(r[..., 2]))
            Wr = np.einsum("fij,bfj->bfi", self.pp_W, r)
            cost += 0.5 * np.einsum("bfi,bfi->b", r, Wr)
            lognorm += float(-1.5 * LOG_2PI * idx.size + 0.5 * self.pp_logdet.sum())
            np.add.at(g, (slice(None), idx[:, None] + _AX3), Wr)
            rows = idx[:, None, None] + _AX3[None, :, None]
            cols = idx[:, None, None] + _AX3[None, None, :]
            np.add.at(H, (slice(None), rows, cols), np.broadcast_to(self.pp_W, (B,) + self.pp_W.shape))

        if self.rel_ia.size:
            ia, ib = self.rel_ia, self.rel_ib
            a = V[:, ia[:, None] + _AX3]
            b_ = V[:, ib[:, None] + _AX3]
            ca, sa = np.cos(a[..., 2]), np.sin(a[..., 2])
            ex, ey = b_[..., 0] - a[..., 0], b_[..., 1] - a[..., 1]
            dx = ca * ex + sa * ey
            dy = -sa * ex + ca * ey
            r = np.stack([dx, dy, b_[..., 2] - a[..., 2]], axis=-1) - self.rel_meas
            r[..., 2] = np.arctan2(np.sin(r[..., 2]), np.cos(r[..., 2]))
            F = ia.size
            Ja = np.zeros((B, F, 3, 3))
            Ja[..., 0, 0] = -ca
            Ja[..., 0, 1] = -sa
            Ja[..., 0, 2] = dy
            Ja[..., 1, 0] = sa
            Ja[..., 1, 1] = -ca
            Ja[..., 1, 2] = -dx
            Ja[..., 2, 2] = -1.0
            Jb = np.zeros((B, F, 3, 3))
            Jb[..., 0, 0] = ca
            Jb[..., 0, 1] = sa
            Jb[..., 1, 0] = -sa
            Jb[..., 1, 1] = ca
            Jb[..., 2, 2] = 1.0
            Wr = np.einsum("fij,bfj->bfi", self.rel_W, r)
            cost += 0.5 * np.einsum("bfi,bfi->b", r, Wr)
            lognorm += float(-1.5 * LOG_2PI * F + 0.5 * self.rel_logdet.sum())
            WJa = np.einsum("fij,bfjk->bfik", self.rel_W, Ja)
            WJb = np.einsum("fij,bfjk->bfik", self.rel_W, Jb)
            np.add.at(g, (slice(None), ia[:, None] + _AX3),
                      np.einsum("bfji,bfj->bfi", Ja, Wr))
            np.add.at(g, (slice(None), ib[:, None] + _AX3),
                      np.einsum("bfji,bfj->bfi", Jb, Wr))
            for iu, Ju in ((ia, Ja), (ib, Jb)):
                for iv, WJv in ((ia, WJa), (ib, WJb)):
                    block = np.einsum("bfji,bfjk->bfik", Ju, WJv)
                    rows = iu[:, None, None] + _AX3[None, :, None]
                    cols = iv[:, None, None] + _AX3[None, None, :]
                    np.add.at(H, (slice(None), rows, cols), block)

        if self.sem_cam.size:
            icam, iobj = self.sem_cam, self.sem_obj
            psi = V[:, iobj + 2] - V[:, icam + 2]              # (B, F)
            params = self.sem_params[:, sel, :]
            amp = params[..., 0].T
            off = params[..., 1].T
            ramp = params[..., 2].T
            roff = params[..., 3].T
            h = amp * np.cos(2.0 * psi) + off
            var = np.sqrt(1.0 / (ramp * np.cos(psi) + roff))
            hp = amp * np.cos(2.0 * (psi + FD_STEP)) + off
            hm = amp * np.cos(2.0 * (psi - FD_STEP)) + off
            dh = (hp - hm) / (2.0 * FD_STEP)
            r = self.sem_lg[:, sel].T - h
            W = 1.0 / var
            cost += 0.5 * (W * r * r).sum(axis=1)
            lognorm_b = -0.5 * LOG_2PI * icam.size + 0.5 * np.log(W).sum(axis=1)
            jc = dh
            jo = -dh
            np.add.at(g, (slice(None), icam + 2), W * r * jc)
            np.add.at(g, (slice(None), iobj + 2), W * r * jo)
            np.add.at(H, (slice(None), icam + 2, icam + 2), W * jc * jc)
            np.add.at(H, (slice(None), iobj + 2, iobj + 2), W * jo * jo)
            np.add.at(H, (slice(None), icam + 2, iobj + 2), W * jc * jo)
            np.add.at(H, (slice(None), iobj + 2, icam + 2), W * jc * jo)
            lognorm = lognorm + lognorm_b

        for idx, theta_local, grid, means, infos, lns in self.joints:
            r = V[:, idx] - means[sel]
            if theta_local.size:
                r[:, theta_local] = np.arctan2(np.sin(r[:, theta_local]),
                                               np.cos(r[:, theta_local]))
            wr = np.einsum("bij,bj->bi", infos[sel], r)
            cost += 0.5 * np.einsum("bi,bi->b", r, wr)
            lognorm = lognorm + lns[sel]
            g[:, idx] += wr
            H[(slice(None),) + grid] += infos[sel]

        if np.isscalar(lognorm) or lognorm.ndim == 0:
            lognorm = np.full(B, float(lognorm))
        return H, g, cost, lognorm


BATCH_DIM_LIMIT = 30


def optimize_batch(graphs: list, max_iter: int = 100, rel_tol: float = 1e-9):
    """Optimize structurally identical graphs together; falls back per-graph.

    Batching pays off for many small graphs (planning rollouts); large
    graphs route to the per-graph compiled backend.  On success each
    graph's values and solution cache match the per-graph optimizer.
    """
    from . import optimize as optimize_single

    if len(graphs) < 4:
        return [optimize_single(g, max_iter=max_iter, rel_tol=rel_tol) for g in graphs]
    structure = BatchStructure(graphs)
    if not structure.supported or structure.total_dim > BATCH_DIM_LIMIT:
        return [optimize_single(g, max_iter=max_iter, rel_tol=rel_tol) for g in graphs]

    B = structure.B
    n = structure.total_dim
    V = structure.values_matrix(graphs)
    H, g, cost, lognorm = structure.linearize(V)
    lam = np.zeros(B)
    active = np.ones(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    eye = np.eye(n)

    for _ in range(max_iter):
        if not active.any():
            break
        iters[active] += 1
        pending = np.flatnonzero(active)
        for _attempt in range(60):
            if pending.size == 0:
                break
            diag = np.maximum(np.einsum("bii->bi", H[pending]), 1e-12)
            damped = H[pending] + lam[pending, None, None] * (diag[:, :, None] * eye)
            try:
                chol = np.linalg.cholesky(damped)
            except np.linalg.LinAlgError:
                lam[pending] = np.maximum(lam[pending] * 10.0, 1e-4)
                continue
            rhs = -g[pending][:, :, None]
            y = np.linalg.solve(chol, rhs)
            delta = np.linalg.solve(np.transpose(chol, (0, 2, 1)), y)[:, :, 0]
            # a vanishing predicted reduction means the quadratic model is
            # already at its optimum: converge without a confirming pass
            predicted = -0.5 * np.einsum("bi,bi->b", g[pending], delta)
            tiny = predicted <= rel_tol * np.maximum(cost[pending], 1.0)
            if tiny.any():
                done = pending[tiny]
                active[done] = False
                pending = pending[~tiny]
                if pending.size == 0:
                    break
                delta = delta[~tiny]
            V_trial = V[pending] + delta
            H_t, g_t, cost_t, lognorm_t = structure.linearize(V_trial, pending)
            ok = cost_t <= cost[pending] * (1.0 + 1e-12) + 1e-15
            if ok.any():
                sel = pending[ok]
                V[sel] = V_trial[ok]
                H[sel] = H_t[ok]
                g[sel] = g_t[ok]
                improvement = cost[sel] - cost_t[ok]
                converged_now = improvement <= rel_tol * np.maximum(cost_t[ok], 1.0)
                cost[sel] = cost_t[ok]
                lognorm[sel] = lognorm_t[ok]
                lam[sel] = np.where(lam[sel] / 10.0 < 1e-12, 0.0, lam[sel] / 10.0)
                active[sel[converged_now]] = False
            failed = pending[~ok]
            lam[failed] = np.maximum(lam[failed] * 10.0, 1e-4)
            pending = failed
        else:
            raise OptimizationError("batched damping failed to find an acceptable step")

    from . import OptimizeReport

    theta = structure.pose_theta_indices
    if theta.size:
        V[:, theta] = np.arctan2(np.sin(V[:, theta]), np.cos(V[:, theta]))
    reports = []
    for b, graph in enumerate(graphs):
        for key, (off, dim) in structure.slots.items():
            graph._values[key] = V[b, off:off + dim].copy()
        graph._solution_cache = (V[b].copy(), H[b], float(cost[b]), float(lognorm[b]))
        reports.append(OptimizeReport(bool(~active[b]), int(iters[b]), float(cost[b]),
                                      float("nan"), float(lam[b])))
    return reports


def log_evidence_batch(graphs: list) -> np.ndarray:
    """Laplace log-partition per graph from the cached solutions."""
    from . import _solution

    out = np.empty(len(graphs))
    n = None
    Hs = []
    metas = []
    for b, g in enumerate(graphs):
        flat, H, cost, lognorm = _solution(g)
        Hs.append(H)
        metas.append((flat.size, cost, lognorm))
        if n is None:
            n = H.shape[0]
        elif H.shape[0] != n:
            n = -1
    if n == -1:
        from . import log_evidence

        return np.array([log_evidence(g) for g in graphs])
    chol = np.linalg.cholesky(np.stack(Hs))
    logdets = 2.0 * np.log(np.einsum("bii->bi", chol)).sum(axis=1)
    for b, (d, cost, lognorm) in enumerate(metas):
        out[b] = lognorm - cost + 0.5 * (d * LOG_2PI - logdets[b])
    return out
