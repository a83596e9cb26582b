"""Flat factor tables consumed by the linearization backends.

Packing happens once per graph topology; the backends then accumulate the
normal equations from these tables every Gauss-Newton iteration.  Four
numerous factor families get fast-path tables; everything else (grid-model
factors, joint info priors) stays on the generic per-factor path.
"""

from __future__ import annotations

import numpy as np

from ._factors import (
    GaussianInfoFactor,
    GeometricFactor,
    JLPFactor,
    OdometryFactor,
    PriorFactor,
    SemanticFactor,
)


def _is_cosine(model) -> bool:
    from ..clsmodel import CosineModel

    return isinstance(model, CosineModel)


class PackedGraph:
    def __init__(self, values: dict, kinds: dict, factors: list):
        self.slots = {}
        offset = 0
        pose_theta = []
        for key, val in values.items():
            dim = val.size
            self.slots[key] = (offset, dim)
            if kinds[key] == "pose":
                pose_theta.append(offset + 2)
            offset += dim
        self.total_dim = offset
        self.pose_theta_indices = np.array(pose_theta, dtype=np.int64)

        pose_prior_idx, pose_prior_mean, pose_prior_W = [], [], []
        pose_prior_logdet = []
        rel_ia, rel_ib, rel_meas, rel_W, rel_logdet = [], [], [], [], []
        sem_rows = []   # (icam, iobj, lgamma, h_amp, h_off, r_amp, r_off)
        jlp_rows = []   # (ilprev, ilnext, icam, iobj, E, cov, params of both classes)
        self.lin_joint = []  # precompiled joint Gaussian priors
        self.generic = []
        for f in factors:
            if isinstance(f, PriorFactor) and f.kind == "pose":
                pose_prior_idx.append(self.slots[f.key][0])
                pose_prior_mean.append(f.mean)
                pose_prior_W.append(f.W)
                pose_prior_logdet.append(2.0 * f.lognorm + 3.0 * np.log(2.0 * np.pi))
            elif isinstance(f, (OdometryFactor, GeometricFactor)):
                rel_ia.append(self.slots[f.key_a][0])
                rel_ib.append(self.slots[f.key_b][0])
                rel_meas.append(f.measured)
                rel_W.append(f.W)
                rel_logdet.append(2.0 * f.lognorm + 3.0 * np.log(2.0 * np.pi))
            elif isinstance(f, GaussianInfoFactor):
                idx = []
                mean_parts = []
                theta_local = []
                pos = 0
                for key, mean, kind in zip(f.keys_, f.means, f.kinds):
                    off, dim = self.slots[key]
                    idx.extend(range(off, off + dim))
                    mean_parts.append(np.asarray(mean, dtype=float))
                    if kind == "pose":
                        theta_local.append(pos + 2)
                    pos += dim
                flat_mean = np.concatenate(mean_parts)
                idx_arr = np.array(idx, dtype=np.int64)
                self.lin_joint.append(
                    (
                        idx_arr,
                        np.array(theta_local, dtype=np.int64),
                        flat_mean,
                        f.info,
                        f.lognorm,
                        np.ix_(idx_arr, idx_arr),
                    )
                )
            elif isinstance(f, SemanticFactor) and _is_cosine(f.model):
                spec = f.model.classes[f.cls - 1]
                sem_rows.append(
                    (
                        self.slots[f.key_cam][0],
                        self.slots[f.key_obj][0],
                        float(f.lgamma[0]),
                        spec.h_amp,
                        spec.h_off,
                        spec.r_amp,
                        spec.r_off,
                    )
                )
            elif isinstance(f, JLPFactor) and _is_cosine(f.model):
                s1, s2 = f.model.classes
                jlp_rows.append(
                    (
                        self.slots[f.key_lprev][0],
                        self.slots[f.key_lnext][0],
                        self.slots[f.key_cam][0],
                        self.slots[f.key_obj][0],
                        float(f.e_lgamma[0]),
                        float(f.cov_lgamma[0, 0]),
                        s1.h_amp, s1.h_off, s1.r_amp, s1.r_off,
                        s2.h_amp, s2.h_off, s2.r_amp, s2.r_off,
                    )
                )
            else:
                self.generic.append(f)

        self.pose_prior_idx = np.array(pose_prior_idx, dtype=np.int64)
        self.pose_prior_mean = np.array(pose_prior_mean, dtype=float).reshape(-1, 3)
        self.pose_prior_W = np.array(pose_prior_W, dtype=float).reshape(-1, 3, 3)
        self.pose_prior_logdetW = np.array(pose_prior_logdet, dtype=float)

        self.rel_ia = np.array(rel_ia, dtype=np.int64)
        self.rel_ib = np.array(rel_ib, dtype=np.int64)
        self.rel_meas = np.array(rel_meas, dtype=float).reshape(-1, 3)
        self.rel_W = np.array(rel_W, dtype=float).reshape(-1, 3, 3)
        self.rel_logdetW = np.array(rel_logdet, dtype=float)

        self.sem = np.array(sem_rows, dtype=float).reshape(-1, 7)
        self.jlp = np.array(jlp_rows, dtype=float).reshape(-1, 14)
