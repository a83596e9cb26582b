"""Viewpoint-dependent classifier uncertainty models.

A model maps (class c, relative pose) to the Gaussian parameters of the
logit-space classifier output: mean ``h_c`` and covariance ``Sigma_c``.
Two backings exist:

    - parametric-cosine: the two-class simulation family, with per-class
      cosine curves for the mean and for a root-information parameter R,
      and covariance sqrt(1/R) (treated as a variance);
    - grid: per-class (mean, covariance) tables over viewpoint-angle nodes,
      linearly interpolated with wraparound.

Both backings depend on the relative pose only through the viewpoint angle
``psi`` (RelPose.dpsi).  The log-likelihood-ratio construction (Phi, phi)
used by the joint-logit engine is built from these per-class parameters.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .geometry import RelPose, normalize_angle
from .simplex import GaussianParams, LOG_2PI

GRID_RIDGE = 1e-9
DEFAULT_FIT_KAPPA = 0.005


class ClassifierUncertaintyModel:
    """Interface shared by the cosine and grid backings."""

    num_classes: int
    lemma1_ok: bool  # all class covariances identical at every viewpoint

    def eval_psi(self, c: int, psi: np.ndarray):
        """Vectorized (means, covs) over an array of viewpoint angles."""
        raise NotImplementedError

    def eval(self, c: int, x: RelPose) -> GaussianParams:
        if not 1 <= c <= self.num_classes:
            raise InputError(f"class {c} out of range 1..{self.num_classes}")
        means, covs = self.eval_psi(c, np.array([x.dpsi]))
        return GaussianParams(means[0], covs[0])

    def to_json(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class CosineClassSpec:
    """Per-class cosine parameters: mean amp/offset and root-information amp/offset."""

    h_amp: float
    h_off: float
    r_amp: float
    r_off: float

    def __post_init__(self):
        if self.r_off - abs(self.r_amp) <= 0.0:
            raise ConfigurationError("root-information must stay positive for all psi")


class CosineModel(ClassifierUncertaintyModel):
    """Two-class parametric model: h_c = amp cos(2 psi) + off, R_c = amp cos(psi) + off.

    The covariance parameter is sqrt(1 / R_c), read as a variance.  When both
    classes share the same R the covariance functions coincide and the
    log-likelihood ratio is exactly Gaussian.
    """

    def __init__(self, classes: list[CosineClassSpec]):
        if len(classes) != 2:
            raise ConfigurationError("the cosine backing is a two-class family")
        self.num_classes = 2
        self.classes = list(classes)
        self.lemma1_ok = (
            classes[0].r_amp == classes[1].r_amp and classes[0].r_off == classes[1].r_off
        )

    def eval_psi(self, c: int, psi: np.ndarray):
        spec = self.classes[c - 1]
        psi = np.asarray(psi, dtype=float)
        h = spec.h_amp * np.cos(2.0 * psi) + spec.h_off
        r = spec.r_amp * np.cos(psi) + spec.r_off
        var = np.sqrt(1.0 / r)
        return h[:, None], var[:, None, None]

    def to_json(self) -> str:
        return json.dumps(
            {
                "type": "cosine",
                "m": self.num_classes,
                "classes": [
                    {"h_amp": s.h_amp, "h_off": s.h_off, "r_amp": s.r_amp, "r_off": s.r_off}
                    for s in self.classes
                ],
            }
        )


def model_one() -> CosineModel:
    """Shared-covariance simulation model (exact log-ratio Gaussianity)."""
    return CosineModel(
        [CosineClassSpec(0.5, 0.5, 0.6, 1.4), CosineClassSpec(-0.5, -0.5, 0.6, 1.4)]
    )


def model_two() -> CosineModel:
    """Opposed-covariance simulation model; the shared-covariance condition fails."""
    return CosineModel(
        [CosineClassSpec(0.3, 0.3, 0.6, 1.4), CosineClassSpec(-0.3, -0.3, -0.6, 1.4)]
    )


class GridModel(ClassifierUncertaintyModel):
    """Per-class lookup tables over viewpoint-angle nodes, wrapped linearly."""

    def __init__(self, psi_nodes, means, covs):
        # means: (m, n_nodes, m-1); covs: (m, n_nodes, m-1, m-1)
        self.psi_nodes = np.asarray(psi_nodes, dtype=float)
        if np.any(np.diff(self.psi_nodes) <= 0.0):
            raise ConfigurationError("grid nodes must be strictly increasing")
        self.means = np.asarray(means, dtype=float)
        self.covs = np.asarray(covs, dtype=float)
        self.num_classes = self.means.shape[0]
        d = self.num_classes - 1
        if self.means.shape[2] != d or self.covs.shape[2:] != (d, d):
            raise ConfigurationError("grid table dimensions do not match class count")
        self.lemma1_ok = bool(
            np.allclose(self.covs, self.covs[:1], atol=1e-12)
        )

    def _weights(self, psi: np.ndarray):
        nodes = self.psi_nodes
        span = 2.0 * np.pi
        # position of each query within the circular node sequence
        rel = np.mod(psi - nodes[0], span)
        offsets = np.mod(nodes - nodes[0], span)
        idx = np.searchsorted(offsets, rel, side="right") - 1
        nxt = (idx + 1) % nodes.size
        seg = np.where(idx + 1 < nodes.size, offsets[(idx + 1) % nodes.size] - offsets[idx],
                       span - offsets[idx])
        t = np.where(seg > 0.0, (rel - offsets[idx]) / np.where(seg > 0.0, seg, 1.0), 0.0)
        return idx, nxt, t

    def eval_psi(self, c: int, psi: np.ndarray):
        psi = np.asarray([normalize_angle(p) for p in np.atleast_1d(psi)], dtype=float)
        idx, nxt, t = self._weights(psi)
        mt = self.means[c - 1]
        ct = self.covs[c - 1]
        means = (1.0 - t)[:, None] * mt[idx] + t[:, None] * mt[nxt]
        covs = (1.0 - t)[:, None, None] * ct[idx] + t[:, None, None] * ct[nxt]
        covs = covs + GRID_RIDGE * np.eye(self.num_classes - 1)
        return means, covs

    def to_json(self) -> str:
        return json.dumps(
            {
                "type": "grid",
                "m": self.num_classes,
                "psi_nodes": self.psi_nodes.tolist(),
                "means": self.means.tolist(),
                "covs": self.covs.tolist(),
            }
        )


def model_from_json(text: str) -> ClassifierUncertaintyModel:
    doc = json.loads(text)
    if doc["type"] == "cosine":
        return CosineModel([CosineClassSpec(**entry) for entry in doc["classes"]])
    if doc["type"] == "grid":
        return GridModel(doc["psi_nodes"], doc["means"], doc["covs"])
    raise ConfigurationError(f"unknown model type {doc['type']!r}")


def sample_cloud(
    model: ClassifierUncertaintyModel,
    c: int,
    x: RelPose,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw ``size`` independent logit vectors from the class-c model at x."""
    if size < 2:
        raise InputError("cloud size must be at least 2")
    params = model.eval(c, x)
    chol = np.linalg.cholesky(params.cov)
    return params.mean + rng.standard_normal((size, params.dim)) @ chol.T


def semantic_loglik(model: ClassifierUncertaintyModel, c: int, x: RelPose, lg) -> float:
    """Gaussian log-density of a logit observation under the class-c model."""
    params = model.eval(c, x)
    diff = np.asarray(lg, dtype=float) - params.mean
    sign, logdet = np.linalg.slogdet(params.cov)
    maha = float(diff @ np.linalg.solve(params.cov, diff))
    return -0.5 * (params.dim * LOG_2PI + logdet + maha)


def _class_stats(model: ClassifierUncertaintyModel, x: RelPose):
    means, infos = [], []
    for c in range(1, model.num_classes + 1):
        p = model.eval(c, x)
        means.append(p.mean)
        infos.append(np.linalg.inv(p.cov))
    return means, infos


def phi_matrix(model: ClassifierUncertaintyModel, x: RelPose) -> np.ndarray:
    """Row i: h_i^T Sigma_i^-1 - h_m^T Sigma_m^-1 evaluated at x."""
    means, infos = _class_stats(model, x)
    last = means[-1] @ infos[-1]
    return np.vstack([means[i] @ infos[i] - last for i in range(model.num_classes - 1)])


def phi_vector(model: ClassifierUncertaintyModel, x: RelPose) -> np.ndarray:
    """Entry i: h_i^T Sigma_i^-1 h_i - h_m^T Sigma_m^-1 h_m evaluated at x."""
    means, infos = _class_stats(model, x)
    last = float(means[-1] @ infos[-1] @ means[-1])
    return np.array(
        [float(means[i] @ infos[i] @ means[i]) - last for i in range(model.num_classes - 1)]
    )


def loglik_ratio_vector(model: ClassifierUncertaintyModel, x: RelPose, lg) -> np.ndarray:
    """Entry i: semantic_loglik(c=i) - semantic_loglik(c=m) at the observation."""
    ref = semantic_loglik(model, model.num_classes, x, lg)
    return np.array(
        [semantic_loglik(model, c, x, lg) - ref for c in range(1, model.num_classes)]
    )


@dataclass(frozen=True)
class TrainingSet:
    """Per-class training records: (relative pose, cloud of logit vectors)."""

    records: dict

    def __post_init__(self):
        for cls, entries in self.records.items():
            for rel, cloud in entries:
                if np.atleast_2d(np.asarray(cloud)).shape[0] < 2:
                    raise InputError(f"training cloud for class {cls} has fewer than 2 members")


def _log_chol_pack(cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    d = cov.shape[0]
    params = []
    for i in range(d):
        for j in range(i + 1):
            params.append(np.log(chol[i, i]) if i == j else chol[i, j])
    return np.array(params)


def _log_chol_unpack(params: np.ndarray, d: int) -> np.ndarray:
    chol = np.zeros((d, d))
    k = 0
    for i in range(d):
        for j in range(i + 1):
            chol[i, j] = np.exp(params[k]) if i == j else params[k]
            k += 1
    return chol @ chol.T


def pairwise_frobenius(covs) -> float:
    """Sum over non-reference classes of Tr((Si^-1 - Sm^-1)(Si^-1 - Sm^-1)^T)."""
    infos = [np.linalg.inv(c) for c in covs]
    total = 0.0
    for i in range(len(covs) - 1):
        diff = infos[i] - infos[-1]
        total += float(np.trace(diff @ diff.T))
    return total


def _node_objective(params, sample_covs, d, m, kappa):
    covs = [
        _log_chol_unpack(params[k * (d * (d + 1) // 2):(k + 1) * (d * (d + 1) // 2)], d)
        for k in range(m)
    ]
    mse = sum(float(((c - s) ** 2).sum()) / d**2 for c, s in zip(covs, sample_covs))
    return mse + kappa * pairwise_frobenius(covs)


def _fit_node_covariances(sample_covs, kappa, iters=400, step=0.02):
    m = len(sample_covs)
    d = sample_covs[0].shape[0]
    blk = d * (d + 1) // 2
    params = np.concatenate([_log_chol_pack(c) for c in sample_covs])
    if kappa == 0.0:
        return [c.copy() for c in sample_covs]
    # Adam on a finite-difference gradient; dimensions here are tiny.
    m1 = np.zeros_like(params)
    m2 = np.zeros_like(params)
    eps = 1e-6
    best = params.copy()
    best_val = _node_objective(params, sample_covs, d, m, kappa)
    for t in range(1, iters + 1):
        grad = np.zeros_like(params)
        for k in range(params.size):
            bump = np.zeros_like(params)
            bump[k] = eps
            grad[k] = (
                _node_objective(params + bump, sample_covs, d, m, kappa)
                - _node_objective(params - bump, sample_covs, d, m, kappa)
            ) / (2.0 * eps)
        m1 = 0.9 * m1 + 0.1 * grad
        m2 = 0.999 * m2 + 0.001 * grad**2
        params = params - step * (m1 / (1.0 - 0.9**t)) / (
            np.sqrt(m2 / (1.0 - 0.999**t)) + 1e-12
        )
        val = _node_objective(params, sample_covs, d, m, kappa)
        if val < best_val:
            best_val = val
            best = params.copy()
    return [
        _log_chol_unpack(best[k * blk:(k + 1) * blk], d) for k in range(m)
    ]


def fit_grid_model(data: TrainingSet, kappa: float = DEFAULT_FIT_KAPPA) -> GridModel:
    """Fit a grid model from per-class viewpoint clouds.

    Node means are cloud means; node covariances minimize the summed
    elementwise MSE to the sample covariances plus ``kappa`` times the
    pairwise Frobenius distance between inverse covariances, optimized over
    log-Cholesky factors with a fixed iteration budget.
    """
    if kappa < 0.0:
        raise ConfigurationError("kappa must be nonnegative")
    classes = sorted(data.records)
    m = len(classes)
    d = m - 1
    node_set = sorted({round(normalize_angle(rel.dpsi), 12) for entries in data.records.values()
                       for rel, _ in entries})
    nodes = np.array(node_set)
    means = np.zeros((m, nodes.size, d))
    covs = np.zeros((m, nodes.size, d, d))
    sample_tables = {}
    for ci, cls in enumerate(classes):
        table = {}
        for rel, cloud in data.records[cls]:
            table[round(normalize_angle(rel.dpsi), 12)] = np.atleast_2d(np.asarray(cloud, float))
        sample_tables[ci] = table

    filled = np.zeros((m, nodes.size), dtype=bool)
    raw_covs = np.zeros_like(covs)
    for ci in range(m):
        for ni, node in enumerate(node_set):
            cloud = sample_tables[ci].get(node)
            if cloud is None:
                continue
            means[ci, ni] = cloud.mean(axis=0)
            centered = cloud - means[ci, ni]
            raw_covs[ci, ni] = centered.T @ centered / (cloud.shape[0] - 1) + GRID_RIDGE * np.eye(d)
            filled[ci, ni] = True

    for ci in range(m):
        if not filled[ci].any():
            raise InputError(f"class {classes[ci]} has no training data")
        for ni in range(nodes.size):
            if not filled[ci, ni]:
                warnings.warn(
                    f"no data for class {classes[ci]} at node {node_set[ni]:.3f}; "
                    "interpolating from neighbors",
                    RuntimeWarning,
                )
                good = np.flatnonzero(filled[ci])
                nearest = good[np.argmin(np.abs(nodes[good] - nodes[ni]))]
                means[ci, ni] = means[ci, nearest]
                raw_covs[ci, ni] = raw_covs[ci, nearest]

    for ni in range(nodes.size):
        fitted = _fit_node_covariances([raw_covs[ci, ni] for ci in range(m)], kappa)
        for ci in range(m):
            covs[ci, ni] = fitted[ci]
    return GridModel(nodes, means, covs)
