"""Gaussian nonlinear least-squares over poses and logit-class-probability chains.

Variables are SE(2) poses (3 local coordinates, angle wrapped) or plain
vectors.  Factors contribute quadratic costs 0.5 * r^T W r with W the
inverse measurement covariance; optimization is Levenberg-damped
Gauss-Newton on dense normal equations (graphs here stay desk-scale).

Linearization is the hot loop: factors are packed once into flat tables
and accumulated by a backend selected at import (compiled extension when
available, vectorized NumPy otherwise).  See ``kernels``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError as SciLinAlgError

from ..errors import ConfigurationError, GaugeError, InputError, OptimizationError
from ..geometry import normalize_angle
from ..simplex import LOG_2PI
from ._factors import (
    Factor,
    GaussianInfoFactor,
    GeometricFactor,
    JLPFactor,
    OdometryFactor,
    PriorFactor,
    SemanticFactor,
    rel_jacobians,
    rel_predict,
)
from ._pack import PackedGraph
from .kernels import backend_name, get_backend

__all__ = [
    "Graph",
    "MarginalGaussian",
    "OptimizeReport",
    "PriorFactor",
    "OdometryFactor",
    "GeometricFactor",
    "SemanticFactor",
    "JLPFactor",
    "GaussianInfoFactor",
    "robot_key",
    "object_key",
    "lambda_key",
    "optimize",
    "marginal",
    "log_evidence",
    "marginalize_lambda_history",
    "backend_name",
]


def robot_key(k: int):
    return ("x", k)


def object_key(oid: int):
    return ("o", oid)


def lambda_key(oid: int, seq: int):
    return ("l", oid, seq)


@dataclass(frozen=True)
class MarginalGaussian:
    """Joint Gaussian over the stacked local coordinates of selected keys."""

    keys: tuple
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class OptimizeReport:
    converged: bool
    iterations: int
    cost: float
    initial_cost: float
    damping: float


class Graph:
    """A factor graph with current linearization estimates."""

    def __init__(self):
        self._values: dict = {}
        self._kinds: dict = {}
        self._factors: list[Factor] = []
        self._packed: PackedGraph | None = None
        self._solution_cache = None  # (flat, H, cost, lognorm) at last optimum

    # -- construction -------------------------------------------------

    def add_variable(self, key, kind: str, initial) -> None:
        if key in self._values:
            raise InputError(f"variable {key} already exists")
        if kind not in ("pose", "vec"):
            raise InputError(f"unknown variable kind {kind!r}")
        self._values[key] = np.array(initial, dtype=float).copy()
        self._kinds[key] = kind
        self._invalidate()

    def add_factor(self, factor: Factor) -> None:
        for key in factor.keys:
            if key not in self._values:
                raise InputError(f"factor references missing variable {key}")
        self._factors.append(factor)
        self._invalidate()

    def has_variable(self, key) -> bool:
        return key in self._values

    def value(self, key) -> np.ndarray:
        return self._values[key].copy()

    def set_value(self, key, value) -> None:
        self._values[key] = np.array(value, dtype=float).copy()
        self._solution_cache = None

    @property
    def variables(self):
        return list(self._values)

    @property
    def factors(self):
        return list(self._factors)

    def kind(self, key) -> str:
        return self._kinds[key]

    def clone(self) -> "Graph":
        g = Graph.__new__(Graph)
        g._values = {k: v.copy() for k, v in self._values.items()}
        g._kinds = dict(self._kinds)
        g._factors = list(self._factors)
        g._packed = None
        g._solution_cache = None
        return g

    def _invalidate(self):
        self._packed = None
        self._solution_cache = None

    # -- linearization ------------------------------------------------

    def _ensure_packed(self) -> PackedGraph:
        if self._packed is None:
            self._packed = PackedGraph(self._values, self._kinds, self._factors)
        return self._packed

    def flat_values(self) -> np.ndarray:
        packed = self._ensure_packed()
        flat = np.empty(packed.total_dim)
        for key, (off, dim) in packed.slots.items():
            flat[off:off + dim] = self._values[key]
        return flat

    def _write_back(self, flat: np.ndarray) -> None:
        packed = self._ensure_packed()
        if packed.pose_theta_indices.size:
            idx = packed.pose_theta_indices
            flat[idx] = np.arctan2(np.sin(flat[idx]), np.cos(flat[idx]))
        for key, (off, dim) in packed.slots.items():
            self._values[key] = flat[off:off + dim].copy()

    def linearize(self, flat: np.ndarray):
        """Dense normal equations at ``flat``: (H, g, cost, lognorm)."""
        packed = self._ensure_packed()
        n = packed.total_dim
        H = np.zeros((n, n))
        g = np.zeros(n)
        cost, lognorm = get_backend().accumulate(packed, flat, H, g)
        for idx, theta_local, mean, info, ln, grid in packed.lin_joint:
            r = flat[idx] - mean
            if theta_local.size:
                r[theta_local] = np.arctan2(np.sin(r[theta_local]), np.cos(r[theta_local]))
            wr = info @ r
            cost += 0.5 * float(r @ wr)
            lognorm += ln
            g[idx] += wr
            H[grid] += info
        for factor in packed.generic:
            c, ln = _accumulate_generic(packed, factor, flat, H, g)
            cost += c
            lognorm += ln
        return H, g, cost, lognorm

    def to_document(self) -> dict:
        """Debug dump: variables, factor summaries, current cost."""
        flat = self.flat_values()
        _, _, cost, _ = self.linearize(flat)
        return {
            "variables": {str(k): self._values[k].tolist() for k in self._values},
            "factors": [type(f).__name__ + str(tuple(map(str, f.keys))) for f in self._factors],
            "cost": cost,
        }


def _accumulate_generic(packed, factor, flat, H, g):
    vals = {key: flat[slice(*_span(packed, key))] for key in factor.keys}
    r, jacs, W, lognorm = factor.linearize(vals)
    cost = 0.5 * float(r @ W @ r)
    wr = W @ r
    items = list(jacs.items())
    for key_i, J_i in items:
        oi, di = packed.slots[key_i]
        g[oi:oi + di] += J_i.T @ wr
        for key_j, J_j in items:
            oj, dj = packed.slots[key_j]
            H[oi:oi + di, oj:oj + dj] += J_i.T @ W @ J_j
    return cost, lognorm


def _span(packed, key):
    off, dim = packed.slots[key]
    return off, off + dim


def _retract(packed, flat, delta):
    # angles are left unwrapped here; residuals wrap internally and
    # _write_back canonicalizes the stored state
    return flat + delta


def optimize(graph: Graph, max_iter: int = 100, rel_tol: float = 1e-9) -> OptimizeReport:
    """Levenberg-damped Gauss-Newton to convergence of the relative cost change."""
    packed = graph._ensure_packed()
    flat = graph.flat_values()
    H, g, cost, lognorm = graph.linearize(flat)
    initial_cost = cost
    lam = 0.0
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        accepted = False
        for _attempt in range(60):
            damped = H if lam == 0.0 else H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                chol = cho_factor(damped, lower=True, check_finite=False)
            except (SciLinAlgError, np.linalg.LinAlgError):
                lam = max(lam * 10.0, 1e-4)
                continue
            delta = cho_solve(chol, -g, check_finite=False)
            predicted = -0.5 * float(g @ delta)
            if predicted <= rel_tol * max(cost, 1.0):
                converged = True
                accepted = False
                break
            new_flat = _retract(packed, flat, delta)
            new_H, new_g, new_cost, new_lognorm = graph.linearize(new_flat)
            if new_cost <= cost * (1.0 + 1e-12) + 1e-15:
                accepted = True
                break
            lam = max(lam * 10.0, 1e-4)
        if not accepted:
            if converged:
                break
            raise OptimizationError(
                f"no acceptable damped step (cost={cost:.6g}, damping={lam:.3g})"
            )
        improvement = cost - new_cost
        flat, H, g, cost, lognorm = new_flat, new_H, new_g, new_cost, new_lognorm
        lam /= 10.0
        if lam < 1e-12:
            lam = 0.0
        if improvement <= rel_tol * max(cost, 1.0):
            converged = True
            break
    graph._write_back(flat)
    graph._solution_cache = (flat, H, cost, lognorm)
    return OptimizeReport(converged, iterations, cost, initial_cost, lam)




def _solution(graph: Graph):
    if graph._solution_cache is None:
        flat = graph.flat_values()
        H, g, cost, lognorm = graph.linearize(flat)
        graph._solution_cache = (flat, H, cost, lognorm)
    return graph._solution_cache


def marginal(graph: Graph, keys: Iterable) -> MarginalGaussian:
    """Gaussian marginal over ``keys`` at the current linearization point."""
    keys = tuple(keys)
    packed = graph._ensure_packed()
    flat, H, _, _ = _solution(graph)
    spans = [_span(packed, k) for k in keys]
    cols = np.concatenate([np.arange(a, b) for a, b in spans])
    try:
        chol = cho_factor(H, lower=True, check_finite=False)
    except (SciLinAlgError, np.linalg.LinAlgError) as exc:
        raise GaugeError("information matrix is singular; add priors") from exc
    E = np.zeros((H.shape[0], cols.size))
    E[cols, np.arange(cols.size)] = 1.0
    cov = E.T @ cho_solve(chol, E, check_finite=False)
    cov = 0.5 * (cov + cov.T)
    mean = flat[cols]
    return MarginalGaussian(keys, mean, cov)


def log_evidence(graph: Graph) -> float:
    """Laplace log-partition of the graph posterior; exact for linear factors."""
    flat, H, cost, lognorm = _solution(graph)
    try:
        chol = cho_factor(H, lower=True, check_finite=False)
    except (SciLinAlgError, np.linalg.LinAlgError) as exc:
        raise GaugeError("information matrix is singular; add priors") from exc
    logdet = 2.0 * float(np.log(np.diag(chol[0])).sum())
    d = flat.size
    return lognorm - cost + 0.5 * (d * LOG_2PI - logdet)


def marginalize_lambda_history(graph: Graph, oid: int, keep_latest: bool = True) -> None:
    """Schur-eliminate all but the newest logit-chain node of one object."""
    if not keep_latest:
        return
    lam_keys = sorted(
        (k for k in graph.variables if k[0] == "l" and k[1] == oid), key=lambda k: k[2]
    )
    if len(lam_keys) < 2:
        return
    elim = lam_keys[:-1]
    _eliminate(graph, elim)


def _eliminate(graph: Graph, elim_keys) -> None:
    elim_set = set(elim_keys)
    adjacent = [f for f in graph._factors if any(k in elim_set for k in f.keys)]
    separator = []
    for f in adjacent:
        for k in f.keys:
            if k not in elim_set and k not in separator:
                separator.append(k)
    local_keys = list(elim_keys) + separator
    dims = [graph._values[k].size for k in local_keys]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    n = offsets[-1]
    index = {k: (offsets[i], dims[i]) for i, k in enumerate(local_keys)}
    H = np.zeros((n, n))
    g = np.zeros(n)
    vals = {k: graph._values[k] for k in local_keys}
    for f in adjacent:
        r, jacs, W, _ = f.linearize({k: vals[k] for k in f.keys})
        wr = W @ r
        items = list(jacs.items())
        for ki, Ji in items:
            oi, di = index[ki]
            g[oi:oi + di] += Ji.T @ wr
            for kj, Jj in items:
                oj, dj = index[kj]
                H[oi:oi + di, oj:oj + dj] += Ji.T @ W @ Jj
    ne = sum(graph._values[k].size for k in elim_keys)
    Hee, Hes, Hse, Hss = H[:ne, :ne], H[:ne, ne:], H[ne:, :ne], H[ne:, ne:]
    ge, gs = g[:ne], g[ne:]
    try:
        sol = np.linalg.solve(Hee, np.hstack([Hes, ge[:, None]]))
    except np.linalg.LinAlgError as exc:
        raise GaugeError("eliminated block is singular") from exc
    info = Hss - Hse @ sol[:, :-1]
    info = 0.5 * (info + info.T)
    g_marg = gs - Hse @ sol[:, -1]

    # separator variables that received essentially no information from the
    # eliminated clique (e.g. poses at symmetric viewpoints) are dropped
    # from the marginal factor rather than carried as singular dimensions
    diag = np.diag(info)
    scale = max(float(diag.max()), 1.0)
    kept_keys = []
    kept_dims = []
    for k in separator:
        off, dim = index[k]
        local = slice(off - ne, off - ne + dim)
        if np.max(diag[local]) > 1e-9 * scale:
            kept_keys.append(k)
            kept_dims.extend(range(local.start, local.stop))
    if not kept_keys:
        graph._factors = [f for f in graph._factors if f not in adjacent]
        for k in elim_keys:
            del graph._values[k]
            del graph._kinds[k]
        graph._invalidate()
        return
    kept_dims = np.array(kept_dims, dtype=np.int64)
    info = info[np.ix_(kept_dims, kept_dims)]
    info = info + 1e-12 * scale * np.eye(kept_dims.size)
    g_marg = g_marg[kept_dims]
    try:
        shift = np.linalg.solve(info, g_marg)
    except np.linalg.LinAlgError as exc:
        raise GaugeError("separator information is singular") from exc
    means = []
    pos = 0
    for k in kept_keys:
        dim = graph._values[k].size
        base = graph._values[k] - shift[pos:pos + dim]
        if graph._kinds[k] == "pose":
            base[2] = normalize_angle(base[2])
        means.append(base)
        pos += dim
    graph._factors = [f for f in graph._factors if f not in adjacent]
    for k in elim_keys:
        del graph._values[k]
        del graph._kinds[k]
    graph._factors.append(
        GaussianInfoFactor(tuple(kept_keys), tuple(means), info,
                           tuple(graph._kinds[k] for k in kept_keys))
    )
    graph._invalidate()
