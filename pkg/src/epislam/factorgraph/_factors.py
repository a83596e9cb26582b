"""Factor types and their reference linearizations.

Every factor exposes ``linearize(vals) -> (r, {key: J}, W, lognorm)`` where
``vals`` maps each of its keys to the current local coordinates, ``W`` is
the information (inverse covariance) of the residual, and ``lognorm`` is
the Gaussian normalizer term ``-n/2 log 2pi + 1/2 log|W|`` used by the
evidence computation.  The packed backends reimplement the numerous factor
types; these methods remain the semantic reference and serve model
backings the fast paths do not cover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..geometry import RelPose, normalize_angle
from ..simplex import LOG_2PI

FD_STEP = 1e-6
JLP_EPSILON = 1e-6


def _info_and_lognorm(cov: np.ndarray):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    W = np.linalg.inv(cov)
    sign, logdet = np.linalg.slogdet(W)
    if sign <= 0:
        raise ConfigurationError("factor covariance must be positive definite")
    n = cov.shape[0]
    return W, -0.5 * n * LOG_2PI + 0.5 * logdet


def _cache_info(factor, cov: np.ndarray) -> None:
    # factors are immutable and shared across graph clones; invert once
    W, lognorm = _info_and_lognorm(cov)
    object.__setattr__(factor, "W", W)
    object.__setattr__(factor, "lognorm", lognorm)


def rel_predict(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """between() on raw [x, y, theta] arrays."""
    ca, sa = np.cos(a[2]), np.sin(a[2])
    ex, ey = b[0] - a[0], b[1] - a[1]
    return np.array([ca * ex + sa * ey, -sa * ex + ca * ey, normalize_angle(b[2] - a[2])])


def rel_jacobians(a: np.ndarray, b: np.ndarray):
    ca, sa = np.cos(a[2]), np.sin(a[2])
    ex, ey = b[0] - a[0], b[1] - a[1]
    dx = ca * ex + sa * ey
    dy = -sa * ex + ca * ey
    Ja = np.array([[-ca, -sa, dy], [sa, -ca, -dx], [0.0, 0.0, -1.0]])
    Jb = np.array([[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]])
    return Ja, Jb


class Factor:
    keys: tuple = ()

    def linearize(self, vals):
        raise NotImplementedError


@dataclass(frozen=True)
class PriorFactor(Factor):
    key: object
    mean: np.ndarray
    cov: np.ndarray
    kind: str = "pose"  # wraps the angle residual when "pose"

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        _cache_info(self, self.cov)

    @property
    def keys(self):
        return (self.key,)

    def linearize(self, vals):
        x = vals[self.key]
        r = x - self.mean
        if self.kind == "pose":
            r = r.copy()
            r[2] = normalize_angle(r[2])
        return r, {self.key: np.eye(x.size)}, self.W, self.lognorm


@dataclass(frozen=True)
class _RelativeFactor(Factor):
    """Shared machinery: residual between(pose_a, pose_b) - measured."""

    key_a: object
    key_b: object
    measured: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "measured", np.asarray(self.measured, dtype=float))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        _cache_info(self, self.cov)

    @property
    def keys(self):
        return (self.key_a, self.key_b)

    def linearize(self, vals):
        a, b = vals[self.key_a], vals[self.key_b]
        r = rel_predict(a, b) - self.measured
        r[2] = normalize_angle(r[2])
        Ja, Jb = rel_jacobians(a, b)
        return r, {self.key_a: Ja, self.key_b: Jb}, self.W, self.lognorm


@dataclass(frozen=True)
class OdometryFactor(_RelativeFactor):
    """Relative-pose constraint from a commanded action between consecutive poses."""


@dataclass(frozen=True)
class GeometricFactor(_RelativeFactor):
    """Relative-pose observation of an object from a camera pose."""


@dataclass(frozen=True)
class SemanticFactor(Factor):
    """Logit-space classifier observation under one class hypothesis.

    Residual lgamma - h_c(x_rel); the noise is the model covariance at the
    current relative pose, re-evaluated every linearization.
    """

    key_cam: object
    key_obj: object
    cls: int
    lgamma: np.ndarray
    model: object

    def __post_init__(self):
        object.__setattr__(self, "lgamma", np.atleast_1d(np.asarray(self.lgamma, dtype=float)))

    @property
    def keys(self):
        return (self.key_cam, self.key_obj)

    def _mean_at(self, cam, obj):
        rel = rel_predict(cam, obj)
        params = self.model.eval(self.cls, RelPose(rel[0], rel[1], rel[2]))
        return params

    def linearize(self, vals):
        cam, obj = vals[self.key_cam], vals[self.key_obj]
        params = self._mean_at(cam, obj)
        r = self.lgamma - params.mean
        d = r.size
        Jc = np.zeros((d, 3))
        Jo = np.zeros((d, 3))
        # central differences of h through the relative pose
        for which, J in ((0, Jc), (1, Jo)):
            for col in range(3):
                plus = [cam.copy(), obj.copy()]
                minus = [cam.copy(), obj.copy()]
                plus[which][col] += FD_STEP
                minus[which][col] -= FD_STEP
                hp = self._mean_at(plus[0], plus[1]).mean
                hm = self._mean_at(minus[0], minus[1]).mean
                J[:, col] = -(hp - hm) / (2.0 * FD_STEP)
        W, lognorm = _info_and_lognorm(params.cov)
        return r, {self.key_cam: Jc, self.key_obj: Jo}, W, lognorm


@dataclass(frozen=True)
class JLPFactor(Factor):
    """Four-variable chain factor linking consecutive logit-class nodes.

    Residual: l_next - l_prev - (Phi(x_rel) E - phi(x_rel)/2) with noise
    Phi Cov Phi^T + epsilon I.  Chain Jacobians are +/- identity; pose
    Jacobians come from central differences through the relative pose.
    """

    key_lprev: object
    key_lnext: object
    key_cam: object
    key_obj: object
    e_lgamma: np.ndarray
    cov_lgamma: np.ndarray
    model: object

    def __post_init__(self):
        object.__setattr__(self, "e_lgamma", np.atleast_1d(np.asarray(self.e_lgamma, float)))
        object.__setattr__(self, "cov_lgamma", np.atleast_2d(np.asarray(self.cov_lgamma, float)))

    @property
    def keys(self):
        return (self.key_lprev, self.key_lnext, self.key_cam, self.key_obj)

    def _increment(self, cam, obj):
        from ..clsmodel import phi_matrix, phi_vector

        rel = rel_predict(cam, obj)
        x = RelPose(rel[0], rel[1], rel[2])
        Phi = phi_matrix(self.model, x)
        phi = phi_vector(self.model, x)
        return Phi @ self.e_lgamma - 0.5 * phi, Phi

    def noise(self, cam, obj):
        _, Phi = self._increment(cam, obj)
        d = Phi.shape[0]
        return Phi @ self.cov_lgamma @ Phi.T + JLP_EPSILON * np.eye(d)

    def linearize(self, vals):
        cam, obj = vals[self.key_cam], vals[self.key_obj]
        inc, Phi = self._increment(cam, obj)
        r = vals[self.key_lnext] - vals[self.key_lprev] - inc
        d = r.size
        Jc = np.zeros((d, 3))
        Jo = np.zeros((d, 3))
        for which, J in ((0, Jc), (1, Jo)):
            for col in range(3):
                plus = [cam.copy(), obj.copy()]
                minus = [cam.copy(), obj.copy()]
                plus[which][col] += FD_STEP
                minus[which][col] -= FD_STEP
                gp, _ = self._increment(plus[0], plus[1])
                gm, _ = self._increment(minus[0], minus[1])
                J[:, col] = -(gp - gm) / (2.0 * FD_STEP)
        noise = Phi @ self.cov_lgamma @ Phi.T + JLP_EPSILON * np.eye(d)
        W, lognorm = _info_and_lognorm(noise)
        jacs = {
            self.key_lprev: -np.eye(d),
            self.key_lnext: np.eye(d),
            self.key_cam: Jc,
            self.key_obj: Jo,
        }
        return r, jacs, W, lognorm


@dataclass(frozen=True)
class GaussianInfoFactor(Factor):
    """Joint Gaussian prior over several variables in information form."""

    keys_: tuple
    means: tuple
    info: np.ndarray
    kinds: tuple

    def __post_init__(self):
        info = np.atleast_2d(np.asarray(self.info, dtype=float))
        object.__setattr__(self, "info", info)
        sign, logdet = np.linalg.slogdet(info)
        if sign <= 0:
            raise ConfigurationError("info factor must be positive definite")
        total = info.shape[0]
        object.__setattr__(self, "lognorm", -0.5 * total * LOG_2PI + 0.5 * logdet)

    @property
    def keys(self):
        return self.keys_

    def linearize(self, vals):
        parts = []
        jacs = {}
        offset = 0
        total = self.info.shape[0]
        for key, mean, kind in zip(self.keys_, self.means, self.kinds):
            diff = vals[key] - mean
            if kind == "pose":
                diff = diff.copy()
                diff[2] = normalize_angle(diff[2])
            parts.append(diff)
            J = np.zeros((total, diff.size))
            J[offset:offset + diff.size] = np.eye(diff.size)
            jacs[key] = J
            offset += diff.size
        r = np.concatenate(parts)
        return r, jacs, self.info, self.lognorm
