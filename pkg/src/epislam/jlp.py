"""Joint-Lambda-Pose inference: one Gaussian belief over poses and logit chains.

Each observed object owns a chain of logit-class-probability nodes linked
by four-variable factors built from the log-likelihood-ratio construction
(Phi, phi) of the classifier model.  A single factor-graph optimization
serves all objects, so the state count grows linearly in objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .factorgraph import (
    GaussianInfoFactor,
    GeometricFactor,
    Graph,
    JLPFactor,
    OdometryFactor,
    PriorFactor,
    lambda_key,
    log_evidence,
    marginal,
    object_key,
    optimize,
    robot_key,
)
from .geometry import MotionSpec, Pose2, as_pose, compose
from .mh import BeliefContext
from .simplex import GaussianParams, inv_logit

DEFAULT_MAX_SMOOTHING_VARS = 500


@dataclass(frozen=True)
class SemanticStats:
    """Moment summary of one object's logit cloud (or model output in planning)."""

    oid: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))


class JLPBelief:
    def __init__(self, ctx: BeliefContext, graph: Graph, step: int,
                 lambda_seq: dict, smoothing: bool = True,
                 max_smoothing_vars: int = DEFAULT_MAX_SMOOTHING_VARS):
        self.ctx = ctx
        self.graph = graph
        self.step = step
        self.lambda_seq = dict(lambda_seq)  # oid -> latest sequence number
        self.smoothing = smoothing
        self.max_smoothing_vars = max_smoothing_vars

    @property
    def objects_seen(self):
        return tuple(sorted(self.lambda_seq))

    @property
    def num_classes(self) -> int:
        return self.ctx.model.num_classes

    def latest_lambda_key(self, oid: int):
        if oid not in self.lambda_seq:
            raise InputError(f"object {oid} has not been observed")
        return lambda_key(oid, self.lambda_seq[oid])

    @staticmethod
    def create(ctx: BeliefContext, start: Pose2, start_cov,
               smoothing: bool = True) -> "JLPBelief":
        g = Graph()
        g.add_variable(robot_key(0), "pose", start.to_array())
        g.add_factor(PriorFactor(robot_key(0), start.to_array(), np.asarray(start_cov)))
        optimize(g)
        return JLPBelief(ctx, g, 0, {}, smoothing)

    def clone(self) -> "JLPBelief":
        return JLPBelief(self.ctx, self.graph.clone(), self.step, self.lambda_seq,
                         self.smoothing, self.max_smoothing_vars)

    def variable_count(self) -> int:
        return sum(self.graph.value(k).size for k in self.graph.variables)


def jlp_update(belief: JLPBelief, geo, sem_stats, action: MotionSpec) -> JLPBelief:
    """Advance the joint belief by one step (mutates and returns ``belief``)."""
    geo = list(geo)
    stats = list(sem_stats)
    geo_ids = {g.oid for g in geo}
    d = belief.num_classes - 1
    graph = belief.graph
    k_prev, k_new = belief.step, belief.step + 1

    for s in stats:
        if s.oid not in geo_ids and not graph.has_variable(object_key(s.oid)):
            raise InputError(
                f"semantic stats for object {s.oid} without any geometric anchor"
            )

    x_prev = graph.value(robot_key(k_prev))
    x_new = compose(Pose2.from_array(x_prev), action.action)
    graph.add_variable(robot_key(k_new), "pose", x_new.to_array())
    graph.add_factor(
        OdometryFactor(robot_key(k_prev), robot_key(k_new), action.action.to_array(),
                       _cov_floor(action.noise_cov))
    )
    for obs in geo:
        okey = object_key(obs.oid)
        if not graph.has_variable(okey):
            graph.add_variable(okey, "pose", compose(x_new, as_pose(obs.rel)).to_array())
        graph.add_factor(
            GeometricFactor(robot_key(k_new), okey, obs.rel.to_array(),
                            belief.ctx.geometric_cov)
        )

    for s in stats:
        oid = s.oid
        okey = object_key(oid)
        if oid not in belief.lambda_seq:
            belief.lambda_seq[oid] = 0
            prior_key = lambda_key(oid, 0)
            graph.add_variable(prior_key, "vec", np.zeros(d))
            graph.add_factor(
                PriorFactor(prior_key, np.zeros(d),
                            belief.ctx.lambda0_cov * np.eye(d), kind="vec")
            )
        prev_key = lambda_key(oid, belief.lambda_seq[oid])
        belief.lambda_seq[oid] += 1
        next_key = lambda_key(oid, belief.lambda_seq[oid])
        factor = JLPFactor(prev_key, next_key, robot_key(k_new), okey,
                           s.mean, s.cov, belief.ctx.model)
        inc, _ = factor._increment(graph.value(robot_key(k_new)), graph.value(okey))
        graph.add_variable(next_key, "vec", graph.value(prev_key) + inc)
        graph.add_factor(factor)

    optimize(graph)
    belief.step = k_new
    if not belief.smoothing or belief.variable_count() > belief.max_smoothing_vars:
        from .factorgraph import marginalize_lambda_history

        for oid in belief.lambda_seq:
            marginalize_lambda_history(graph, oid, keep_latest=True)
        optimize(graph)
    return belief


def _cov_floor(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    return cov + 1e-12 * np.eye(cov.shape[0])


def lambda_posterior(belief: JLPBelief, oid: int) -> GaussianParams:
    """Gaussian marginal of the newest logit node of one object."""
    key = belief.latest_lambda_key(oid)
    marg = marginal(belief.graph, (key,))
    return GaussianParams(marg.mean, marg.cov)


def class_posterior_jlp(belief: JLPBelief, oid: int, n_mc: int = 20_000,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Monte-Carlo expectation of the class probabilities under the logit marginal."""
    if rng is None:
        rng = np.random.default_rng(0)
    params = lambda_posterior(belief, oid)
    chol = np.linalg.cholesky(params.cov)
    draws = params.mean + rng.standard_normal((n_mc, params.dim)) @ chol.T
    padded = np.concatenate([draws, np.zeros((n_mc, 1))], axis=1)
    padded -= padded.max(axis=1, keepdims=True)
    e = np.exp(padded)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs.mean(axis=0)


def pose_marginal(belief: JLPBelief, keys=None):
    if keys is None:
        keys = (robot_key(belief.step),)
    return marginal(belief.graph, keys)


def snapshot(belief: JLPBelief) -> dict:
    """Export mirroring the multi-hybrid snapshot format, tagged with the engine id."""
    doc = {"engine": "jlp", "step": belief.step, "objects": {}}
    for oid in belief.objects_seen:
        params = lambda_posterior(belief, oid)
        doc["objects"][str(oid)] = {
            "mean": params.mean.tolist(),
            "cov": params.cov.tolist(),
        }
    marg = pose_marginal(belief)
    doc["pose_mixture"] = [{"weight": 1.0, "mean": marg.mean.tolist(),
                            "cov": marg.cov.tolist()}]
    return doc


def compress_for_planning(belief: JLPBelief) -> JLPBelief:
    """Collapse history onto the current pose, object poses, and newest logit nodes."""
    from .mh import _graph_from_marginal

    keys = [robot_key(belief.step)]
    kinds = ["pose"]
    for oid in belief.objects_seen:
        keys.append(object_key(oid))
        kinds.append("pose")
    for oid in belief.objects_seen:
        keys.append(belief.latest_lambda_key(oid))
        kinds.append("vec")
    dims = tuple(belief.graph.value(k).size for k in keys)
    marg = marginal(belief.graph, keys)
    g = _graph_from_marginal(keys, marg, tuple(kinds), dims)
    return JLPBelief(belief.ctx, g, belief.step, belief.lambda_seq,
                     belief.smoothing, belief.max_smoothing_vars)
