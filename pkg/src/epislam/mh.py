"""Multi-Hybrid inference: parallel hybrid beliefs over poses and class realizations.

One hybrid belief is kept per classifier-weight realization w.  Within a
hybrid belief, every surviving class realization C owns a conditional
Gaussian factor graph over poses plus a categorical weight.  The weight
update multiplies by the marginal likelihood of each step's measurements,
evaluated as the Laplace log-partition difference of the conditional graph
before and after the step (exact for linear-Gaussian factors).

The "without epistemic uncertainty" baseline is this engine with a single
weight realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .clsmodel import ClassifierUncertaintyModel
from .errors import ConfigurationError, InputError
from .factorgraph import (
    GeometricFactor,
    Graph,
    MarginalGaussian,
    OdometryFactor,
    PriorFactor,
    SemanticFactor,
    log_evidence,
    marginal,
    object_key,
    optimize,
    robot_key,
)
from .factorgraph._batch import log_evidence_batch, optimize_batch
from .geometry import MotionSpec, Pose2, SensorSpec, as_pose, compose
from .simplex import GaussianParams

DEFAULT_PRUNE_THRESHOLD = 1e-3
DEFAULT_LAMBDA0_COV = 4.0


@dataclass(frozen=True)
class BeliefContext:
    """Scenario-level objects shared by every conditional graph."""

    model: ClassifierUncertaintyModel
    sensor: SensorSpec
    geometric_cov: np.ndarray
    motion_cov: np.ndarray = None
    lambda0_cov: float = DEFAULT_LAMBDA0_COV
    prune_threshold: float = DEFAULT_PRUNE_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "geometric_cov", np.asarray(self.geometric_cov, dtype=float))
        motion = self.motion_cov if self.motion_cov is not None else 1e-6 * np.eye(3)
        object.__setattr__(self, "motion_cov", np.asarray(motion, dtype=float))


@dataclass(frozen=True)
class GeometricObservation:
    oid: int
    rel: object  # RelPose


@dataclass(frozen=True)
class SemanticObservation:
    """Per-object logit cloud, one member per weight realization."""

    oid: int
    cloud: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cloud", np.atleast_2d(np.asarray(self.cloud, dtype=float)))


@dataclass
class HybridComponent:
    graph: Graph
    log_weight: float
    log_z: float


class HybridBelief:
    """All class-realization components for one weight realization."""

    def __init__(self, components: dict):
        self.components = components  # realization tuple -> HybridComponent

    def weights(self) -> dict:
        return {c: math.exp(comp.log_weight) for c, comp in self.components.items()}

    def normalize(self) -> None:
        logs = np.array([comp.log_weight for comp in self.components.values()])
        total = _logsumexp(logs)
        for comp in self.components.values():
            comp.log_weight -= total

    def clone(self) -> "HybridBelief":
        return HybridBelief(
            {
                c: HybridComponent(comp.graph.clone(), comp.log_weight, comp.log_z)
                for c, comp in self.components.items()
            }
        )


class MHBelief:
    def __init__(self, ctx: BeliefContext, hybrids: list, step: int, objects_seen: tuple):
        self.ctx = ctx
        self.hybrids = hybrids
        self.step = step
        self.objects_seen = tuple(objects_seen)

    @property
    def w_count(self) -> int:
        return len(self.hybrids)

    @property
    def num_classes(self) -> int:
        return self.ctx.model.num_classes

    @staticmethod
    def create(ctx: BeliefContext, start: Pose2, start_cov, w_count: int) -> "MHBelief":
        hybrids = []
        for _ in range(w_count):
            g = Graph()
            g.add_variable(robot_key(0), "pose", start.to_array())
            g.add_factor(PriorFactor(robot_key(0), start.to_array(), np.asarray(start_cov)))
            optimize(g)
            hybrids.append(HybridBelief({(): HybridComponent(g, 0.0, log_evidence(g))}))
        return MHBelief(ctx, hybrids, 0, ())

    def clone(self) -> "MHBelief":
        return MHBelief(self.ctx, [h.clone() for h in self.hybrids], self.step, self.objects_seen)

    def realization_class(self, realization: tuple, oid: int) -> int:
        for o, c in realization:
            if o == oid:
                return c
        raise InputError(f"object {oid} absent from realization")


def _logsumexp(arr: np.ndarray) -> float:
    hi = arr.max()
    return float(hi + np.log(np.exp(arr - hi).sum()))


def mh_update(belief: MHBelief, geo, sem, action: MotionSpec) -> MHBelief:
    """Advance every hybrid belief by one step (mutates and returns ``belief``).

    ``geo``: iterable of GeometricObservation; ``sem``: iterable of
    SemanticObservation whose clouds carry one member per weight
    realization.  Both must cover the same object set.
    """
    geo = list(geo)
    sem = list(sem)
    geo_ids = [g.oid for g in geo]
    if len(set(geo_ids)) != len(geo_ids):
        raise InputError("duplicate geometric observation")
    if set(geo_ids) != {s.oid for s in sem}:
        raise InputError("geometric and semantic observations must cover the same objects")
    for s in sem:
        if s.cloud.shape[0] != belief.w_count:
            raise InputError("semantic cloud size must equal the number of weight realizations")

    m = belief.num_classes
    k_prev, k_new = belief.step, belief.step + 1
    new_ids = [o for o in geo_ids if o not in belief.objects_seen]
    sem_by_id = {s.oid: s for s in sem}

    shared_factors = {}

    def _shared(cls_, *args):
        key = (cls_.__name__,) + tuple(
            a.tobytes() if isinstance(a, np.ndarray) else a for a in args
        )
        f = shared_factors.get(key)
        if f is None:
            f = cls_(*args)
            shared_factors[key] = f
        return f

    odom_cov = _odom_cov(action)
    all_components = []
    for w, hybrid in enumerate(belief.hybrids):
        branched = {}
        for realization, comp in hybrid.components.items():
            combos = list(product(range(1, m + 1), repeat=len(new_ids)))
            for i, combo in enumerate(combos):
                child_real = tuple(sorted(realization + tuple(zip(new_ids, combo))))
                graph = comp.graph if i == len(combos) - 1 else comp.graph.clone()
                log_w = comp.log_weight - len(new_ids) * math.log(m)
                branched[child_real] = HybridComponent(graph, log_w, comp.log_z)

        for realization, comp in branched.items():
            graph = comp.graph
            x_prev = graph.value(robot_key(k_prev))
            x_new = compose(Pose2.from_array(x_prev), action.action)
            graph.add_variable(robot_key(k_new), "pose", x_new.to_array())
            graph.add_factor(
                _shared(OdometryFactor, robot_key(k_prev), robot_key(k_new),
                        action.action.to_array(), odom_cov)
            )
            for obs in geo:
                okey = object_key(obs.oid)
                if not graph.has_variable(okey):
                    graph.add_variable(
                        okey, "pose", compose(x_new, as_pose(obs.rel)).to_array()
                    )
                graph.add_factor(
                    _shared(GeometricFactor, robot_key(k_new), okey, obs.rel.to_array(),
                            belief.ctx.geometric_cov)
                )
                cls = belief.realization_class(realization, obs.oid)
                graph.add_factor(
                    SemanticFactor(robot_key(k_new), okey, cls,
                                   sem_by_id[obs.oid].cloud[w], belief.ctx.model)
                )
            all_components.append(comp)
        hybrid.components = branched

    optimize_batch([comp.graph for comp in all_components])
    new_log_zs = log_evidence_batch([comp.graph for comp in all_components])
    for comp, new_log_z in zip(all_components, new_log_zs):
        comp.log_weight += float(new_log_z) - comp.log_z
        comp.log_z = float(new_log_z)
    for hybrid in belief.hybrids:
        hybrid.normalize()

    belief.step = k_new
    belief.objects_seen = belief.objects_seen + tuple(new_ids)
    return belief


def _odom_cov(action: MotionSpec) -> np.ndarray:
    cov = np.asarray(action.noise_cov, dtype=float)
    if np.allclose(cov, 0.0):
        # deterministic-motion limit; keep the factor well defined
        return 1e-12 * np.eye(3)
    floor = 1e-12 * np.eye(3)
    return cov + floor


def lambda_particles(belief: MHBelief, oid: int) -> np.ndarray:
    """One class-probability vector per weight realization (shape |W| x m)."""
    if oid not in belief.objects_seen:
        raise InputError(f"object {oid} has not been observed")
    m = belief.num_classes
    out = np.zeros((belief.w_count, m))
    for w, hybrid in enumerate(belief.hybrids):
        for realization, comp in hybrid.components.items():
            cls = belief.realization_class(realization, oid)
            out[w, cls - 1] += math.exp(comp.log_weight)
        out[w] /= out[w].sum()
    return out


def class_posterior(belief: MHBelief, oid: int) -> np.ndarray:
    """Reported classification: the mean of the per-realization particles."""
    return lambda_particles(belief, oid).mean(axis=0)


def pose_marginal_mixture(belief: MHBelief, keys=None) -> list:
    """Weighted Gaussian components of the pose posterior (weights sum to 1)."""
    if keys is None:
        keys = (robot_key(belief.step),)
    out = []
    for hybrid in belief.hybrids:
        for comp in hybrid.components.values():
            weight = math.exp(comp.log_weight) / belief.w_count
            out.append((weight, marginal(comp.graph, keys)))
    return out


def prune(belief: MHBelief, threshold: float) -> MHBelief:
    """Drop realizations below ``threshold`` per hybrid belief; keep the argmax."""
    if not 0.0 <= threshold < 1.0:
        raise ConfigurationError("prune threshold must lie in [0, 1)")
    if threshold == 0.0:
        return belief
    log_thr = math.log(threshold)
    for hybrid in belief.hybrids:
        best = max(hybrid.components, key=lambda c: hybrid.components[c].log_weight)
        kept = {
            c: comp
            for c, comp in hybrid.components.items()
            if comp.log_weight >= log_thr or c == best
        }
        hybrid.components = kept
        hybrid.normalize()
    return belief


def snapshot(belief: MHBelief) -> dict:
    """JSON-ready export of particles, realization weights, and pose marginals."""
    doc = {"engine": "mh", "step": belief.step, "w_count": belief.w_count, "objects": {}}
    for oid in belief.objects_seen:
        doc["objects"][str(oid)] = lambda_particles(belief, oid).tolist()
    doc["realizations"] = [
        {str(c): math.exp(comp.log_weight) for c, comp in hybrid.components.items()}
        for hybrid in belief.hybrids
    ]
    mix = pose_marginal_mixture(belief)
    doc["pose_mixture"] = [
        {"weight": w, "mean": mg.mean.tolist(), "cov": mg.cov.tolist()} for w, mg in mix
    ]
    return doc


def compress_for_planning(belief: MHBelief) -> MHBelief:
    """Replace every conditional graph by an equivalent Gaussian prior.

    Past poses are marginalized onto the current pose and the object poses
    at the linearization point; realization weights and evidence baselines
    carry over unchanged.  Rollouts then extend small graphs with the same
    update operator.
    """
    from .factorgraph import GaussianInfoFactor

    keys = [robot_key(belief.step)] + [object_key(o) for o in belief.objects_seen]
    hybrids = []
    for hybrid in belief.hybrids:
        comps = {}
        for realization, comp in hybrid.components.items():
            marg = marginal(comp.graph, keys)
            g = _graph_from_marginal(keys, marg)
            # the construction point is the MAP and the prior is normalized,
            # so the evidence baseline restarts at exactly zero
            comps[realization] = HybridComponent(g, comp.log_weight, 0.0)
        hybrids.append(HybridBelief(comps))
    out = MHBelief(belief.ctx, hybrids, belief.step, belief.objects_seen)
    return out


def _graph_from_marginal(keys, marg, kinds=None, dims=None) -> Graph:
    """A fresh graph holding one joint Gaussian prior at its own optimum."""
    from .factorgraph import GaussianInfoFactor

    if kinds is None:
        kinds = tuple("pose" for _ in keys)
    if dims is None:
        dims = tuple(3 for _ in keys)
    g = Graph()
    means = []
    offset = 0
    for key, kind, dim in zip(keys, kinds, dims):
        mean = marg.mean[offset:offset + dim]
        g.add_variable(key, kind, mean)
        means.append(mean.copy())
        offset += dim
    info = np.linalg.inv(marg.cov)
    info = 0.5 * (info + info.T)
    factor = GaussianInfoFactor(tuple(keys), tuple(means), info, tuple(kinds))
    g.add_factor(factor)
    g._solution_cache = (marg.mean.copy(), info.copy(), 0.0, factor.lognorm)
    return g
