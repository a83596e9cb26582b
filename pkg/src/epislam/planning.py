"""Belief space planning over motion primitives with entropy rewards.

Measurement generation mirrors the inference engines: the multi-hybrid
engine samples a weight realization, a class realization, and future poses,
then draws logit clouds from the classifier model; the joint-logit engine
passes the model moments through directly.  The objective is a recursive
sampled expectation of per-step rewards, searched with UCT over primitive
sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import jlp as jlp_mod
from . import mh as mh_mod
from .clsmodel import sample_cloud
from .errors import ConfigurationError, InputError
from .factorgraph import marginal, object_key, robot_key
from .geometry import MotionSpec, Pose2, SensorSpec, between, compose, in_fov, sample_motion
from .jlp import JLPBelief, SemanticStats, jlp_update, lambda_posterior
from .mh import (
    GeometricObservation,
    MHBelief,
    SemanticObservation,
    lambda_particles,
    mh_update,
    prune,
)
from .simplex import (
    DirichletParams,
    GaussianParams,
    dirichlet_entropy,
    dirichlet_fit,
    gaussian_fit,
    lg_entropy_lower,
    lg_entropy_numeric,
    lg_entropy_upper,
    logit,
    shannon_entropy,
)

FAMILIES = ("dirichlet", "lg", "lg-upper", "lg-lower")


def default_primitives() -> list[Pose2]:
    """Forward, gentle left/right, hard left/right body-frame increments."""
    return [
        Pose2(1.0, 0.0, 0.0),
        Pose2(1.0, 0.0, math.pi / 6.0),
        Pose2(1.0, 0.0, -math.pi / 6.0),
        Pose2(0.5, 0.0, math.pi / 2.0),
        Pose2(0.5, 0.0, -math.pi / 2.0),
    ]


@dataclass(frozen=True)
class RewardSpec:
    kind: str = "r1"              # "r1" | "r2"
    r_max: float = 5.0            # per-object cap for r1
    family: str = "dirichlet"     # distribution family for r1
    entropy_mc: int = 2048        # draws for the numeric LG entropy

    def __post_init__(self):
        if self.kind not in ("r1", "r2"):
            raise ConfigurationError(f"unknown reward kind {self.kind!r}")
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown lambda family {self.family!r}")
        if self.kind == "r1" and self.r_max <= 0.0:
            raise ConfigurationError("r1 requires a positive cap")


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 5
    n_samples: int = 1
    mcts_budget: int = 200
    exploration_c: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.n_samples < 1:
            raise ConfigurationError("horizon and n_samples must be at least 1")


def validate_engine_reward(engine: str, spec: RewardSpec) -> None:
    """The compatibility matrix: Dirichlet only for multi-hybrid; the
    single-belief baseline cannot evaluate epistemic rewards at all."""
    if spec.kind == "r2":
        return
    if engine == "jlp" and spec.family == "dirichlet":
        raise ConfigurationError("the joint-logit engine is limited to the LG family")
    if engine == "weu":
        raise ConfigurationError("the single-belief baseline supports only r2")


def predict_observed(camera: Pose2, object_poses: dict, sensor: SensorSpec) -> list:
    """Object ids whose sampled pose falls inside the sampled camera's cone."""
    return sorted(o for o, pose in object_poses.items() if in_fov(camera, pose, sensor))


def _sample_gaussian(mean, cov, rng):
    cov = 0.5 * (cov + cov.T) + 1e-12 * np.eye(cov.shape[0])
    chol = np.linalg.cholesky(cov)
    return mean + chol @ rng.standard_normal(mean.size)


def _categorical(rng, probs) -> int:
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def mh_generate(belief: MHBelief, action: MotionSpec, rng: np.random.Generator):
    """Sampled future measurements for the multi-hybrid engine.

    Returns (geo observations, semantic observations); both lists are empty
    when no known object lands in the predicted field of view.
    """
    ctx = belief.ctx
    w = int(rng.integers(belief.w_count))
    hybrid = belief.hybrids[w]
    reals = list(hybrid.components)
    weights = np.array([math.exp(hybrid.components[c].log_weight) for c in reals])
    weights /= weights.sum()

    comp_real = reals[_categorical(rng, weights)]
    keys = [robot_key(belief.step)] + [object_key(o) for o in belief.objects_seen]
    marg = marginal(hybrid.components[comp_real].graph, keys)
    joint = _sample_gaussian(marg.mean, marg.cov, rng)
    x_k = Pose2.from_array(joint[:3])
    obj_poses = {
        o: Pose2.from_array(joint[3 + 3 * i:6 + 3 * i])
        for i, o in enumerate(belief.objects_seen)
    }
    x_next = sample_motion(x_k, action, rng)
    observed = predict_observed(x_next, obj_poses, ctx.sensor)

    meas_real = dict(reals[_categorical(rng, weights)])
    geo, sem = [], []
    geo_chol = np.linalg.cholesky(ctx.geometric_cov + 1e-15 * np.eye(3))
    for o in observed:
        rel = between(x_next, obj_poses[o])
        noisy = rel.to_array() + geo_chol @ rng.standard_normal(3)
        from .geometry import RelPose

        geo.append(GeometricObservation(o, RelPose.from_array(noisy)))
        cloud = sample_cloud(ctx.model, meas_real[o], rel, max(belief.w_count, 2), rng)
        sem.append(SemanticObservation(o, cloud[:belief.w_count]))
    return geo, sem


def jlp_generate(belief: JLPBelief, action: MotionSpec, rng: np.random.Generator):
    """Sampled future measurements for the joint-logit engine.

    The classifier-model moments at the sampled class and relative pose are
    returned directly; no cloud is drawn.
    """
    ctx = belief.ctx
    keys = [robot_key(belief.step)]
    keys += [object_key(o) for o in belief.objects_seen]
    keys += [belief.latest_lambda_key(o) for o in belief.objects_seen]
    marg = marginal(belief.graph, keys)
    joint = _sample_gaussian(marg.mean, marg.cov, rng)
    x_k = Pose2.from_array(joint[:3])
    n = len(belief.objects_seen)
    obj_poses = {
        o: Pose2.from_array(joint[3 + 3 * i:6 + 3 * i])
        for i, o in enumerate(belief.objects_seen)
    }
    d = belief.num_classes - 1
    lam = {}
    off = 3 + 3 * n
    for i, o in enumerate(belief.objects_seen):
        v = joint[off + d * i:off + d * (i + 1)]
        from .simplex import inv_logit

        lam[o] = inv_logit(v)
    x_next = sample_motion(x_k, action, rng)
    observed = predict_observed(x_next, obj_poses, ctx.sensor)
    geo, stats = [], []
    geo_chol = np.linalg.cholesky(ctx.geometric_cov + 1e-15 * np.eye(3))
    for o in observed:
        rel = between(x_next, obj_poses[o])
        noisy = rel.to_array() + geo_chol @ rng.standard_normal(3)
        from .geometry import RelPose

        geo.append(GeometricObservation(o, RelPose.from_array(noisy)))
        cls = _categorical(rng, lam[o]) + 1
        params = ctx.model.eval(cls, rel)
        stats.append(SemanticStats(o, params.mean, params.cov))
    return geo, stats


# -- rewards ----------------------------------------------------------


def _lambda_distributions(belief):
    """Per-object handles for entropy rewards, engine-appropriate."""
    if isinstance(belief, MHBelief):
        return {o: ("particles", lambda_particles(belief, o)) for o in belief.objects_seen}
    return {o: ("gaussian", lambda_posterior(belief, o)) for o in belief.objects_seen}


def _entropy_of(handle, spec: RewardSpec) -> float:
    kind, payload = handle
    if spec.family == "dirichlet":
        if kind != "particles":
            raise ConfigurationError("Dirichlet rewards need particle beliefs")
        import warnings

        with warnings.catch_warnings():
            # bounded solver budget: entropy is insensitive to tail creep of
            # the concentration fixed point, and degenerate particle sets
            # diverge toward the cap anyway
            warnings.simplefilter("ignore", RuntimeWarning)
            return dirichlet_entropy(dirichlet_fit(payload, max_iter=30))
    if kind == "particles":
        if payload.shape[0] < 2:
            raise ConfigurationError("LG fit needs at least two particles")
        g = gaussian_fit(np.vstack([logit(p) for p in payload]))
    else:
        g = payload
    if spec.family == "lg":
        return lg_entropy_numeric(g, spec.entropy_mc, np.random.default_rng(0))
    if spec.family == "lg-upper":
        return lg_entropy_upper(g)
    return lg_entropy_lower(g)


def reward_r1(lambda_dists: dict, spec: RewardSpec) -> float:
    """Sum over objects of min(-H(lambda), cap)."""
    total = 0.0
    for handle in lambda_dists.values():
        h = _entropy_of(handle, spec)
        total += min(-h, spec.r_max)
    return total


def reward_r2(lambda_means: dict) -> float:
    """Negative Shannon entropy of the expected class probabilities, summed."""
    return -sum(shannon_entropy(p) for p in lambda_means.values())


def _lambda_means(belief) -> dict:
    if isinstance(belief, MHBelief):
        return {o: mh_mod.class_posterior(belief, o) for o in belief.objects_seen}
    return {
        o: jlp_mod.class_posterior_jlp(belief, o, n_mc=4096, rng=np.random.default_rng(0))
        for o in belief.objects_seen
    }


def evaluate_reward(belief, spec: RewardSpec) -> float:
    if spec.kind == "r2":
        return reward_r2(_lambda_means(belief))
    return reward_r1(_lambda_distributions(belief), spec)


# -- rollout machinery ------------------------------------------------


_SPEC_CACHE: dict = {}


def _motion_spec(belief, action: Pose2) -> MotionSpec:
    key = (id(belief.ctx), action.x, action.y, action.theta)
    spec = _SPEC_CACHE.get(key)
    if spec is None:
        spec = MotionSpec(action, belief.ctx.motion_cov)
        if len(_SPEC_CACHE) > 4096:
            _SPEC_CACHE.clear()
        _SPEC_CACHE[key] = spec
    return spec


def _step_belief(belief, action: Pose2, rng) -> object:
    """Generate measurements, ingest them, and return the updated clone.

    Lookahead graphs stay small because the rollout starts from a belief
    compressed onto the current poses (see ``mcts_plan``); within a rollout
    they grow by one pose per depth.
    """
    spec = _motion_spec(belief, action)
    if isinstance(belief, MHBelief):
        geo, sem = mh_generate(belief, spec, rng)
        nxt = belief.clone()
        mh_update(nxt, geo, sem, spec)
        prune(nxt, belief.ctx.prune_threshold)
        return nxt
    geo, stats = jlp_generate(belief, spec, rng)
    nxt = belief.clone()
    jlp_update(nxt, geo, stats, spec)
    return nxt


def objective(belief, actions, config: PlanConfig, spec: RewardSpec,
              rng: np.random.Generator | None = None, reward_fn=None) -> float:
    """Recursive sample-average of cumulative reward along an action sequence."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    reward = reward_fn if reward_fn is not None else (lambda b: evaluate_reward(b, spec))
    return _objective_recurse(belief, list(actions), config, reward, rng)


def _objective_recurse(belief, actions, config, reward, rng) -> float:
    if not actions:
        return 0.0
    total = 0.0
    for _ in range(config.n_samples):
        nxt = _step_belief(belief, actions[0], rng)
        total += reward(nxt) + _objective_recurse(nxt, actions[1:], config, reward, rng)
    return total / config.n_samples


# -- MCTS -------------------------------------------------------------


class _Node:
    __slots__ = ("visits", "child_visits", "child_values")

    def __init__(self, n_actions: int):
        self.visits = 0
        self.child_visits = [0] * n_actions
        self.child_values = [0.0] * n_actions


def mcts_plan(belief, primitives, config: PlanConfig, spec: RewardSpec,
              reward_fn=None, return_stats: bool = False):
    """UCT over open-loop primitive sequences; returns the root action index.

    Each rollout descends the tree with UCT (unvisited actions first, in
    index order), samples measurements and updates a cloned belief along the
    way, and backs up the cumulative downstream reward.  Ties at the root
    break toward the lowest primitive index.
    """
    primitives = list(primitives)
    n_actions = len(primitives)
    if config.mcts_budget < n_actions:
        raise ConfigurationError("the rollout budget must cover every primitive once")
    reward = reward_fn if reward_fn is not None else (lambda b: evaluate_reward(b, spec))

    root = _compress(belief)
    tree: dict[tuple, _Node] = {(): _Node(n_actions)}

    for rollout in range(config.mcts_budget):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, rollout)))
        b = root
        path = ()
        visited = []
        rewards = []
        in_tree = True
        for depth in range(config.horizon):
            if in_tree and path in tree:
                node = tree[path]
                a = _select_uct(node, config.exploration_c)
                visited.append((path, a))
                new_path = path + (a,)
                if new_path not in tree and depth + 1 < config.horizon:
                    tree[new_path] = _Node(n_actions)
                    in_tree = False
                path = new_path
            else:
                a = int(rng.integers(n_actions))
            b = _step_belief(b, primitives[a], rng)
            rewards.append(reward(b))
        for i, (node_path, a) in enumerate(visited):
            node = tree[node_path]
            node.visits += 1
            node.child_visits[a] += 1
            node.child_values[a] += sum(rewards[i:])

    root_node = tree[()]
    means = [
        (root_node.child_values[a] / root_node.child_visits[a])
        if root_node.child_visits[a] else -math.inf
        for a in range(n_actions)
    ]
    best = max(range(n_actions), key=lambda a: (means[a], -a))
    if return_stats:
        return best, {"means": means, "visits": list(root_node.child_visits)}
    return best


def _select_uct(node: _Node, c: float) -> int:
    for a, n in enumerate(node.child_visits):
        if n == 0:
            return a
    log_n = math.log(max(node.visits, 1))
    best, best_score = 0, -math.inf
    for a, n in enumerate(node.child_visits):
        score = node.child_values[a] / n + c * math.sqrt(log_n / n)
        if score > best_score:
            best, best_score = a, score
    return best


def _compress(belief):
    if isinstance(belief, MHBelief):
        if belief.objects_seen:
            return mh_mod.compress_for_planning(belief)
        return belief.clone()
    if belief.objects_seen:
        return jlp_mod.compress_for_planning(belief)
    return belief.clone()
