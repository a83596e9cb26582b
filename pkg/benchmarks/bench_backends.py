"""Benchmark: compiled linearization kernels vs the pure NumPy fallback.

Builds a representative smoothing graph (robot chain, object landmarks,
logit chains with classifier and chain factors), then times the
normal-equation assembly and a full optimize with each backend, plus the
batched multi-instance path.

Run:  python3 benchmarks/bench_backends.py
"""

import math
import time

import numpy as np

from epislam.clsmodel import model_one
from epislam.factorgraph import (
    GeometricFactor,
    Graph,
    JLPFactor,
    OdometryFactor,
    PriorFactor,
    SemanticFactor,
    lambda_key,
    object_key,
    optimize,
    robot_key,
)
from epislam.factorgraph._batch import BatchStructure, optimize_batch
from epislam.factorgraph.kernels import available_backends
from epislam.geometry import Pose2, between, compose


def build_graph(steps=20, n_objects=5, seed=0):
    model = model_one()
    rng = np.random.default_rng(seed)
    g = Graph()
    g.add_variable(robot_key(0), "pose", [0, 0, 0])
    g.add_factor(PriorFactor(robot_key(0), np.zeros(3), 1e-4 * np.eye(3)))
    objects = {
        o: Pose2(4.0 + 3.5 * o, (-1) ** o * 2.0, rng.uniform(-math.pi, math.pi))
        for o in range(n_objects)
    }
    seq = {}
    world = Pose2(0, 0, 0)
    action = Pose2(1.25, 0, 0)
    for k in range(1, steps + 1):
        world = compose(world, action)
        g.add_variable(robot_key(k), "pose", world.to_array() + rng.normal(0, 0.02, 3))
        g.add_factor(OdometryFactor(robot_key(k - 1), robot_key(k), action.to_array(),
                                    np.diag([0.0025, 0.0025, 1e-4])))
        for o, pose in objects.items():
            rel = between(world, pose)
            if abs(rel.dx) > 10:
                continue
            if not g.has_variable(object_key(o)):
                g.add_variable(object_key(o), "pose", pose.to_array())
                g.add_variable(lambda_key(o, 0), "vec", [0.0])
                g.add_factor(PriorFactor(lambda_key(o, 0), np.zeros(1), 4 * np.eye(1),
                                         kind="vec"))
                seq[o] = 0
            g.add_factor(GeometricFactor(robot_key(k), object_key(o),
                                         rel.to_array() + rng.normal(0, 0.05, 3),
                                         np.diag([0.01, 0.01, 4e-4])))
            g.add_factor(SemanticFactor(robot_key(k), object_key(o), 1 + o % 2,
                                        rng.normal(0, 1, 1), model))
            g.add_variable(lambda_key(o, seq[o] + 1), "vec", [0.0])
            g.add_factor(JLPFactor(lambda_key(o, seq[o]), lambda_key(o, seq[o] + 1),
                                   robot_key(k), object_key(o),
                                   rng.normal(0.5, 0.5, 1), np.array([[0.7]]), model))
            seq[o] += 1
    return g


def time_linearize(graph, backend, reps=200):
    import epislam.factorgraph.kernels as kernels

    kernels._backend = backend
    packed = graph._ensure_packed()
    flat = graph.flat_values()
    graph.linearize(flat)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        graph.linearize(flat)
    return (time.perf_counter() - t0) / reps


def time_optimize(graph, backend, reps=5):
    import epislam.factorgraph.kernels as kernels

    kernels._backend = backend
    t0 = time.perf_counter()
    for _ in range(reps):
        g = graph.clone()
        optimize(g)
    return (time.perf_counter() - t0) / reps


def small_batch(B=20):
    model = model_one()
    graphs = []
    for b in range(B):
        g = Graph()
        g.add_variable(robot_key(0), "pose", [0, 0, 0])
        g.add_factor(PriorFactor(robot_key(0), np.zeros(3), 1e-4 * np.eye(3)))
        g.add_variable(robot_key(1), "pose", [1, 0, 0])
        g.add_factor(OdometryFactor(robot_key(0), robot_key(1), np.array([1.0, 0, 0]),
                                    np.diag([0.0025, 0.0025, 1e-4])))
        g.add_variable(object_key(0), "pose", [4.0, 1.0, 0.4])
        g.add_factor(GeometricFactor(robot_key(1), object_key(0),
                                     np.array([3.0, 1.0, 0.4]), np.diag([0.01, 0.01, 4e-4])))
        g.add_factor(SemanticFactor(robot_key(1), object_key(0), 1 + b % 2,
                                    np.array([0.3 * b % 1.0]), model))
        graphs.append(g)
    return graphs


def main():
    backends = available_backends()
    graph = build_graph()
    n = graph._ensure_packed().total_dim
    print(f"representative graph: {len(graph.variables)} variables, "
          f"{len(graph.factors)} factors, {n} state dims")
    print(f"{'backend':<10} {'linearize':>12} {'optimize':>12}")
    results = {}
    for name, mod in sorted(backends.items()):
        t_lin = time_linearize(graph, mod)
        t_opt = time_optimize(graph, mod)
        results[name] = t_lin
        print(f"{name:<10} {t_lin * 1e6:>10.1f}us {t_opt * 1e3:>10.2f}ms")
    if len(results) == 2:
        print(f"speedup (linearize): {results['python'] / results['cython']:.1f}x")

    graphs = small_batch()
    t0 = time.perf_counter()
    for _ in range(20):
        clones = [g.clone() for g in graphs]
        optimize_batch(clones)
    t_batch = (time.perf_counter() - t0) / 20
    t0 = time.perf_counter()
    for _ in range(20):
        for g in graphs:
            optimize(g.clone())
    t_solo = (time.perf_counter() - t0) / 20
    print(f"batched optimize of {len(graphs)} small graphs: {t_batch * 1e3:.2f}ms "
          f"vs per-graph {t_solo * 1e3:.2f}ms ({t_solo / t_batch:.1f}x)")

    import epislam.factorgraph.kernels as kernels

    kernels._backend = None  # restore selection


if __name__ == "__main__":
    main()
