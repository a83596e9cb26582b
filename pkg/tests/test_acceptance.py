"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines.  The planning study (criterion 8) runs fifty full planner-driven
scenarios and dominates the suite's runtime.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats as scipy_stats

from epislam import cli, sim
from epislam.clsmodel import GridModel, model_one, phi_matrix, phi_vector
from epislam.geometry import MotionSpec, Pose2, SensorSpec, between, compose
from epislam.jlp import JLPBelief, SemanticStats, jlp_update, lambda_posterior
from epislam.mh import (
    BeliefContext,
    GeometricObservation,
    MHBelief,
    SemanticObservation,
    class_posterior,
    lambda_particles,
    mh_update,
)
from epislam.simplex import (
    DirichletParams,
    GaussianParams,
    dirichlet_entropy,
    lg_entropy_lower,
    lg_entropy_numeric,
    lg_entropy_upper,
)


def _report(criterion: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance] {status} {criterion} {detail}")
    assert passed, f"{criterion}: {detail}"


# -- criterion 1: entropy sandwich --------------------------------------


def test_criterion_1_entropy_sandwich():
    rng = np.random.default_rng(20260809)
    t0 = time.time()
    violations = 0
    for _ in range(1000):
        m = int(rng.integers(2, 7))
        d = m - 1
        mean = rng.uniform(-5.0, 5.0, size=d)
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        cov = (q * rng.uniform(0.1, 10.0, size=d)) @ q.T
        g = GaussianParams(mean, 0.5 * (cov + cov.T))
        h, err = lg_entropy_numeric(g, 2000, rng, return_stderr=True)
        if not (lg_entropy_lower(g) - 3 * err <= h <= lg_entropy_upper(g) + 3 * err):
            violations += 1
    elapsed = time.time() - t0
    _report(
        "1 entropy-sandwich",
        violations == 0 and elapsed < 60.0,
        f"violations={violations}/1000 elapsed={elapsed:.1f}s",
    )


# -- criterion 2: entropy trends -----------------------------------------


def test_criterion_2_entropy_trends():
    # Dirichlet entropy maximal at the all-ones parameter on a 9-point grid
    center = dirichlet_entropy(DirichletParams([1.0, 1.0]))
    grid_ok = True
    for da in (-0.15, 0.0, 0.15):
        for db in (-0.15, 0.0, 0.15):
            if da == db == 0.0:
                continue
            if dirichlet_entropy(DirichletParams([1.0 + da, 1.0 + db])) >= center:
                grid_ok = False

    # LG (m=2): entropy decreases monotonically in the mean at variance 3
    means_ok = True
    prev = math.inf
    for mean in range(21):
        g = GaussianParams([float(mean)], [[3.0]])
        h = lg_entropy_numeric(g, 200_000, np.random.default_rng(0))
        if h >= prev:
            means_ok = False
        prev = h

    # LG (m=2): entropy grows with the variance at mean 3.  The exact
    # entropy peaks near variance 6 and must eventually fall (the simplex
    # variable degenerates onto {0, 1}), so strict growth is asserted on
    # (0, 6] and the gross low-to-high ordering across the whole range;
    # see the decisions ledger.
    var_grid = [0.25, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    vals = [
        lg_entropy_numeric(GaussianParams([3.0], [[v]]), 200_000,
                           np.random.default_rng(0))
        for v in var_grid
    ]
    vars_ok = all(b > a for a, b in zip(vals, vals[1:]))
    h_hi = lg_entropy_numeric(GaussianParams([3.0], [[10.0]]), 200_000,
                              np.random.default_rng(0))
    vars_ok = vars_ok and h_hi > vals[0] + 0.5

    _report(
        "2 entropy-trends",
        grid_ok and means_ok and vars_ok,
        f"dirichlet-grid={grid_ok} mean-monotone={means_ok} var-monotone={vars_ok}",
    )


# -- criterion 3: MH brute-force equivalence ------------------------------


def _flat_two_class_model(mean=0.7, var=0.5):
    nodes = [-math.pi / 2, math.pi / 2]
    means = np.zeros((2, 2, 1))
    means[0] += mean
    means[1] -= mean
    covs = np.full((2, 2, 1, 1), var)
    return GridModel(nodes, means, covs), np.array([mean]), np.array([-mean]), var


def test_criterion_3_mh_brute_force():
    model, h1, h2, var = _flat_two_class_model()
    w_count = 3
    ctx = BeliefContext(model, SensorSpec(), np.diag([0.01, 0.01, 0.002]),
                        motion_cov=np.diag([0.0025, 0.0025, 4e-4]))
    belief = MHBelief.create(ctx, Pose2(0, 0, 0), 1e-6 * np.eye(3), w_count)
    rng = np.random.default_rng(31)
    world = Pose2(0, 0, 0)
    action = MotionSpec(Pose2(1, 0, 0.05), ctx.motion_cov)
    objects = {0: Pose2(3.0, 1.0, 0.3), 1: Pose2(4.0, -2.0, 2.0)}
    means = {1: h1, 2: h2}
    log_lik = {(w, c0, c1): 0.0 for w in range(w_count) for c0 in (1, 2) for c1 in (1, 2)}
    from epislam.clsmodel import sample_cloud

    for _ in range(3):
        world = compose(world, action.action)
        geo, sem = [], []
        for oid, pose in objects.items():
            rel = between(world, pose)
            geo.append(GeometricObservation(oid, rel))
            cloud = sample_cloud(model, 1 if oid == 0 else 2, rel, w_count, rng)
            sem.append(SemanticObservation(oid, cloud))
        mh_update(belief, geo, sem, action)
        sem_by_id = {s.oid: s for s in sem}
        for w in range(w_count):
            for c0 in (1, 2):
                for c1 in (1, 2):
                    log_lik[(w, c0, c1)] += float(
                        scipy_stats.norm.logpdf(sem_by_id[0].cloud[w][0],
                                                loc=means[c0][0], scale=math.sqrt(var))
                        + scipy_stats.norm.logpdf(sem_by_id[1].cloud[w][0],
                                                  loc=means[c1][0], scale=math.sqrt(var))
                    )
    worst = 0.0
    for oid in (0, 1):
        oracle = np.zeros((w_count, 2))
        for w in range(w_count):
            logs = np.array([[log_lik[(w, c0, c1)] for c1 in (1, 2)] for c0 in (1, 2)])
            joint = np.exp(logs - logs.max())
            joint /= joint.sum()
            oracle[w] = joint.sum(axis=1) if oid == 0 else joint.sum(axis=0)
        got = lambda_particles(belief, oid)
        worst = max(worst, float(np.abs(got - oracle).max()))
    _report("3 mh-brute-force", worst < 1e-6, f"max|posterior-enumeration|={worst:.2e}")


# -- criterion 4: JLP exactness under the shared-covariance condition -----


def test_criterion_4_jlp_exactness():
    model = model_one()
    ctx = BeliefContext(model, SensorSpec(), 1e-10 * np.eye(3),
                        motion_cov=np.zeros((3, 3)))
    belief = JLPBelief.create(ctx, Pose2(0, 0, 0), 1e-10 * np.eye(3))
    rng = np.random.default_rng(7)
    action = MotionSpec(Pose2(1, 0, 0.05), np.zeros((3, 3)))
    world = Pose2(0, 0, 0)
    obj = Pose2(6.0, 2.0, 1.2)
    expected = np.zeros(1)
    for _ in range(20):
        world = compose(world, action.action)
        rel = between(world, obj)
        e_lg = rng.normal(0.4, 0.6, size=1)
        cov = np.array([[float(rng.uniform(0.3, 0.9))]])
        jlp_update(belief, [GeometricObservation(0, rel)],
                   [SemanticStats(0, e_lg, cov)], action)
        expected = expected + phi_matrix(model, rel) @ e_lg - 0.5 * phi_vector(model, rel)
    got = lambda_posterior(belief, 0).mean
    err = float(np.abs(got - expected).max())
    _report("4 jlp-exactness", err < 1e-6, f"|mean-recursion|={err:.2e} over 20 steps")


# -- criterion 5: cross-engine agreement ---------------------------------


def test_criterion_5_cross_engine_agreement():
    s = sim.fixed_five_object_scenario(w_count=25)
    mh_rec = sim.run_scenario(s, "mh").records[-1]
    jlp_rec = sim.run_scenario(s, "jlp").records[-1]
    diffs = {
        oid: float(np.abs(mh_rec.posteriors[oid] - jlp_rec.posteriors[oid]).max())
        for oid in (0, 1, 2)  # case-3, case-3, case-1 objects
    }
    worst = max(diffs.values())
    _report("5 cross-engine", worst <= 0.05, f"per-object diffs={diffs}")


# -- criterion 6: epistemic-awareness benefit ------------------------------


def test_criterion_6_epistemic_benefit():
    t0 = time.time()
    finals = {"mh": [], "jlp": [], "weu": []}
    for seed in range(10):
        s = sim.random_layout_scenario(seed)
        for eng in finals:
            finals[eng].append(sim.run_scenario(s, eng).final_avg_msde())
    means = {eng: float(np.mean(v)) for eng, v in finals.items()}
    elapsed = time.time() - t0
    ok = means["mh"] < means["weu"] and means["jlp"] < means["weu"] and elapsed < 600
    _report(
        "6 epistemic-benefit",
        ok,
        f"mh={means['mh']:.4f} jlp={means['jlp']:.4f} weu={means['weu']:.4f} "
        f"elapsed={elapsed:.0f}s",
    )


# -- criterion 7: shared-covariance violation study ------------------------


def test_criterion_7_lemma_violation_study():
    s = sim.fixed_five_object_scenario(model="model-2")
    jlp_fixed = sim.run_scenario(s, "jlp").final_avg_msde()
    mh100_fixed = sim.run_scenario(
        sim.fixed_five_object_scenario(w_count=100, model="model-2"), "mh"
    ).final_avg_msde()
    jlps, mhs = [], []
    for seed in range(10):
        sc = sim.random_layout_scenario(seed, model="model-2")
        jlps.append(sim.run_scenario(sc, "jlp").final_avg_msde())
        mhs.append(sim.run_scenario(sc, "mh").final_avg_msde())
    gap = abs(float(np.mean(jlps)) - float(np.mean(mhs)))
    ok = jlp_fixed > mh100_fixed and gap < 0.15
    _report(
        "7 model-2-study",
        ok,
        f"fixed: jlp={jlp_fixed:.4f} mh100={mh100_fixed:.4f}; 10-run gap={gap:.4f}",
    )


# -- criterion 8: planning benefit -----------------------------------------


@pytest.mark.slow
def test_criterion_8_planning_benefit():
    seeds = range(10)
    results = {}
    cfgs = [("mh", "r1", "dirichlet"), ("mh", "r2", "dirichlet"),
            ("jlp", "r1", "lg"), ("jlp", "r2", "lg"), ("weu", "r2", "lg")]
    for seed in seeds:
        for eng, rw, fam in cfgs:
            s = sim.cone_single_object_scenario(seed=seed, reward=rw, family=fam)
            rec = sim.run_scenario(s, eng).records[-1]
            results[(seed, eng, rw)] = (rec.sum_entropy, rec.avg_msde)

    r1_wins = {"mh": 0, "jlp": 0}
    msde_wins = {"mh": 0, "jlp": 0}
    for seed in seeds:
        for eng in ("mh", "jlp"):
            if results[(seed, eng, "r1")][0] < results[(seed, eng, "r2")][0]:
                r1_wins[eng] += 1
            if results[(seed, eng, "r1")][1] < results[(seed, "weu", "r2")][1]:
                msde_wins[eng] += 1

    entropy_ok = r1_wins["mh"] >= 8 and r1_wins["jlp"] >= 8
    msde_ok = msde_wins["mh"] >= 8 and msde_wins["jlp"] >= 8
    _report(
        "8a planning-entropy (r1 < r2 per engine, >=8/10 seeds)",
        entropy_ok,
        f"mh={r1_wins['mh']}/10 jlp={r1_wins['jlp']}/10",
    )
    # In this simulated world the baseline's single chain is an unbiased
    # estimator fed i.i.d. clouds and ends fully saturated on the correct
    # class in nearly every seed, so per-seed MSDE dominance over it is not
    # attainable; see the decisions ledger for the analysis.
    _report(
        "8b planning-msde (epistemic planners beat baseline, >=8/10 seeds)",
        msde_ok,
        f"mh={msde_wins['mh']}/10 jlp={msde_wins['jlp']}/10",
    )


# -- criterion 9: complexity ordering ---------------------------------------


def test_criterion_9_complexity_ordering():
    sim.run_scenario(sim.fixed_five_object_scenario(w_count=5), "mh")  # warm up
    curves = {}
    for w in (5, 10, 25):
        s = sim.fixed_five_object_scenario(w_count=w)
        a = [r.wall_seconds for r in sim.run_scenario(s, "mh").records]
        b = [r.wall_seconds for r in sim.run_scenario(s, "mh").records]
        curves[w] = np.minimum(a, b)
    s = sim.fixed_five_object_scenario(w_count=10)
    ja = [r.wall_seconds for r in sim.run_scenario(s, "jlp").records]
    jb = [r.wall_seconds for r in sim.run_scenario(s, "jlp").records]
    jlp_curve = np.minimum(ja, jb)
    mono = all(curves[5][k] < curves[10][k] < curves[25][k]
               for k in range(len(curves[5])))
    jlp_fast = all(jlp_curve[k] < curves[10][k] for k in range(len(jlp_curve)))
    _report(
        "9 complexity-ordering",
        mono and jlp_fast,
        f"W-monotone={mono} jlp<mh10={jlp_fast} "
        f"(mean ms: mh5={1e3 * curves[5].mean():.1f} mh10={1e3 * curves[10].mean():.1f} "
        f"mh25={1e3 * curves[25].mean():.1f} jlp={1e3 * jlp_curve.mean():.1f})",
    )


# -- criterion 10: CLI determinism -------------------------------------------


def test_criterion_10_cli_determinism(tmp_path):
    from dataclasses import replace

    scene = replace(sim.fixed_five_object_scenario(), steps=5, w_count=5)
    scene_path = tmp_path / "scene.json"
    scene_path.write_text(sim.scenario_to_json(scene))
    plan_scene = replace(sim.cone_single_object_scenario(budget=8, horizon=2),
                         steps=2, w_count=4)
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(sim.scenario_to_json(plan_scene))

    def run_all(tag):
        out = {}
        d1 = tmp_path / f"infer_{tag}"
        assert cli.main(["infer", "--scenario", str(scene_path), "--engine", "mh",
                         "--out", str(d1), "--seed", "3"]) == 0
        d2 = tmp_path / f"plan_{tag}"
        assert cli.main(["plan", "--scenario", str(plan_path), "--engine", "jlp",
                         "--reward", "r1", "--family", "lg", "--out", str(d2),
                         "--seed", "4"]) == 0
        d3 = tmp_path / f"bench_{tag}"
        assert cli.main(["bench-entropy", "--out", str(d3), "--seed", "5"]) == 0
        for d in (d1, d2, d3):
            for p in sorted(d.iterdir()):
                if p.name.startswith(("timing", "fit_time", "entropy_time")):
                    continue  # wall-clock content, exempt by nature
                out[f"{d.name.rsplit('_', 1)[0]}/{p.name}"] = p.read_bytes()
        return out

    first = run_all("a")
    second = run_all("b")
    mismatched = [k for k in first if first[k] != second[k]]
    _report("10 cli-determinism", not mismatched, f"mismatched={mismatched}")
