import math

import numpy as np
import pytest
from scipy import stats

from epislam.clsmodel import model_one
from epislam.errors import GaugeError
from epislam.factorgraph import (
    GaussianInfoFactor,
    GeometricFactor,
    Graph,
    JLPFactor,
    OdometryFactor,
    PriorFactor,
    lambda_key,
    log_evidence,
    marginal,
    marginalize_lambda_history,
    object_key,
    optimize,
    robot_key,
)
from epislam.geometry import Pose2, between, compose


def chain_graph(n_steps, action, odo_cov, prior_cov=None, measured=None):
    g = Graph()
    g.add_variable(robot_key(0), "pose", [0.0, 0.0, 0.0])
    g.add_factor(PriorFactor(robot_key(0), np.zeros(3),
                             prior_cov if prior_cov is not None else 1e-6 * np.eye(3)))
    truth = [Pose2(0, 0, 0)]
    for k in range(1, n_steps + 1):
        truth.append(compose(truth[-1], action))
        g.add_variable(robot_key(k), "pose", [0.0, 0.0, 0.0])
        meas = action.to_array() if measured is None else measured[k - 1]
        g.add_factor(OdometryFactor(robot_key(k - 1), robot_key(k), meas, odo_cov))
    return g, truth


def test_prior_only_graph():
    g = Graph()
    g.add_variable(robot_key(0), "pose", [5.0, -3.0, 1.0])
    g.add_factor(PriorFactor(robot_key(0), np.array([1.0, 2.0, 0.5]), 0.04 * np.eye(3)))
    report = optimize(g)
    assert report.converged
    assert np.allclose(g.value(robot_key(0)), [1.0, 2.0, 0.5], atol=1e-9)


def test_noiseless_odometry_chain_dead_reckons():
    action = Pose2(1.0, 0.0, math.pi / 10)
    g, truth = chain_graph(8, action, 1e-4 * np.eye(3))
    optimize(g)
    for k, pose in enumerate(truth):
        assert np.allclose(g.value(robot_key(k)), pose.to_array(), atol=1e-8)


def test_three_pose_loop_recovers_ground_truth():
    poses = [Pose2(0, 0, 0), Pose2(2, 0, math.pi / 2), Pose2(2, 2, math.pi)]
    obj = Pose2(1.0, 1.0, 0.3)
    g = Graph()
    g.add_variable(robot_key(0), "pose", poses[0].to_array())
    g.add_factor(PriorFactor(robot_key(0), poses[0].to_array(), 1e-10 * np.eye(3)))
    for k in range(1, 3):
        rel = between(poses[k - 1], poses[k])
        g.add_variable(robot_key(k), "pose", [0.0, 0.0, 0.0])
        g.add_factor(OdometryFactor(robot_key(k - 1), robot_key(k), rel.to_array(),
                                    1e-4 * np.eye(3)))
    g.add_variable(object_key(0), "pose", [0.0, 0.0, 0.0])
    for k in range(3):
        rel = between(poses[k], obj)
        g.add_factor(GeometricFactor(robot_key(k), object_key(0), rel.to_array(),
                                     1e-6 * np.eye(3)))
    optimize(g)
    for k in range(3):
        assert np.allclose(g.value(robot_key(k)), poses[k].to_array(), atol=1e-8)
    assert np.allclose(g.value(object_key(0)), obj.to_array(), atol=1e-8)


def test_linear_gaussian_matches_closed_form():
    # scalar chain x0 ~ N(1, 4); x1 = x0 + measured offset: compare to the
    # standard Gaussian product formulas
    g = Graph()
    g.add_variable(lambda_key(0, 0), "vec", [0.0])
    g.add_variable(lambda_key(0, 1), "vec", [0.0])
    g.add_factor(PriorFactor(lambda_key(0, 0), np.array([1.0]), np.array([[4.0]]),
                             kind="vec"))
    info = np.array([[1.0 / 0.25]])
    g.add_factor(GaussianInfoFactor((lambda_key(0, 1),), (np.array([2.5]),), info, ("vec",)))
    optimize(g)
    m = marginal(g, (lambda_key(0, 0), lambda_key(0, 1)))
    assert np.allclose(m.mean, [1.0, 2.5], atol=1e-10)
    assert np.allclose(np.diag(m.cov), [4.0, 0.25], atol=1e-10)


def test_evidence_matches_scipy_on_linear_model():
    # z = x + v with x ~ N(mu0, P) and v ~ N(0, R): the joint evidence of z
    # is N(z; mu0, P + R)
    mu0, P, R, z = 0.7, 2.0, 0.3, 1.9
    g = Graph()
    g.add_variable(lambda_key(0, 0), "vec", [0.0])
    g.add_factor(PriorFactor(lambda_key(0, 0), np.array([mu0]), np.array([[P]]), kind="vec"))
    base = log_evidence_of(g)
    g.add_factor(GaussianInfoFactor((lambda_key(0, 0),), (np.array([z]),),
                                    np.array([[1.0 / R]]), ("vec",)))
    after = log_evidence_of(g)
    expected = stats.norm.logpdf(z, loc=mu0, scale=math.sqrt(P + R))
    assert after - base == pytest.approx(expected, abs=1e-9)


def log_evidence_of(g):
    optimize(g)
    return log_evidence(g)


def test_marginal_prior_only_matches_prior():
    g = Graph()
    g.add_variable(robot_key(0), "pose", [0.1, 0.2, 0.0])
    cov = np.diag([0.2, 0.3, 0.05])
    g.add_factor(PriorFactor(robot_key(0), np.array([1.0, -1.0, 0.2]), cov))
    optimize(g)
    m = marginal(g, (robot_key(0),))
    assert np.allclose(m.mean, [1.0, -1.0, 0.2], atol=1e-9)
    assert np.allclose(m.cov, cov, atol=1e-9)


def test_marginal_noiseless_link_fully_correlated():
    g = Graph()
    g.add_variable(lambda_key(0, 0), "vec", [0.0])
    g.add_variable(lambda_key(0, 1), "vec", [0.0])
    g.add_factor(PriorFactor(lambda_key(0, 0), np.array([0.0]), np.array([[1.0]]),
                             kind="vec"))
    # a near-noiseless equality constraint between the two nodes
    info = np.array([[1e12, -1e12], [-1e12, 1e12 + 1e-3]])
    g.add_factor(GaussianInfoFactor((lambda_key(0, 0), lambda_key(0, 1)),
                                    (np.array([0.0]), np.array([0.0])), info,
                                    ("vec", "vec")))
    optimize(g)
    m = marginal(g, (lambda_key(0, 0), lambda_key(0, 1)))
    corr = m.cov[0, 1] / math.sqrt(m.cov[0, 0] * m.cov[1, 1])
    assert corr > 1.0 - 1e-6


def test_marginal_chain_variance_grows_with_distance():
    action = Pose2(1.0, 0.0, 0.0)
    odo_cov = np.diag([0.01, 0.01, 0.001])
    g, _ = chain_graph(6, action, odo_cov, prior_cov=1e-4 * np.eye(3))
    optimize(g)
    # closed-form linear chain oracle: variance of x-position accumulates
    expected = 1e-4
    prev = 0.0
    for k in range(7):
        var = marginal(g, (robot_key(k),)).cov[0, 0]
        assert var > prev
        assert var == pytest.approx(expected, rel=1e-3)
        prev = var
        expected += 0.01


def test_jlp_residual_consistent_assignment_is_zero():
    model = model_one()
    g = _jlp_pair_graph(model, e_lg=1.0, cov_lg=model.eval(1, _rel0()).cov[0, 0])
    factor = [f for f in g.factors if isinstance(f, JLPFactor)][0]
    vals = {k: g.value(k) for k in factor.keys}
    from epislam.clsmodel import phi_matrix, phi_vector

    inc = phi_matrix(model, _rel0()) @ factor.e_lgamma - 0.5 * phi_vector(model, _rel0())
    vals[factor.key_lnext] = vals[factor.key_lprev] + inc
    r, _, _, _ = factor.linearize(vals)
    assert np.allclose(r, 0.0, atol=1e-12)


def _rel0():
    from epislam.geometry import RelPose

    return RelPose(2.0, 0.0, 0.0)


def _jlp_pair_graph(model, e_lg, cov_lg):
    g = Graph()
    g.add_variable(robot_key(0), "pose", [0.0, 0.0, 0.0])
    g.add_variable(object_key(0), "pose", [2.0, 0.0, 0.0])
    g.add_factor(PriorFactor(robot_key(0), np.zeros(3), 1e-10 * np.eye(3)))
    g.add_factor(PriorFactor(object_key(0), np.array([2.0, 0.0, 0.0]), 1e-10 * np.eye(3)))
    g.add_variable(lambda_key(0, 0), "vec", [0.0])
    g.add_variable(lambda_key(0, 1), "vec", [0.0])
    g.add_factor(PriorFactor(lambda_key(0, 0), np.zeros(1), 4.0 * np.eye(1), kind="vec"))
    g.add_factor(JLPFactor(lambda_key(0, 0), lambda_key(0, 1), robot_key(0), object_key(0),
                           np.array([e_lg]), np.array([[cov_lg]]), model))
    return g


def test_jlp_residual_scalar_arithmetic():
    model = model_one()
    cov_lg = model.eval(1, _rel0()).cov[0, 0]  # 0.7071
    g = _jlp_pair_graph(model, e_lg=1.0, cov_lg=cov_lg)
    optimize(g)
    # increment 2.828 * 1 - 0; noise 2.828^2 * 0.7071 + eps
    assert g.value(lambda_key(0, 1))[0] == pytest.approx(2.0 / math.sqrt(0.5), abs=1e-6)
    factor = [f for f in g.factors if isinstance(f, JLPFactor)][0]
    noise = factor.noise(g.value(robot_key(0)), g.value(object_key(0)))
    phi = 2.0 / math.sqrt(0.5)
    assert noise[0, 0] == pytest.approx(phi**2 * cov_lg + 1e-6, abs=1e-9)
    assert noise[0, 0] == pytest.approx(5.657, abs=1e-3)


def test_jlp_residual_aliasing_viewpoint():
    from epislam.geometry import RelPose

    model = model_one()
    rel = RelPose(2.0, 0.0, math.pi / 2)
    g = Graph()
    g.add_variable(robot_key(0), "pose", [0.0, 0.0, 0.0])
    g.add_variable(object_key(0), "pose", [2.0, 0.0, math.pi / 2])
    g.add_factor(PriorFactor(robot_key(0), np.zeros(3), 1e-10 * np.eye(3)))
    g.add_factor(PriorFactor(object_key(0), np.array([2.0, 0.0, math.pi / 2]),
                             1e-10 * np.eye(3)))
    g.add_variable(lambda_key(0, 0), "vec", [0.0])
    g.add_variable(lambda_key(0, 1), "vec", [0.0])
    g.add_factor(PriorFactor(lambda_key(0, 0), np.zeros(1), 4.0 * np.eye(1), kind="vec"))
    factor = JLPFactor(lambda_key(0, 0), lambda_key(0, 1), robot_key(0), object_key(0),
                       np.array([1.0]), np.array([[0.845]]), model)
    g.add_factor(factor)
    noise = factor.noise(g.value(robot_key(0)), g.value(object_key(0)))
    assert noise[0, 0] == pytest.approx(1e-6, abs=1e-12)
    optimize(g)
    assert g.value(lambda_key(0, 1))[0] == pytest.approx(0.0, abs=1e-9)


def test_marginalize_lambda_history_preserves_latest_marginal():
    model = model_one()
    g = _jlp_pair_graph(model, e_lg=0.8, cov_lg=0.5)
    # extend the chain by one more node
    g.add_variable(lambda_key(0, 2), "vec", [0.0])
    g.add_factor(JLPFactor(lambda_key(0, 1), lambda_key(0, 2), robot_key(0), object_key(0),
                           np.array([0.3]), np.array([[0.4]]), model))
    optimize(g)
    before = marginal(g, (lambda_key(0, 2),))
    marginalize_lambda_history(g, 0, keep_latest=True)
    optimize(g)
    after = marginal(g, (lambda_key(0, 2),))
    assert np.allclose(before.mean, after.mean, atol=1e-9)
    assert np.allclose(before.cov, after.cov, atol=1e-9)
    assert not g.has_variable(lambda_key(0, 0))
    assert not g.has_variable(lambda_key(0, 1))


def test_marginalize_lambda_history_disabled_is_noop():
    model = model_one()
    g = _jlp_pair_graph(model, e_lg=0.8, cov_lg=0.5)
    optimize(g)
    n_before = len(g.variables)
    marginalize_lambda_history(g, 0, keep_latest=False)
    assert len(g.variables) == n_before


def test_marginalize_lambda_history_idempotent():
    model = model_one()
    g = _jlp_pair_graph(model, e_lg=0.8, cov_lg=0.5)
    optimize(g)
    marginalize_lambda_history(g, 0)
    vars_once = sorted(map(str, g.variables))
    marginalize_lambda_history(g, 0)
    assert sorted(map(str, g.variables)) == vars_once


def test_zero_information_factor_leaves_map_unchanged():
    action = Pose2(1.0, 0.0, 0.1)
    g, _ = chain_graph(4, action, 1e-3 * np.eye(3))
    optimize(g)
    baseline = {k: g.value(k) for k in g.variables}
    g.add_factor(GeometricFactor(robot_key(0), robot_key(4),
                                 np.array([10.0, 10.0, 1.0]), 1e12 * np.eye(3)))
    optimize(g)
    for k, v in baseline.items():
        assert np.allclose(g.value(k), v, atol=1e-6)


def test_cost_non_increasing_across_accepted_iterations():
    # nonlinear loop started far from the optimum
    poses = [Pose2(0, 0, 0), Pose2(1, 0, 1.0), Pose2(1, 1, 2.0)]
    g = Graph()
    g.add_variable(robot_key(0), "pose", [0.3, -0.2, 0.4])
    g.add_factor(PriorFactor(robot_key(0), poses[0].to_array(), 1e-4 * np.eye(3)))
    for k in range(1, 3):
        rel = between(poses[k - 1], poses[k])
        g.add_variable(robot_key(k), "pose", [2.0, 2.0, -1.0])
        g.add_factor(OdometryFactor(robot_key(k - 1), robot_key(k), rel.to_array(),
                                    1e-2 * np.eye(3)))
    costs = []
    flat = g.flat_values()
    costs.append(g.linearize(flat)[2])
    report = optimize(g)
    assert report.cost <= costs[0] + 1e-12
    assert report.converged


def test_gauge_error_without_priors():
    g = Graph()
    g.add_variable(robot_key(0), "pose", [0.0, 0.0, 0.0])
    g.add_variable(robot_key(1), "pose", [1.0, 0.0, 0.0])
    g.add_factor(OdometryFactor(robot_key(0), robot_key(1), np.array([1.0, 0.0, 0.0]),
                                0.01 * np.eye(3)))
    with pytest.raises(GaugeError):
        optimize(g)
        marginal(g, (robot_key(0),))


def test_graph_dump_document():
    g, _ = chain_graph(2, Pose2(1, 0, 0), 1e-2 * np.eye(3))
    optimize(g)
    doc = g.to_document()
    assert "variables" in doc and "factors" in doc and "cost" in doc
    assert len(doc["variables"]) == 3
