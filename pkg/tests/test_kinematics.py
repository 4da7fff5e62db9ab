import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import planar2_fk, random_chain_document, random_rotation
from retargetlab.errors import DomainError, ModelError
from retargetlab.kinematics import (
    Capsule,
    JointConfig,
    body_pose,
    capsule_distance,
    colliding_pairs,
    fixture_path,
    forward_kinematics,
    load_fixture,
    load_model,
    log_error,
    position_jacobian,
    segment_distance,
    xi_jacobian,
)
from retargetlab.lie import Pose, axis_rotation, so3_exp

angle = st.floats(-3.0, 3.0, allow_nan=False)


@pytest.fixture(scope="module")
def planar2():
    return load_fixture("planar2")


@pytest.fixture(scope="module")
def humanoid():
    return load_fixture("toy_humanoid")


def planar2_doc():
    return json.loads(fixture_path("planar2.json").read_text())


def test_fixture_shapes(planar2, humanoid):
    assert planar2.dof == 2
    assert planar2.joint_names == ("link1", "link2")
    assert planar2.base == "base"
    assert load_fixture("wrist2").dof == 2
    assert load_fixture("single_joint").dof == 1
    assert humanoid.dof == 15
    assert any(link.hand for link in humanoid.links)
    assert sum(link.foot for link in humanoid.links) == 2


def test_minimal_fixed_model():
    m = load_model({"name": "one", "links": [{"name": "base", "parent": None}]})
    assert m.dof == 0
    cfg = JointConfig(Pose(), [])
    assert xi_jacobian(m, cfg, "base", Pose()).shape == (6, 0)


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["links"][1]["joint"]["limits"].update(lower=3.5), "links[1].joint.limits"),
    (lambda d: d["links"][2]["joint"]["limits"].update(velocity=0.0), "links[2].joint.limits.velocity"),
    (lambda d: d["links"][1].update(parent="nowhere"), "links[1].parent"),
    (lambda d: d["links"][1].update(parent=None), "links"),
    (lambda d: d["links"][2].update(name="link1"), "links[2].name"),
    (lambda d: d["links"][1]["joint"].update(type="prismatic"), "links[1].joint.type"),
    (lambda d: d["links"][1]["capsules"][0].update(radius=-0.1), "links[1].capsules[0].radius"),
    (lambda d: d["links"][1]["joint"].update(axis=[0, 0, 0]), "links[1].joint.axis"),
    (lambda d: d.update(up_axis="X"), "up_axis"),
])
def test_model_errors_carry_path(mutate, path):
    doc = planar2_doc()
    mutate(doc)
    with pytest.raises(ModelError) as info:
        load_model(doc)
    assert str(info.value).startswith(path)


def test_limit_error_names_joint():
    doc = planar2_doc()
    doc["links"][2]["joint"]["limits"]["lower"] = 3.0
    with pytest.raises(ModelError, match="link2"):
        load_model(doc)


def test_cycle_rejected():
    doc = planar2_doc()
    doc["links"][1]["parent"] = "link2"
    with pytest.raises(ModelError, match="cycle"):
        load_model(doc)


def test_axis_normalized():
    doc = planar2_doc()
    doc["links"][1]["joint"]["axis"] = [0, 0, 5]
    m = load_model(doc)
    assert abs(np.linalg.norm(m.links[1].axis) - 1.0) < 1e-12


def test_planar2_fk_examples(planar2):
    fk = forward_kinematics(planar2, JointConfig(Pose(), [0.0, 0.0]))
    assert np.allclose(fk.position("ee"), [2, 0, 0])
    assert np.allclose(fk["base"].matrix(), np.eye(4))
    fk = forward_kinematics(planar2, JointConfig(Pose(), [math.pi / 2, 0.0]))
    assert np.allclose(fk.position("ee"), [0, 2, 0], atol=1e-15)


@given(angle, angle)
def test_planar2_fk_matches_closed_form(a, b):
    m = load_fixture("planar2")
    assert np.allclose(body_pose(m, JointConfig(Pose(), [a, b]), "ee").translation, planar2_fk([a, b]), atol=1e-12)


def test_fk_base_equals_root(humanoid):
    rng = np.random.default_rng(3)
    root = Pose(random_rotation(rng), rng.normal(size=3))
    fk = forward_kinematics(humanoid, JointConfig(root, humanoid.mid_range()))
    assert np.allclose(fk[humanoid.base].matrix(), root.matrix())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fk_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = load_fixture("toy_humanoid")
    q = rng.uniform(m.lower, m.upper)
    root = Pose(random_rotation(rng), rng.normal(size=3))
    g = Pose(random_rotation(rng), rng.normal(size=3))
    a = forward_kinematics(m, JointConfig(g @ root, q))
    b = forward_kinematics(m, JointConfig(root, q))
    for name in b.body_poses:
        assert np.allclose(a[name].matrix(), (g @ b[name]).matrix(), atol=1e-9)


def test_config_validation(planar2):
    with pytest.raises(ValueError):
        JointConfig(Pose(), [0.0, float("nan")])
    with pytest.raises(ValueError):
        forward_kinematics(planar2, JointConfig(Pose(), [0.0]))
    cfg = JointConfig(Pose(), [0.1, 0.2])
    with pytest.raises(ValueError):
        cfg.q[0] = 1.0


def test_xi_jacobian_planar2_translational_rows(planar2):
    cfg = JointConfig(Pose(), [0.0, 0.0])
    target = body_pose(planar2, cfg, "ee")
    jac = xi_jacobian(planar2, cfg, "ee", target)
    assert np.allclose(jac[3:], [[0, 0], [2, 1], [0, 0]], atol=1e-9)
    assert np.allclose(jac[:3], [[0, 0], [0, 0], [1, 1]], atol=1e-9)
    dec = xi_jacobian(planar2, cfg, "ee", Pose(np.eye(3), [1.0, 0.0, 0.0]), "decoupled")
    assert np.allclose(dec[3:], [[0, 0], [2, 1], [0, 0]], atol=1e-9)


def test_xi_jacobian_zero_residual_matches_analytic_position(humanoid):
    rng = np.random.default_rng(0)
    cfg = JointConfig(Pose(), rng.uniform(humanoid.lower, humanoid.upper) * 0.5)
    target = body_pose(humanoid, cfg, "left_hand")
    jac = xi_jacobian(humanoid, cfg, "left_hand", target)
    # at zero residual the translational log rows are R*^T dp
    assert np.allclose(jac[3:], target.rotation.T @ position_jacobian(humanoid, cfg, "left_hand"), atol=1e-8)


def test_position_jacobian_matches_fd(humanoid):
    rng = np.random.default_rng(7)
    cfg = JointConfig(Pose(random_rotation(rng), rng.normal(size=3)), rng.uniform(humanoid.lower, humanoid.upper))
    jac = position_jacobian(humanoid, cfg, "right_ankle")
    h = 1e-6
    for k in range(humanoid.dof):
        dq = np.zeros(humanoid.dof)
        dq[k] = h
        fd = (body_pose(humanoid, cfg.with_q(cfg.q + dq), "right_ankle").translation
              - body_pose(humanoid, cfg.with_q(cfg.q - dq), "right_ankle").translation) / (2 * h)
        assert np.allclose(jac[:, k], fd, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_xi_jacobian_taylor_decay(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    m = load_model(random_chain_document(rng, n))
    cfg = JointConfig(Pose(), rng.uniform(-1, 1, n))
    pose = body_pose(m, cfg, "tip")
    target = Pose(pose.rotation @ so3_exp(rng.uniform(-0.5, 0.5, 3)), pose.translation + rng.uniform(-0.3, 0.3, 3))
    jac = xi_jacobian(m, cfg, "tip", target)
    u = rng.normal(size=n)
    u /= np.linalg.norm(u)
    xi0 = log_error(m, cfg, "tip", target)
    errs = []
    for h in (1e-3, 1e-4):
        xi = log_error(m, cfg.with_q(cfg.q + h * u), "tip", target)
        errs.append(np.linalg.norm(xi - xi0 - h * jac @ u))
    # second-order remainder: a tenfold smaller step shrinks it roughly a hundredfold
    assert errs[1] < errs[0] / 50
    assert errs[0] < 10 * 1e-6


def test_xi_jacobian_domain_error_near_pi():
    m = load_fixture("wrist2")
    cfg = JointConfig(Pose(), [0.0, 0.0])
    target = Pose(axis_rotation([0, 0, 1], math.pi - 1e-7), np.zeros(3))
    with pytest.raises(DomainError):
        xi_jacobian(m, cfg, "tool", target)


# --------------------------------------------------------------------------- capsules


def test_capsule_examples():
    a = Capsule([0, 0, 0], [1, 0, 0], 0.05)
    b = Capsule([0, 0.3, 0], [1, 0.3, 0], 0.05)
    assert capsule_distance(a, b) == pytest.approx(0.20, abs=1e-12)
    assert capsule_distance(a, Capsule([0, 0, 0], [1, 0, 0], 0.05)) == pytest.approx(-0.10, abs=1e-12)
    c = Capsule([0.5, -0.5, 0.08], [0.5, 0.5, 0.08], 0.05)
    assert capsule_distance(a, c) == pytest.approx(-0.02, abs=1e-12)


def brute_force_segment_distance(p0, p1, q0, q1, n=1000):
    s = np.linspace(0.0, 1.0, n)
    a = p0 + s[:, None] * (p1 - p0)
    b = q0 + s[:, None] * (q1 - q0)
    best = math.inf
    for chunk in np.array_split(a, 10):
        d = np.linalg.norm(chunk[:, None, :] - b[None, :, :], axis=-1)
        best = min(best, float(d.min()))
    return best


@pytest.mark.parametrize("seed", range(4))
def test_segment_distance_lower_bounds_brute_force(seed):
    rng = np.random.default_rng(seed)
    p0, p1, q0, q1 = rng.normal(size=(4, 3))
    exact = segment_distance(p0, p1, q0, q1)
    brute = brute_force_segment_distance(p0, p1, q0, q1)
    assert exact <= brute + 1e-12
    assert brute - exact < 1e-4 * max(1.0, np.linalg.norm(p1 - p0) + np.linalg.norm(q1 - q0))


def test_degenerate_segments():
    assert segment_distance(np.zeros(3), np.zeros(3), np.array([0, 1.0, 0]), np.array([0, 1.0, 0])) == 1.0
    assert segment_distance(np.zeros(3), np.zeros(3), np.array([-1.0, 1, 0]), np.array([1.0, 1, 0])) == 1.0


coord = st.floats(-2, 2, allow_nan=False)
point = st.tuples(coord, coord, coord)
capsule = st.builds(lambda a, b, r: Capsule(a, b, r), point, point, st.floats(0.01, 0.5))


@given(capsule, capsule, point)
def test_capsule_distance_symmetric_and_translation_invariant(a, b, shift):
    assert capsule_distance(a, b) == capsule_distance(b, a)
    t = Pose(np.eye(3), shift)
    assert abs(capsule_distance(a.transformed(t), b.transformed(t)) - capsule_distance(a, b)) < 1e-12 * 10


def test_collision_pairs_exclude_adjacent(humanoid):
    names = {(humanoid.links[a].name, humanoid.links[b].name) for a, b in humanoid.collision_pairs}
    for a, b in names:
        la, lb = humanoid.links[humanoid.link_index[a]], humanoid.links[humanoid.link_index[b]]
        assert la.parent != b and lb.parent != a
    assert ("pelvis", "torso") not in names and ("torso", "pelvis") not in names


def test_humanoid_rest_pose_collision_free(humanoid):
    cfg = JointConfig(Pose(np.eye(3), [0, 0, 0.95]), np.zeros(humanoid.dof))
    assert colliding_pairs(humanoid, cfg) == []


def test_humanoid_arm_into_torso_collides(humanoid):
    q = np.zeros(humanoid.dof)
    q[humanoid.joint_names.index("left_shoulder_roll")] = -1.0
    cfg = JointConfig(Pose(np.eye(3), [0, 0, 0.95]), q)
    hits = colliding_pairs(humanoid, cfg)
    assert hits
    no_hands = colliding_pairs(humanoid, cfg, exclude_hands=True)
    assert all(not humanoid.links[humanoid.link_index[n]].hand for pair in no_hands for n in pair)
    assert len(no_hands) < len(hits)


def test_y_up_ground_axes():
    doc = copy.deepcopy(planar2_doc())
    doc["up_axis"] = "Y"
    m = load_model(doc)
    assert m.up_index == 1 and m.ground_indices == (0, 2)
