import numpy as np
import pytest

from quadvpc import geometry as g
from quadvpc.costs import Bounds, CostWeights, ReferencePoint
from quadvpc.dynamics import CameraExtrinsics, ControlInput, QuadVisualState, rk4_step
from quadvpc.ocp import OcpParams, VisualPredictiveController
from quadvpc.simulator import (
    DEFAULT_EXTRINSICS,
    FeatureLost,
    Landmark,
    NoiseModel,
    PlantState,
    ReferenceInfeasible,
    camera_pose,
    make_reference_from_waypoint,
    observe,
    plant_step,
    run_closed_loop,
)

ZERO_NOISE = NoiseModel()
BARE_CAMERA = CameraExtrinsics(p_b_cb=np.zeros(3), q_bc=DEFAULT_EXTRINSICS.q_bc)


def hover_input():
    return ControlInput(9.81, np.zeros(3))


class TestPlantStep:
    def test_hover_is_fixed_point(self):
        ps = PlantState([1.0, 2.0, 3.0], np.zeros(3), g.quat_identity())
        out = plant_step(ps, hover_input(), 0.05)
        assert np.max(np.abs(out.p_w - ps.p_w)) < 1e-12
        assert np.max(np.abs(out.v_w)) < 1e-12

    def test_free_fall_drop(self):
        ps = PlantState(np.zeros(3), np.zeros(3), g.quat_identity())
        for _ in range(1000):
            ps = plant_step(ps, ControlInput(0.0, np.zeros(3)), 1e-3)
        assert ps.p_w[2] == pytest.approx(-4.905, abs=1e-9)

    def test_matches_controller_model(self, rng):
        # the plant and the controller's internal model must agree on the
        # shared coordinates under identical inputs
        lm = Landmark()
        ps = PlantState([0.0, 0.0, 3.0], [0.5, -0.2, 0.1], g.quat_yaw(0.3))
        meas = observe(ps, lm, DEFAULT_EXTRINSICS, ZERO_NOISE, rng)
        x = meas
        u = ControlInput(10.5, [0.2, -0.3, 0.1])
        dt = 0.05
        for _ in range(20):
            ps = plant_step(ps, u, dt)
            x = rk4_step(x, u, dt, DEFAULT_EXTRINSICS)
        assert np.max(np.abs(ps.v_w - x.v_w)) < 1e-9
        assert abs(abs(ps.q_wb @ x.q_wb) - 1.0) < 1e-9


class TestObserve:
    def test_aligned_geometry(self, rng):
        # camera 2 m straight in front of the landmark, aligned
        ps = PlantState([4.0, 0.0, 3.0], np.zeros(3), g.quat_identity())
        meas = observe(ps, Landmark(), BARE_CAMERA, ZERO_NOISE, rng)
        assert g.rotations_close(meas.q_cl, g.quat_identity(), tol=1e-12)
        assert meas.d == pytest.approx(2.0, abs=1e-12)

    def test_behind_camera_raises(self, rng):
        ps = PlantState([8.0, 0.0, 3.0], np.zeros(3), g.quat_identity())
        with pytest.raises(FeatureLost):
            observe(ps, Landmark(), BARE_CAMERA, ZERO_NOISE, rng)

    def test_out_of_fov_raises(self, rng):
        ps = PlantState([4.0, 3.5, 3.0], np.zeros(3), g.quat_identity())
        with pytest.raises(FeatureLost) as exc:
            observe(ps, Landmark(), BARE_CAMERA, ZERO_NOISE, rng)
        assert exc.value.reason == "out_of_fov"

    def test_range_bearing_reconstruction(self, rng):
        # bearing times distance reproduces the camera-frame landmark
        lm = Landmark()
        for _ in range(50):
            ps = PlantState(
                p_w=lm.p_w_lw + np.array([-rng.uniform(1, 8), rng.uniform(-2, 2), rng.uniform(-2, 2)]),
                v_w=rng.normal(size=3),
                q_wb=g.quat_yaw(rng.uniform(-0.3, 0.3)),
            )
            try:
                meas = observe(ps, lm, DEFAULT_EXTRINSICS, ZERO_NOISE, rng)
            except FeatureLost:
                continue
            p_c, q_wc = camera_pose(ps, DEFAULT_EXTRINSICS)
            r = g.quat_rotate(g.quat_conj(q_wc), lm.p_w_lw - p_c)
            assert np.max(np.abs(g.bearing_n(meas.q_cl) * meas.d - r)) < 1e-9

    def test_noise_is_seeded(self):
        noise = NoiseModel(sigma_v=0.1, sigma_px=0.01, sigma_d_rel=0.01, sigma_att=0.01)
        ps = PlantState([4.0, 0.0, 3.0], np.zeros(3), g.quat_identity())
        m1 = observe(ps, Landmark(), BARE_CAMERA, noise, np.random.default_rng(7))
        m2 = observe(ps, Landmark(), BARE_CAMERA, noise, np.random.default_rng(7))
        assert np.array_equal(m1.as_vector(), m2.as_vector())


class TestMakeReference:
    def test_aligned_waypoint(self):
        ref = make_reference_from_waypoint(np.array([4.0, 0.0, 3.0]), np.zeros(3), 0.0, Landmark(), BARE_CAMERA)
        assert np.allclose(ref.s_star, [0, 0], atol=1e-12)
        assert ref.d_star == pytest.approx(2.0)

    def test_quarter_circle_start_distance(self):
        ref = make_reference_from_waypoint(np.array([-2.0, 0.0, 3.0]), np.zeros(3), 0.0, Landmark(), BARE_CAMERA)
        assert ref.d_star == pytest.approx(8.0)

    def test_behind_waypoint_infeasible(self):
        with pytest.raises(ReferenceInfeasible):
            make_reference_from_waypoint(np.array([8.0, 0.0, 3.0]), np.zeros(3), 0.0, Landmark(), BARE_CAMERA)

    def test_velocity_and_heading_pass_through(self):
        ref = make_reference_from_waypoint(
            np.array([0.0, 0.0, 3.0]), np.array([1.0, 2.0, 0.0]), 0.4, Landmark(), BARE_CAMERA
        )
        assert np.allclose(ref.v_star, [1.0, 2.0, 0.0])
        assert g.rotations_close(ref.q_star, g.quat_yaw(0.4))


def small_controller():
    return VisualPredictiveController(CostWeights(), Bounds(), DEFAULT_EXTRINSICS, OcpParams())


def hover_loop(duration=2.0, seed=0, noise=ZERO_NOISE):
    plant0 = PlantState([4.0, 0.0, 3.0], np.zeros(3), g.quat_identity())
    meas_rng = np.random.default_rng(123)
    meas = observe(plant0, Landmark(), DEFAULT_EXTRINSICS, ZERO_NOISE, meas_rng)
    n = g.bearing_n(meas.q_cl)
    ref = ReferencePoint(n[:2] / n[2], meas.d, np.zeros(3), g.quat_identity())
    refs = [ref] * 21
    return run_closed_loop(
        small_controller(),
        lambda t: refs,
        plant0,
        Landmark(),
        DEFAULT_EXTRINSICS,
        noise,
        duration=duration,
        dt=0.05,
        seed=seed,
    )


class TestClosedLoop:
    def test_hover_regulation(self):
        log = hover_loop(duration=5.0)
        assert log.outcome == "success"
        assert np.max(np.linalg.norm(log.p_w - log.p_w[0], axis=1)) < 0.1

    def test_feature_lost_at_start(self):
        # landmark initially behind the camera
        plant0 = PlantState([8.0, 0.0, 3.0], np.zeros(3), g.quat_identity())
        ref = ReferencePoint(np.zeros(2), 2.0, np.zeros(3), g.quat_identity())
        log = run_closed_loop(
            small_controller(),
            lambda t: [ref] * 21,
            plant0,
            Landmark(),
            DEFAULT_EXTRINSICS,
            ZERO_NOISE,
            duration=1.0,
            dt=0.05,
        )
        assert log.outcome == "feature_lost"
        assert log.fail_time == 0.0
        assert log.n_ticks == 0

    def test_bit_identical_reruns(self):
        noise = NoiseModel(sigma_px=0.01, sigma_d_rel=0.01)
        l1 = hover_loop(duration=1.5, seed=42, noise=noise)
        l2 = hover_loop(duration=1.5, seed=42, noise=noise)
        assert np.array_equal(l1.p_w, l2.p_w)
        assert np.array_equal(l1.u, l2.u)
        assert np.array_equal(l1.s_c, l2.s_c)
        assert np.array_equal(l1.kkt, l2.kkt)
        assert l1.outcome == l2.outcome

    def test_measurement_has_no_position(self, rng):
        ps = PlantState([4.0, 0.0, 3.0], np.zeros(3), g.quat_identity())
        meas = observe(ps, Landmark(), DEFAULT_EXTRINSICS, ZERO_NOISE, rng)
        assert isinstance(meas, QuadVisualState)
        assert not hasattr(meas, "p_w")

    def test_model_plant_consistency_over_run(self):
        # roll the controller's model from the first measurement with the
        # executed inputs; it must track the observed sequence
        log = hover_loop(duration=1.5)
        plant0 = PlantState([4.0, 0.0, 3.0], np.zeros(3), g.quat_identity())
        rng = np.random.default_rng(0)
        x = observe(plant0, Landmark(), DEFAULT_EXTRINSICS, ZERO_NOISE, rng)
        worst_v = worst_d = 0.0
        for k in range(log.n_ticks - 1):
            x = rk4_step(x, ControlInput.from_vector(log.u[k]), log.dt, DEFAULT_EXTRINSICS)
            worst_v = max(worst_v, float(np.max(np.abs(x.v_w - log.v_w[k + 1]))))
            worst_d = max(worst_d, abs(x.d - log.d[k + 1]))
        assert worst_v < 1e-5
        assert worst_d < 1e-5
