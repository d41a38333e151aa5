#include <catch2/catch_amalgamated.hpp>

#include "scprior/body_builder.hpp"
#include "scprior/sampler.hpp"

using namespace scprior;

namespace {
const BodyModel& test_model() {
    static BodyModel m = build_default_model(10);
    return m;
}

VecX random_pose_6d(Rng& rng, double scale) {
    VecX aa(layout::kAaDim);
    for (long d = 0; d < layout::kAaDim; ++d) aa[d] = rng.normal() * scale;
    return pose_aa_to_6d(aa);
}

// denoiser that outputs `target` for every input: zero output projections
// with the target folded into the decoder biases
DenoiserNet oracle_net(const VecX& target, long n_shape) {
    DenoiserConfig cfg;
    cfg.n_shape = n_shape;
    cfg.blocks = 1;
    DenoiserNet net = DenoiserNet::init(cfg, 99);
    net.zero_output_projections();
    net.param("dec_face_b").value = target.segment(layout::d6_jaw, layout::d6_face_dim);
    net.param("dec_rh_b").value = target.segment(layout::d6_rh, layout::d6_hand_dim);
    net.param("dec_lh_b").value = target.segment(layout::d6_lh, layout::d6_hand_dim);
    net.param("dec_body_b").value = target.segment(layout::d6_body, layout::d6_body_dim);
    return net;
}

Keypoints2D observe(const BodyModel& m, const VecX& pose6d, const ShapeVector& shape,
                    const Camera& cam) {
    Keypoints2D obs;
    obs.positions = project_keypoints(cam, forward_kinematics(m, unpack_pose_6d(pose6d), shape).keypoints3d);
    obs.confidence = VecX::Ones(m.keypoint_count());
    return obs;
}
}  // namespace

TEST_CASE("ddim_step lands on the x0 prediction at n_prev = 0") {
    const DiffusionSchedule sch = cosine_schedule(1000);
    Rng rng(80);
    VecX x0(322), xn(322);
    for (long d = 0; d < 322; ++d) {
        x0[d] = rng.normal();
        xn[d] = rng.normal();
    }
    const VecX out = ddim_step(sch, xn, x0, 37, 0);
    REQUIRE((out - x0).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE_THROWS_AS(ddim_step(sch, xn, x0, 10, 10), validation_error);
    REQUIRE_THROWS_AS(ddim_step(sch, xn, x0, 1001, 0), validation_error);
}

TEST_CASE("ddim_step with the true x0 reproduces the forward noising at n_prev") {
    const DiffusionSchedule sch = cosine_schedule(1000);
    Rng rng(81);
    VecX x0(322), eps(322);
    for (long d = 0; d < 322; ++d) {
        x0[d] = rng.normal();
        eps[d] = rng.normal();
    }
    for (auto [n, p] : std::vector<std::pair<long, long>>{{1000, 900}, {500, 499}, {123, 3}}) {
        const VecX xn = noise_pose(x0, n, eps, sch);
        const VecX hop = ddim_step(sch, xn, x0, n, p);
        const VecX direct = noise_pose(x0, p, eps, sch);
        REQUIRE((hop - direct).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("ddim_step is a fixed point when alpha_bar does not move") {
    DiffusionSchedule sch;  // hand-built tables, bypassing the cosine builder
    sch.T = 3;
    sch.beta = VecX::Constant(3, 0.1);
    sch.alpha = VecX::Constant(3, 0.9);
    sch.alpha_bar.resize(3);
    sch.alpha_bar << 0.5, 0.5, 0.25;  // equal at t = 1, 2
    Rng rng(82);
    VecX xn(322);
    for (long d = 0; d < 322; ++d) xn[d] = rng.normal();
    const VecX out = ddim_step(sch, xn, xn, 2, 1);
    REQUIRE((out - xn).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random sampling is deterministic in its seed") {
    const BodyModel& m = test_model();
    Rng rng(83);
    DenoiserConfig cfg;
    cfg.n_shape = m.shape_dim();
    cfg.blocks = 1;
    const DenoiserNet net = DenoiserNet::init(cfg, 84);
    const DiffusionSchedule sch = cosine_schedule(200);
    SampleConfig sample_cfg;
    sample_cfg.interval = 20;
    sample_cfg.seed = 5;
    const VecX cond = VecX::Zero(m.shape_dim());
    const SampleResult a = sample_random(net, sch, cond, sample_cfg, m, ShapeVector::zero(m.shape_dim()));
    const SampleResult b = sample_random(net, sch, cond, sample_cfg, m, ShapeVector::zero(m.shape_dim()));
    REQUIRE((a.pose6d - b.pose6d).norm() == 0.0);
    sample_cfg.seed = 6;
    const SampleResult c = sample_random(net, sch, cond, sample_cfg, m, ShapeVector::zero(m.shape_dim()));
    REQUIRE((a.pose6d - c.pose6d).norm() > 0.0);
}

TEST_CASE("an oracle denoiser collapses sampling to its target for any seed") {
    const BodyModel& m = test_model();
    Rng rng(85);
    const VecX target = random_pose_6d(rng, 0.3);
    const DenoiserNet net = oracle_net(target, m.shape_dim());
    const DiffusionSchedule sch = cosine_schedule(1000);
    const VecX cond = VecX::Zero(m.shape_dim());
    for (std::uint64_t seed : {1ull, 42ull, 987ull}) {
        SampleConfig cfg;
        cfg.interval = 10;
        cfg.seed = seed;
        const SampleResult res = sample_random(net, sch, cond, cfg, m, ShapeVector::zero(m.shape_dim()));
        REQUIRE((res.pose6d - target).cwiseAbs().maxCoeff() < 1e-6);
    }
    // interval-1 and interval-k trajectories coincide for a constant denoiser
    SampleConfig c1, c10;
    c1.interval = 1;
    c10.interval = 10;
    c1.seed = c10.seed = 3;
    const SampleResult r1 = sample_random(net, sch, cond, c1, m, ShapeVector::zero(m.shape_dim()));
    const SampleResult r10 = sample_random(net, sch, cond, c10, m, ShapeVector::zero(m.shape_dim()));
    REQUIRE((r1.pose6d - r10.pose6d).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("an all-zero blend mask returns the initial pose bit-exactly") {
    const BodyModel& m = test_model();
    Rng rng(86);
    DenoiserConfig dcfg;
    dcfg.n_shape = m.shape_dim();
    dcfg.blocks = 1;
    const DenoiserNet net = DenoiserNet::init(dcfg, 87);
    const DiffusionSchedule sch = cosine_schedule(200);

    RefineRequest req;
    req.x_init_6d = random_pose_6d(rng, 0.25);
    req.shape = ShapeVector::zero(m.shape_dim());
    req.camera = default_camera();
    req.p2d = observe(m, req.x_init_6d, req.shape, req.camera);
    req.n_r = 40;
    req.mask = refine_mask_none();
    req.seed = 11;
    const RefineResult res = refine_single_view(net, sch, m, req);
    REQUIRE((res.pose6d - req.x_init_6d).norm() == 0.0);
}

TEST_CASE("oracle refinement with full mask converges to the oracle target") {
    const BodyModel& m = test_model();
    Rng rng(88);
    const VecX target = random_pose_6d(rng, 0.3);
    const DenoiserNet net = oracle_net(target, m.shape_dim());
    const DiffusionSchedule sch = cosine_schedule(1000);

    RefineRequest req;
    req.x_init_6d = random_pose_6d(rng, 0.3);
    req.shape = ShapeVector::zero(m.shape_dim());
    req.camera = default_camera();
    req.p2d = observe(m, target, req.shape, req.camera);
    req.lambda_2d = 0.0;
    req.n_r = 100;
    req.seed = 12;
    const RefineResult res = refine_single_view(net, sch, m, req);
    REQUIRE((res.pose6d - target).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("guidance off reduces refinement to a separately coded pure DDIM loop") {
    const BodyModel& m = test_model();
    Rng rng(89);
    DenoiserConfig dcfg;
    dcfg.n_shape = m.shape_dim();
    dcfg.blocks = 1;
    const DenoiserNet net = DenoiserNet::init(dcfg, 90);
    const DiffusionSchedule sch = cosine_schedule(200);

    RefineRequest req;
    req.x_init_6d = random_pose_6d(rng, 0.2);
    req.shape = ShapeVector::zero(m.shape_dim());
    req.camera = default_camera();
    req.p2d = observe(m, req.x_init_6d, req.shape, req.camera);
    req.lambda_2d = 0.0;
    req.n_r = 50;
    req.seed = 13;
    const RefineResult res = refine_single_view(net, sch, m, req);

    // independent loop: noise to n_r, then plain x0-prediction DDIM
    Rng noise_rng(13);
    VecX eps(layout::kD6Dim);
    for (long d = 0; d < layout::kD6Dim; ++d) eps[d] = noise_rng.normal();
    VecX x = noise_pose(req.x_init_6d, req.n_r, eps, sch);
    VecX x0_hat = req.x_init_6d;
    const VecX cond = req.shape.coefficients;
    for (long n = req.n_r; n >= 1; --n) {
        x0_hat = net.denoise(x, n, cond);
        x = ddim_step(sch, x, x0_hat, n, n - 1);
    }
    REQUIRE((res.pose6d - x0_hat).norm() == 0.0);
}

TEST_CASE("all-zero confidences skip guidance with a warning flag") {
    const BodyModel& m = test_model();
    Rng rng(91);
    DenoiserConfig dcfg;
    dcfg.n_shape = m.shape_dim();
    dcfg.blocks = 1;
    const DenoiserNet net = DenoiserNet::init(dcfg, 92);
    const DiffusionSchedule sch = cosine_schedule(100);

    RefineRequest req;
    req.x_init_6d = random_pose_6d(rng, 0.2);
    req.shape = ShapeVector::zero(m.shape_dim());
    req.camera = default_camera();
    req.p2d.positions = MatX::Zero(m.keypoint_count(), 2);
    req.p2d.confidence = VecX::Zero(m.keypoint_count());
    req.n_r = 10;
    const RefineResult res = refine_single_view(net, sch, m, req);
    REQUIRE(res.guidance_skipped);
    REQUIRE(res.pose6d.allFinite());
}

TEST_CASE("keypoint guidance deflects the refinement trajectory") {
    // a net with a nonzero Jacobian: guidance must change the output for both
    // gradient routes, and a constant oracle must be immune (its output cannot
    // depend on the trajectory at all)
    const BodyModel& m = test_model();
    Rng rng(93);
    DenoiserConfig dcfg;
    dcfg.n_shape = m.shape_dim();
    dcfg.blocks = 1;
    const DenoiserNet net = DenoiserNet::init(dcfg, 95);
    const DiffusionSchedule sch = cosine_schedule(200);

    const VecX init = random_pose_6d(rng, 0.2);
    VecX target_aa = pose_6d_to_aa(init);
    target_aa[layout::aa_body + 3] += 0.15;
    const VecX target = pose_aa_to_6d(target_aa);

    RefineRequest req;
    req.x_init_6d = init;
    req.shape = ShapeVector::zero(m.shape_dim());
    req.camera = default_camera();
    req.p2d = observe(m, target, req.shape, req.camera);
    req.n_r = 30;
    req.seed = 14;

    RefineRequest off = req;
    off.lambda_2d = 0.0;
    const RefineResult plain = refine_single_view(net, sch, m, off);

    const RefineResult full = refine_single_view(net, sch, m, req);
    REQUIRE((full.pose6d - plain.pose6d).norm() > 0.0);

    RefineRequest cheap = req;
    cheap.full_backprop = false;
    const RefineResult approx = refine_single_view(net, sch, m, cheap);
    REQUIRE((approx.pose6d - plain.pose6d).norm() > 0.0);

    const DenoiserNet oracle = oracle_net(init, m.shape_dim());
    const RefineResult guided_oracle = refine_single_view(oracle, sch, m, req);
    REQUIRE((guided_oracle.pose6d - init).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("reproject_error diagnostics") {
    const BodyModel& m = test_model();
    Rng rng(94);
    const VecX pose = random_pose_6d(rng, 0.2);
    const ShapeVector shape = ShapeVector::zero(m.shape_dim());
    const Camera cam = default_camera();

    SECTION("a pose matching its observation scores zero") {
        const Keypoints2D obs = observe(m, pose, shape, cam);
        REQUIRE(reproject_error(pose, shape, cam, obs, m) == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("a single confident keypoint offset by (3,4) scores 5") {
        Keypoints2D obs = observe(m, pose, shape, cam);
        obs.confidence.setZero();
        obs.confidence[3] = 1.0;
        obs.positions(3, 0) += 3.0;
        obs.positions(3, 1) += 4.0;
        REQUIRE(reproject_error(pose, shape, cam, obs, m) == Catch::Approx(5.0).margin(1e-9));
    }

    SECTION("matches an independent recomputation on random poses") {
        for (int i = 0; i < 10; ++i) {
            const VecX p = random_pose_6d(rng, 0.25);
            Keypoints2D obs;
            obs.positions = MatX::Zero(m.keypoint_count(), 2);
            for (long k = 0; k < m.keypoint_count(); ++k)
                obs.positions.row(k) << 600 + rng.normal() * 50, 500 + rng.normal() * 50;
            obs.confidence = VecX::Ones(m.keypoint_count());
            for (long k = 0; k < m.keypoint_count(); ++k) obs.confidence[k] = rng.uniform();

            const double got = reproject_error(p, shape, cam, obs, m);
            // second code path: per-keypoint camera transform and projection
            const FkResult fk = forward_kinematics(m, unpack_pose_6d(p), shape);
            double acc = 0, wsum = 0;
            for (long k = 0; k < m.keypoint_count(); ++k) {
                const Vec3 pc = cam.rotation * Vec3(fk.keypoints3d.row(k).transpose()) + cam.translation;
                const double u = cam.fx * pc.x() / pc.z() + cam.cx;
                const double v = cam.fy * pc.y() / pc.z() + cam.cy;
                const double du = u - obs.positions(k, 0), dv = v - obs.positions(k, 1);
                acc += obs.confidence[k] * std::sqrt(du * du + dv * dv);
                wsum += obs.confidence[k];
            }
            REQUIRE(got == Catch::Approx(acc / wsum).margin(1e-9));
        }
    }

    SECTION("no confident keypoints raises") {
        Keypoints2D obs;
        obs.positions = MatX::Zero(m.keypoint_count(), 2);
        obs.confidence = VecX::Zero(m.keypoint_count());
        REQUIRE_THROWS_AS(reproject_error(pose, shape, cam, obs, m), validation_error);
    }
}
