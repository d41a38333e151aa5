#include <catch2/catch_amalgamated.hpp>

#include "scprior/body_autodiff.hpp"
#include "scprior/body_builder.hpp"

using namespace scprior;
using namespace scprior::ad;

namespace {
const BodyModel& test_model() {
    static BodyModel m = build_default_model(16);
    return m;
}

PoseVector random_pose(Rng& rng, double scale) {
    PoseVector p;
    p.jaw = Vec3(rng.normal(), rng.normal(), rng.normal()) * scale * 0.3;
    for (long i = 0; i < 10; ++i) p.expression[i] = rng.normal();
    for (long r = 0; r < 15; ++r) {
        p.right_hand.row(r) << rng.normal() * scale, rng.normal() * scale, rng.normal() * scale;
        p.left_hand.row(r) << rng.normal() * scale, rng.normal() * scale, rng.normal() * scale;
    }
    for (long r = 0; r < 21; ++r)
        p.body.row(r) << rng.normal() * scale, rng.normal() * scale, rng.normal() * scale;
    return p;
}

Eigen::VectorXd flat_rows(const MatX& m) {
    Eigen::VectorXd v(m.size());
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
    return v;
}
}  // namespace

TEST_CASE("tape kinematics match the plain implementation across a batch") {
    const BodyModel& m = test_model();
    Rng rng(17);
    const long B = 3;

    std::vector<PoseVector> poses;
    std::vector<ShapeVector> shapes;
    std::vector<FkConstants> consts;
    MatX batch(B, layout::kD6Dim);
    for (long s = 0; s < B; ++s) {
        poses.push_back(random_pose(rng, 0.4));
        VecX coeff(m.shape_dim());
        for (long k = 0; k < m.shape_dim(); ++k) coeff[k] = rng.normal();
        shapes.emplace_back(coeff);
        consts.push_back(fk_constants(m, shapes.back()));
        batch.row(s) = pack_pose_6d(poses.back()).transpose();
    }

    Tape tape;
    Tensor pose_t = tape.leaf(B, layout::kD6Dim, flat_rows(batch));
    std::vector<const FkConstants*> cptr;
    for (const auto& c : consts) cptr.push_back(&c);
    const FkOnTape fk = forward_kinematics_on_tape(tape, m, pose_t, cptr);

    for (long s = 0; s < B; ++s) {
        const FkResult plain = forward_kinematics(m, poses[static_cast<std::size_t>(s)],
                                                  shapes[static_cast<std::size_t>(s)]);
        CMapM verts = fk.vertices[static_cast<std::size_t>(s)].mat();
        double max_err = 0;
        for (long v = 0; v < m.vertex_count(); ++v)
            for (int c = 0; c < 3; ++c)
                max_err = std::max(max_err, std::abs(verts(v, c) - plain.vertices(v, c)));
        REQUIRE(max_err < 1e-9);
        for (long j = 0; j < m.joint_count(); ++j) {
            CMapM jp = fk.joint_pos[static_cast<std::size_t>(j)].mat();
            for (int c = 0; c < 3; ++c)
                REQUIRE(std::abs(jp(s, c) - plain.joints(j, c)) < 1e-9);
        }
        const Tensor kp = keypoints_on_tape(m, fk, s);
        CMapM kpm = kp.mat();
        for (long k = 0; k < m.keypoint_count(); ++k)
            for (int c = 0; c < 3; ++c)
                REQUIRE(std::abs(kpm(k, c) - plain.keypoints3d(k, c)) < 1e-9);
    }
}

TEST_CASE("vertex coordinates pass finite differences against pose parameters") {
    const BodyModel& m = test_model();
    Rng rng(18);
    const PoseVector pose = random_pose(rng, 0.3);
    VecX coeff = VecX::Zero(m.shape_dim());
    coeff[1] = 0.8;
    const ShapeVector shape{coeff};
    const FkConstants consts = fk_constants(m, shape);
    const VecX x0 = pack_pose_6d(pose);

    auto eval = [&](const VecX& x, long vertex, int coord) {
        Tape tape;
        Tensor pose_t = tape.leaf(1, layout::kD6Dim, x);
        const FkOnTape fk = forward_kinematics_on_tape(tape, m, pose_t, {&consts});
        return fk.vertices[0].mat()(vertex, coord);
    };

    // analytic gradient of a handful of vertex coordinates
    Rng pick(19);
    for (int trial = 0; trial < 4; ++trial) {
        const long vertex = static_cast<long>(pick.uniform_int(static_cast<std::uint64_t>(m.vertex_count())));
        const int coord = static_cast<int>(pick.uniform_int(3));
        Tape tape;
        Tensor pose_t = tape.leaf(1, layout::kD6Dim, x0);
        const FkOnTape fk = forward_kinematics_on_tape(tape, m, pose_t, {&consts});
        Tensor target = slice(slice(fk.vertices[0], 0, vertex, 1), 1, coord, 1);
        tape.backward(sum(target));
        const Eigen::VectorXd grad = pose_t.grad();

        // probe a spread of pose dimensions, including expression
        for (long d : {0L, 7L, 40L, 130L, 250L, 320L}) {
            const double h = 1e-5;
            VecX xp = x0, xm = x0;
            xp[d] += h;
            xm[d] -= h;
            const double fd = (eval(xp, vertex, coord) - eval(xm, vertex, coord)) / (2 * h);
            const double scale = std::max({1.0, std::abs(fd), std::abs(grad[d])});
            REQUIRE(std::abs(fd - grad[d]) <= 1e-4 * scale);
        }
    }
}

TEST_CASE("expression coefficients move face vertices differentiably") {
    const BodyModel& m = test_model();
    const FkConstants consts = fk_constants(m, ShapeVector::zero(m.shape_dim()));
    Tape tape;
    Tensor pose_t = tape.leaf(1, layout::kD6Dim, VecX::Zero(layout::kD6Dim));
    // make the jaw 6D valid (identity)
    {
        Eigen::VectorXd x = VecX::Zero(layout::kD6Dim);
        for (long r = 0; r < layout::kRotations; ++r) {
            const long off = layout::d6_offset_of_rotation(r);
            x[off] = 1;
            x[off + 4] = 1;
        }
        pose_t = tape.leaf(1, layout::kD6Dim, x);
    }
    const FkOnTape fk = forward_kinematics_on_tape(tape, m, pose_t, {&consts});
    const int fv = m.mask_face[2];
    tape.backward(sum(slice(fk.vertices[0], 0, fv, 1)));
    double expr_grad_norm = 0;
    for (long e = 0; e < layout::kExpr; ++e)
        expr_grad_norm += std::abs(pose_t.grad()[layout::d6_expr + e]);
    REQUIRE(expr_grad_norm > 0);
}

TEST_CASE("projection on tape matches the plain camera and its Jacobian") {
    const Camera cam = default_camera();
    Rng rng(20);
    MatX pts(5, 3);
    for (long k = 0; k < 5; ++k)
        pts.row(k) << rng.normal() * 0.3, 1.2 + rng.normal() * 0.3, rng.normal() * 0.3;

    Tape tape;
    Tensor kp = tape.leaf(5, 3, flat_rows(pts));
    Tensor uv = project_keypoints_on_tape(tape, cam, kp);
    const MatX plain = project_keypoints(cam, pts);
    for (long k = 0; k < 5; ++k) {
        REQUIRE(uv.mat()(k, 0) == Catch::Approx(plain(k, 0)).margin(1e-10));
        REQUIRE(uv.mat()(k, 1) == Catch::Approx(plain(k, 1)).margin(1e-10));
    }

    // Jacobian vs finite differences through the plain projection
    tape.backward(sum(slice(uv, 1, 0, 1)));  // sum of all u coordinates
    for (long k = 0; k < 5; ++k)
        for (int c = 0; c < 3; ++c) {
            const double h = 1e-6;
            MatX pp = pts, pm = pts;
            pp(k, c) += h;
            pm(k, c) -= h;
            const double fd =
                (project_keypoints(cam, pp).col(0).sum() - project_keypoints(cam, pm).col(0).sum()) /
                (2 * h);
            const double an = kp.grad()[k * 3 + c];
            REQUIRE(std::abs(fd - an) <= 1e-5 * std::max({1.0, std::abs(fd), std::abs(an)}));
        }
}

TEST_CASE("keypoint fit loss: exact projection gives zero, 3-4-5 offset gives 25") {
    const Camera cam = default_camera();
    MatX pts(2, 3);
    pts << 0.0, 1.2, 0.0, 0.1, 1.3, 0.1;

    Tape tape;
    Tensor kp = tape.leaf(2, 3, flat_rows(pts));
    Tensor uv = project_keypoints_on_tape(tape, cam, kp);

    Keypoints2D obs;
    obs.positions = project_keypoints(cam, pts);
    obs.confidence = VecX::Ones(2);
    REQUIRE(keypoint_fit_loss(tape, uv, obs).scalar() == Catch::Approx(0.0).margin(1e-18));

    obs.positions(0, 0) += 3.0;
    obs.positions(0, 1) += 4.0;
    obs.confidence << 1.0, 0.0;  // second keypoint has no confidence
    REQUIRE(keypoint_fit_loss(tape, uv, obs).scalar() == Catch::Approx(25.0).margin(1e-9));

    obs.confidence << 0.0, 0.0;
    REQUIRE_THROWS_AS(keypoint_fit_loss(tape, uv, obs), validation_error);
}

TEST_CASE("behind-camera keypoints raise at construction with the index") {
    const Camera cam = default_camera();
    MatX pts(2, 3);
    pts << 0.0, 1.2, 0.0, 0.0, 1.2, 5.0;  // second point behind the camera plane
    Tape tape;
    Tensor kp = tape.leaf(2, 3, flat_rows(pts));
    try {
        project_keypoints_on_tape(tape, cam, kp);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        REQUIRE(std::string(e.what()).find("keypoint 1") != std::string::npos);
    }
}
