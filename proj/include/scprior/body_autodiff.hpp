#pragma once

#include <vector>

#include "scprior/body_model.hpp"
#include "scprior/tensor.hpp"

namespace scprior {

// Per-(model, shape) constants reused across every forward pass that conditions
// on the same subject. Shape enters FK only through these.
struct FkConstants {
    MatX shaped;       // V x 3 shaped template
    MatX rest_joints;  // J x 3 regressed from the shaped template
};

inline FkConstants fk_constants(const BodyModel& model, const ShapeVector& shape) {
    FkConstants c;
    c.shaped = shaped_template(model, shape);
    c.rest_joints = model.joint_regressor * c.shaped;
    return c;
}

// Batched differentiable kinematics: poses in the 6D layout (B x 322) on the
// tape, shape constants fixed per sample.
struct FkOnTape {
    std::vector<ad::Tensor> vertices;      // B tensors, each V x 3
    std::vector<ad::Tensor> joint_pos;     // J tensors, each B x 3 (world joint positions)
};

namespace ad_detail {

// Gram-Schmidt for row-stacked 6D rotations: (N x 6) -> row-major matrices (N x 9).
// Degenerate rows produce non-finite values rather than throwing; training
// aborts on non-finite losses instead.
inline ad::Tensor rot6d_rows_to_matrices(const ad::Tensor& r6) {
    using namespace ad;
    Tensor a1 = slice(r6, 1, 0, 3);
    Tensor a2 = slice(r6, 1, 3, 3);
    Tensor n1 = sqrt_op(sum_cols(square(a1)));
    Tensor b1 = div(a1, n1);
    Tensor proj = sum_cols(mul(b1, a2));
    Tensor u2 = sub(a2, mul(b1, proj));
    Tensor n2 = sqrt_op(sum_cols(square(u2)));
    Tensor b2 = div(u2, n2);
    Tensor b3 = cross_rows(b1, b2);
    // row-major [b1 b2 b3] columns
    std::vector<Tensor> cols;
    for (int row = 0; row < 3; ++row)
        for (const Tensor* b : {&b1, &b2, &b3}) cols.push_back(slice(*b, 1, row, 1));
    return concat(cols, 1);
}

}  // namespace ad_detail

inline FkOnTape forward_kinematics_on_tape(ad::Tape& tape, const BodyModel& model,
                                           const ad::Tensor& poses_6d,
                                           const std::vector<const FkConstants*>& consts) {
    using namespace ad;
    const long B = poses_6d.rows();
    require(poses_6d.cols() == layout::kD6Dim, "fk_on_tape: poses must be in the 6D layout");
    require(static_cast<long>(consts.size()) == B, "fk_on_tape: one FkConstants per sample");
    const long J = model.joint_count();
    const long V = model.vertex_count();

    // all rotations at once, rotation-major: block r holds rows [r*B, (r+1)*B)
    std::vector<Tensor> rot_slices;
    for (long r = 0; r < layout::kRotations; ++r)
        rot_slices.push_back(slice(poses_6d, 1, layout::d6_offset_of_rotation(r), 6));
    Tensor local_rots = ad_detail::rot6d_rows_to_matrices(concat(rot_slices, 0));

    // constants per joint: bone offsets and rest positions across the batch
    auto batch_const = [&](auto&& fill) {
        Eigen::VectorXd data(B * 3);
        for (long s = 0; s < B; ++s) {
            const Vec3 v = fill(s);
            data[s * 3] = v.x();
            data[s * 3 + 1] = v.y();
            data[s * 3 + 2] = v.z();
        }
        return tape.constant(B, 3, std::move(data));
    };

    std::vector<Tensor> world_rot(static_cast<std::size_t>(J));
    std::vector<Tensor> world_pos(static_cast<std::size_t>(J));
    {
        Eigen::VectorXd ident(B * 9);
        for (long s = 0; s < B; ++s) {
            double* p = ident.data() + s * 9;
            p[0] = 1; p[1] = 0; p[2] = 0; p[3] = 0; p[4] = 1; p[5] = 0; p[6] = 0; p[7] = 0; p[8] = 1;
        }
        world_rot[0] = tape.constant(B, 9, std::move(ident));
        world_pos[0] = batch_const([&](long s) {
            return Vec3(consts[static_cast<std::size_t>(s)]->rest_joints.row(0).transpose());
        });
    }
    for (long j = 1; j < J; ++j) {
        const int par = model.kinematic_tree[static_cast<std::size_t>(j)];
        const long r = layout::rotation_of_joint(static_cast<int>(j));
        Tensor local = slice(local_rots, 0, r * B, B);
        world_rot[static_cast<std::size_t>(j)] = bmm33(world_rot[static_cast<std::size_t>(par)], local);
        Tensor offset = batch_const([&](long s) {
            const MatX& rj = consts[static_cast<std::size_t>(s)]->rest_joints;
            return Vec3((rj.row(j) - rj.row(par)).transpose());
        });
        world_pos[static_cast<std::size_t>(j)] =
            add(rot33_vec(world_rot[static_cast<std::size_t>(par)], offset),
                world_pos[static_cast<std::size_t>(par)]);
    }

    // skinning transforms relative to rest, stacked J x 12B
    std::vector<Tensor> joint_rows;
    for (long j = 0; j < J; ++j) {
        Tensor rest_j = batch_const([&](long s) {
            return Vec3(consts[static_cast<std::size_t>(s)]->rest_joints.row(j).transpose());
        });
        Tensor g_t = sub(world_pos[static_cast<std::size_t>(j)],
                         rot33_vec(world_rot[static_cast<std::size_t>(j)], rest_j));
        Tensor row = concat({world_rot[static_cast<std::size_t>(j)], g_t}, 1);  // B x 12
        joint_rows.push_back(reshape(row, 1, 12 * B));
    }
    Tensor stacked = concat(joint_rows, 0);  // J x 12B

    Tensor skin = tape.constant([&] {
        ad::RowMat m(V, J);
        for (long v = 0; v < V; ++v)
            for (long j = 0; j < J; ++j) m(v, j) = model.skinning_weights(v, j);
        return m;
    }());
    Tensor blended_all = matmul(skin, stacked);  // V x 12B

    FkOnTape out;
    out.joint_pos = world_pos;
    for (long s = 0; s < B; ++s) {
        Tensor expr = slice(slice(poses_6d, 0, s, 1), 1, layout::d6_expr, layout::kExpr);  // 1 x 10
        Tensor expr_bs_t = tape.constant([&] {
            ad::RowMat m(layout::kExpr, 3 * V);
            for (long e = 0; e < layout::kExpr; ++e)
                for (long i = 0; i < 3 * V; ++i) m(e, i) = model.expr_blendshapes(i, e);
            return m;
        }());
        Tensor disp = reshape(matmul(expr, expr_bs_t), V, 3);
        Tensor shaped = tape.constant([&] {
            ad::RowMat m(V, 3);
            for (long v = 0; v < V; ++v)
                for (int c = 0; c < 3; ++c) m(v, c) = consts[static_cast<std::size_t>(s)]->shaped(v, c);
            return m;
        }());
        Tensor rest = add(shaped, disp);
        Tensor blended = slice(blended_all, 1, 12 * s, 12);
        out.vertices.push_back(affine_apply_rows(blended, rest));
    }
    return out;
}

// Evaluation keypoints for one sample of a batched FK graph: K x 3.
inline ad::Tensor keypoints_on_tape(const BodyModel& model, const FkOnTape& fk, long sample) {
    using namespace ad;
    std::vector<Tensor> rows;
    for (const Keypoint& kp : model.keypoints) {
        if (kp.is_vertex)
            rows.push_back(slice(fk.vertices[static_cast<std::size_t>(sample)], 0, kp.index, 1));
        else
            rows.push_back(slice(fk.joint_pos[static_cast<std::size_t>(kp.index)], 0, sample, 1));
    }
    return concat(rows, 0);
}

// Differentiable pinhole projection of a K x 3 keypoint tensor. Points behind
// the camera raise at graph-construction time, naming the keypoint.
inline ad::Tensor project_keypoints_on_tape(ad::Tape& tape, const Camera& cam,
                                            const ad::Tensor& keypoints3d) {
    using namespace ad;
    Tensor rt = tape.constant([&] {
        ad::RowMat m(3, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m(i, j) = cam.rotation(j, i);  // transpose
        return m;
    }());
    Tensor trans = tape.constant([&] {
        ad::RowMat m(1, 3);
        m << cam.translation.x(), cam.translation.y(), cam.translation.z();
        return m;
    }());
    Tensor xc = add(matmul(keypoints3d, rt), trans);
    for (long k = 0; k < xc.rows(); ++k)
        if (xc.value()[k * 3 + 2] <= 1e-6)
            throw validation_error("project_keypoints: keypoint " + std::to_string(k) +
                                   " is behind the camera (z = " +
                                   std::to_string(xc.value()[k * 3 + 2]) + ")");
    Tensor x = slice(xc, 1, 0, 1);
    Tensor y = slice(xc, 1, 1, 1);
    Tensor z = slice(xc, 1, 2, 1);
    Tensor u = add_scalar(scale(div(x, z), cam.fx), cam.cx);
    Tensor v = add_scalar(scale(div(y, z), cam.fy), cam.cy);
    return concat({u, v}, 1);
}

// Confidence-weighted squared reprojection error in pixels:
// sum_k w_k ||p_k - q_k||^2 / sum_k w_k.
inline ad::Tensor keypoint_fit_loss(ad::Tape& tape, const ad::Tensor& projected,
                                    const Keypoints2D& observed) {
    using namespace ad;
    require(projected.rows() == observed.positions.rows(), "keypoint loss: K mismatch");
    const double wsum = observed.confidence.sum();
    require(wsum > 0, "keypoint loss: all confidences are zero");
    Tensor target = tape.constant([&] {
        ad::RowMat m(observed.positions.rows(), 2);
        for (long k = 0; k < observed.positions.rows(); ++k) {
            m(k, 0) = observed.positions(k, 0);
            m(k, 1) = observed.positions(k, 1);
        }
        return m;
    }());
    Tensor w = tape.constant([&] {
        ad::RowMat m(observed.confidence.size(), 1);
        for (long k = 0; k < observed.confidence.size(); ++k) m(k, 0) = observed.confidence[k];
        return m;
    }());
    Tensor sq = sum_cols(square(sub(projected, target)));
    return scale(sum(mul(sq, w)), 1.0 / wsum);
}

}  // namespace scprior
