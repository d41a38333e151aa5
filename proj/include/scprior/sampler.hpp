#pragma once

#include <cmath>
#include <vector>

#include "scprior/body_autodiff.hpp"
#include "scprior/denoiser.hpp"
#include "scprior/diffusion.hpp"
#include "scprior/geometry.hpp"

namespace scprior {

struct SampleConfig {
    long interval = 10;          // 1 for refinement
    double guidance_scale = 0;   // anti-collision guidance weight
    std::uint64_t seed = 0;
    double eta = 0;              // deterministic DDIM; kept at 0 throughout
};

// Deterministic DDIM update: recover eps_n from the x0 prediction, then jump
// to n_prev. alpha_bar(0) = 1, so n_prev = 0 returns x0_hat exactly.
inline VecX ddim_step(const DiffusionSchedule& sch, const VecX& x_n, const VecX& x0_hat, long n,
                      long n_prev) {
    require(n > n_prev && n_prev >= 0 && n <= sch.T, "ddim_step: need T >= n > n_prev >= 0");
    const double ab_n = sch.alpha_bar_at(n);
    const double ab_p = sch.alpha_bar_at(n_prev);
    const VecX eps_n = (x_n - std::sqrt(ab_n) * x0_hat) / std::sqrt(1.0 - ab_n);
    return std::sqrt(ab_p) * x0_hat + std::sqrt(1.0 - ab_p) * eps_n;
}

namespace sampler_detail {

// gradient of the collision loss of mesh(x0_hat(x_n)) with respect to x_n,
// back-propagated through the denoiser and the kinematic chain
inline VecX collision_guidance_grad(const DenoiserNet& net, const BodyModel& model,
                                    const VecX& x_n, long n, const VecX& cond,
                                    const FkConstants& consts, Bvh* scratch) {
    ad::Tape tape;
    ad::Tensor x = tape.leaf(1, layout::kD6Dim, x_n);
    ad::Tensor c = tape.constant(1, cond.size(), cond);
    ad::Tensor x0_hat = net.forward(tape, x, {n}, c);
    const FkOnTape fk = forward_kinematics_on_tape(tape, model, x0_hat, {&consts});
    ad::Tensor loss = collision_loss_op(tape, fk.vertices[0], model.faces, model, scratch);
    if (loss.scalar() == 0.0) return VecX::Zero(layout::kD6Dim);
    tape.backward(loss);
    return x.grad();
}

}  // namespace sampler_detail

struct SampleResult {
    VecX pose6d;  // final x0 prediction, 322
    PoseVector pose;
    double collision_ratio = 0;  // of the decoded mesh, hand probes
};

// Reverse-process sampling from pure noise with optional anti-collision
// guidance. Deterministic given (weights, config.seed, cond).
inline SampleResult sample_random(const DenoiserNet& net, const DiffusionSchedule& sch,
                                  const VecX& cond, const SampleConfig& cfg, const BodyModel& model,
                                  const ShapeVector& mesh_shape) {
    require(cfg.interval >= 1, "sample: interval must be at least 1");
    Rng rng(cfg.seed);
    VecX x(layout::kD6Dim);
    for (long d = 0; d < layout::kD6Dim; ++d) x[d] = rng.normal();

    const FkConstants consts = fk_constants(model, mesh_shape);
    Bvh scratch;
    long n = sch.T;
    VecX x0_hat = x;
    while (n > 0) {
        const long n_prev = std::max<long>(n - cfg.interval, 0);
        x0_hat = net.denoise(x, n, cond);
        if (!x0_hat.allFinite())
            throw error("sample: non-finite state at step " + std::to_string(n));
        VecX next = ddim_step(sch, x, x0_hat, n, n_prev);
        if (cfg.guidance_scale > 0) {
            const VecX g = sampler_detail::collision_guidance_grad(net, model, x, n, cond, consts,
                                                                   &scratch);
            next -= cfg.guidance_scale * g;
        }
        x = next;
        n = n_prev;
    }

    SampleResult out;
    out.pose6d = x;  // n = 0 state equals the final x0 prediction
    out.pose = unpack_pose_6d(out.pose6d);
    const FkResult fk = forward_kinematics(model, out.pose, mesh_shape);
    Bvh eval_bvh;
    out.collision_ratio = hand_collision_loss(fk.vertices, model.faces, model, &eval_bvh).report.ratio;
    return out;
}

// Alg. 1 request: initial pose, identity, observed keypoints, fitting weight,
// start step, and the per-dimension blend mask.
struct RefineRequest {
    VecX x_init_6d;  // 322
    ShapeVector shape;
    Keypoints2D p2d;
    Camera camera;
    double lambda_2d = 0.01;
    long n_r = 100;
    VecX mask;  // 322 entries in {0,1}; empty means all ones
    std::uint64_t seed = 0;
    // full backprop of the keypoint gradient through the denoiser; the cheap
    // variant rescales the gradient at the x0 prediction by 1/sqrt(abar_n)
    bool full_backprop = true;

    void validate(long T) const {
        require(x_init_6d.size() == layout::kD6Dim, "refine: initial pose must be 322-dimensional");
        require(n_r >= 1 && n_r <= T, "refine: n_r outside [1, T]");
        require(lambda_2d >= 0, "refine: lambda_2d must be non-negative");
        require(mask.size() == 0 || mask.size() == layout::kD6Dim,
                "refine: mask length must match the pose layout");
    }
};

struct RefineResult {
    VecX pose6d;
    PoseVector pose;
    double reproj_before = 0;
    double reproj_after = 0;
    bool guidance_skipped = false;  // all confidences were zero
};

// confidence-weighted mean Euclidean reprojection error, in pixels
inline double reproject_error(const VecX& pose6d, const ShapeVector& shape, const Camera& camera,
                              const Keypoints2D& p2d, const BodyModel& model) {
    const double wsum = p2d.confidence.sum();
    require(wsum > 0, "reproject_error: no confident keypoints");
    const FkResult fk = forward_kinematics(model, unpack_pose_6d(pose6d), shape);
    const MatX uv = project_keypoints(camera, fk.keypoints3d);
    double acc = 0;
    for (long k = 0; k < uv.rows(); ++k)
        acc += p2d.confidence[k] * (uv.row(k) - p2d.positions.row(k)).norm();
    return acc / wsum;
}

// Single-view pose refinement (Alg. 1): diffuse the initial pose to n_r, then
// denoise with interval 1, blending unrefined dimensions back to the initial
// pose each step and descending the 2D keypoint error.
inline RefineResult refine_single_view(const DenoiserNet& net, const DiffusionSchedule& sch,
                                       const BodyModel& model, const RefineRequest& req) {
    req.validate(sch.T);
    const VecX mask = req.mask.size() ? req.mask : VecX::Ones(layout::kD6Dim);
    const VecX inv_mask = VecX::Ones(layout::kD6Dim) - mask;
    const bool have_confidence = req.p2d.confidence.sum() > 0;

    RefineResult out;
    out.guidance_skipped = !have_confidence;
    if (have_confidence)
        out.reproj_before = reproject_error(req.x_init_6d, req.shape, req.camera, req.p2d, model);

    Rng rng(req.seed);
    VecX eps(layout::kD6Dim);
    for (long d = 0; d < layout::kD6Dim; ++d) eps[d] = rng.normal();
    VecX x = noise_pose(req.x_init_6d, req.n_r, eps, sch);

    const FkConstants consts = fk_constants(model, req.shape);
    const VecX cond = req.shape.coefficients;

    VecX x0_blend = req.x_init_6d;
    for (long n = req.n_r; n >= 1; --n) {
        VecX grad = VecX::Zero(layout::kD6Dim);
        if (have_confidence && req.lambda_2d > 0) {
            ad::Tape tape;
            ad::Tensor x_leaf = tape.leaf(1, layout::kD6Dim, x);
            ad::Tensor c = tape.constant(1, cond.size(), cond);
            ad::Tensor x0_hat_t = net.forward(tape, x_leaf, {n}, c);
            // blended pose denoising on the tape so the gradient sees it
            ad::Tensor blended =
                ad::add(ad::mul(x0_hat_t, tape.constant(1, layout::kD6Dim, mask)),
                        tape.constant(1, layout::kD6Dim,
                                      Eigen::VectorXd(inv_mask.cwiseProduct(req.x_init_6d))));
            const FkOnTape fk = forward_kinematics_on_tape(tape, model, blended, {&consts});
            ad::Tensor kp3d = keypoints_on_tape(model, fk, 0);
            ad::Tensor uv = project_keypoints_on_tape(tape, req.camera, kp3d);
            ad::Tensor fit = keypoint_fit_loss(tape, uv, req.p2d);
            x0_blend = blended.value();
            if (req.full_backprop) {
                tape.backward(fit);
                grad = x_leaf.grad();
            } else {
                // gradient at the blended prediction, chained with
                // d(x0_hat)/d(x_n) ~ I / sqrt(abar_n)
                tape.backward(fit);
                Eigen::VectorXd at_blend = blended.grad();
                if (at_blend.size() == 0) at_blend = Eigen::VectorXd::Zero(layout::kD6Dim);
                grad = at_blend / std::sqrt(sch.alpha_bar_at(n));
            }
        } else {
            const VecX x0_hat = net.denoise(x, n, cond);
            x0_blend = mask.cwiseProduct(x0_hat) + inv_mask.cwiseProduct(req.x_init_6d);
        }
        if (!x0_blend.allFinite() || !grad.allFinite())
            throw error("refine: non-finite state at step " + std::to_string(n));
        x = ddim_step(sch, x, x0_blend, n, n - 1) - req.lambda_2d * grad;
    }

    out.pose6d = x0_blend;
    out.pose = unpack_pose_6d(out.pose6d);
    if (have_confidence)
        out.reproj_after = reproject_error(out.pose6d, req.shape, req.camera, req.p2d, model);
    return out;
}

// part-level blend mask presets
inline VecX refine_mask_all() { return VecX::Ones(layout::kD6Dim); }
inline VecX refine_mask_none() { return VecX::Zero(layout::kD6Dim); }

// face, both hands, and body joints above the pelvis (legs stay pinned)
inline VecX refine_mask_upper_body() {
    VecX mask = VecX::Ones(layout::kD6Dim);
    for (int j = 6; j <= 13; ++j) {  // hips, knees, ankles, feet
        const long r = layout::rotation_of_joint(j);
        const long off = layout::d6_offset_of_rotation(r);
        for (long d = 0; d < 6; ++d) mask[off + d] = 0;
    }
    return mask;
}

}  // namespace scprior
