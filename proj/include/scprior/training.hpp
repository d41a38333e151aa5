#pragma once

#include <functional>
#include <vector>

#include "scprior/body_autodiff.hpp"
#include "scprior/dataset.hpp"
#include "scprior/denoiser.hpp"
#include "scprior/diffusion.hpp"
#include "scprior/geometry.hpp"

namespace scprior {

struct TrainConfig {
    double lambda_theta = 1.0;
    double lambda_v = 1e-3;
    double lambda_col = 1e-4;
    double perturb_prob = 0.3;
    double perturb_scale = 1e-4;
    long batch_size = 32;
    long iterations = 5000;
    long T = 1000;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    // ablation flags
    bool shape_cond = true;
    bool part_attention = true;
    bool shape_rand = true;
    // architecture knobs (both readings of the stack depth are reachable)
    long blocks = 2;
    long ffn_expansion = 4;

    void validate() const {
        require(lambda_theta >= 0 && lambda_v >= 0 && lambda_col >= 0,
                "train config: loss weights must be non-negative");
        require(perturb_prob >= 0 && perturb_prob <= 1, "train config: perturbation probability outside [0,1]");
        require(batch_size >= 1 && iterations >= 0 && T >= 1, "train config: bad sizes");
        require(lr > 0, "train config: learning rate must be positive");
    }
};

struct LossBreakdown {
    double total = 0, pose = 0, vertex = 0, collision = 0;
};

// Eq. (3): L_D = l_theta L1(X0, X0_hat) + l_v L1(vertices) + l_col collision.
// Mesh-space terms run through the differentiable kinematics; they are skipped
// entirely when both mesh weights are zero.
inline ad::Tensor training_losses_on_tape(ad::Tape& tape, const BodyModel& model,
                                          const ad::Tensor& x0_hat, const MatX& x0,
                                          const std::vector<const FkConstants*>& consts,
                                          const std::vector<const MatX*>& gt_vertices,
                                          const TrainConfig& cfg, Bvh* bvh_scratch,
                                          LossBreakdown* breakdown = nullptr) {
    using namespace ad;
    const long B = x0_hat.rows();
    require(x0.rows() == B && x0.cols() == layout::kD6Dim, "training loss: X0 must be B x 322");

    Tensor x0_const = tape.constant(B, layout::kD6Dim, [&] {
        Eigen::VectorXd flat(B * layout::kD6Dim);
        for (long i = 0; i < B; ++i)
            for (long j = 0; j < layout::kD6Dim; ++j) flat[i * layout::kD6Dim + j] = x0(i, j);
        return flat;
    }());
    Tensor pose_term = l1_loss(x0_const, x0_hat);

    Tensor total = scale(pose_term, cfg.lambda_theta);
    double vertex_value = 0, collision_value = 0;
    if (cfg.lambda_v > 0 || cfg.lambda_col > 0) {
        require(static_cast<long>(consts.size()) == B && static_cast<long>(gt_vertices.size()) == B,
                "training loss: per-sample constants required for mesh terms");
        const FkOnTape fk = forward_kinematics_on_tape(tape, model, x0_hat, consts);
        Tensor vertex_sum = tape.scalar_const(0.0);
        Tensor collision_sum = tape.scalar_const(0.0);
        for (long s = 0; s < B; ++s) {
            if (cfg.lambda_v > 0) {
                Tensor gt = tape.constant(model.vertex_count(), 3, [&] {
                    Eigen::VectorXd flat(model.vertex_count() * 3);
                    const MatX& g = *gt_vertices[static_cast<std::size_t>(s)];
                    for (long v = 0; v < model.vertex_count(); ++v)
                        for (int c = 0; c < 3; ++c) flat[v * 3 + c] = g(v, c);
                    return flat;
                }());
                vertex_sum = add(vertex_sum, l1_loss(fk.vertices[static_cast<std::size_t>(s)], gt));
            }
            if (cfg.lambda_col > 0)
                collision_sum = add(collision_sum,
                                    collision_loss_op(tape, fk.vertices[static_cast<std::size_t>(s)],
                                                      model.faces, model, bvh_scratch));
        }
        Tensor vertex_term = scale(vertex_sum, 1.0 / static_cast<double>(B));
        Tensor collision_term = scale(collision_sum, 1.0 / static_cast<double>(B));
        vertex_value = vertex_term.scalar();
        collision_value = collision_term.scalar();
        total = add(total, add(scale(vertex_term, cfg.lambda_v), scale(collision_term, cfg.lambda_col)));
    }

    if (breakdown) {
        breakdown->pose = pose_term.scalar();
        breakdown->vertex = vertex_value;
        breakdown->collision = collision_value;
        breakdown->total = total.scalar();
    }
    return total;
}

struct LossRow {
    long iter = 0;
    double total = 0, pose = 0, vertex = 0, collision = 0;
};

struct TrainResult {
    DenoiserNet net;
    ad::AdamState adam;
    std::vector<LossRow> curve;
};

// Full training loop: per iteration draw (X0, I), noise to a uniform step,
// condition on the optionally perturbed shape, denoise, and take one Adam step
// on Eq. (3). Fully deterministic given the config seed.
inline TrainResult train(const PoseDataset& data, const BodyModel& model, const TrainConfig& cfg,
                         const DiffusionSchedule& schedule,
                         const std::function<void(const LossRow&)>& progress = {}) {
    cfg.validate();
    require(data.size() > 0, "train: dataset is empty");
    require(schedule.T == cfg.T, "train: schedule does not match the configured T");

    DenoiserConfig net_cfg;
    net_cfg.n_shape = data.subject_shapes.cols();
    net_cfg.blocks = cfg.blocks;
    net_cfg.ffn_expansion = cfg.ffn_expansion;
    net_cfg.part_attention = cfg.part_attention;
    net_cfg.shape_cond = cfg.shape_cond;

    TrainResult result{DenoiserNet::init(net_cfg, derive_seed(cfg.seed, 0x1717)), {}, {}};
    result.adam.lr = cfg.lr;
    result.adam.init(result.net.params);

    // cached per-sample 6D poses and per-subject kinematic constants
    std::vector<VecX> pose6d(static_cast<std::size_t>(data.size()));
    for (long i = 0; i < data.size(); ++i)
        pose6d[static_cast<std::size_t>(i)] = pose_aa_to_6d(data.samples[static_cast<std::size_t>(i)].pose_aa);
    std::vector<FkConstants> subject_consts;
    for (long s = 0; s < data.subject_count(); ++s)
        subject_consts.push_back(fk_constants(model, ShapeVector(data.subject_shapes.row(s).transpose())));

    Rng rng(derive_seed(cfg.seed, 0xB00));
    Bvh bvh_scratch;
    const long B = cfg.batch_size;
    const long n_shape = data.subject_shapes.cols();

    for (long iter = 0; iter < cfg.iterations; ++iter) {
        // draw the batch and all of its randomness up front
        std::vector<long> idx(static_cast<std::size_t>(B));
        std::vector<long> t(static_cast<std::size_t>(B));
        for (long s = 0; s < B; ++s) {
            idx[static_cast<std::size_t>(s)] = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(data.size())));
            t[static_cast<std::size_t>(s)] = 1 + static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(cfg.T)));
        }

        MatX x0(B, layout::kD6Dim), x_t(B, layout::kD6Dim), cond(B, n_shape);
        std::vector<const FkConstants*> consts(static_cast<std::size_t>(B));
        std::vector<MatX> gt_verts(static_cast<std::size_t>(B));
        std::vector<const MatX*> gt_ptr(static_cast<std::size_t>(B));
        for (long s = 0; s < B; ++s) {
            const long i = idx[static_cast<std::size_t>(s)];
            const VecX& clean = pose6d[static_cast<std::size_t>(i)];
            VecX eps(layout::kD6Dim);
            for (long d = 0; d < layout::kD6Dim; ++d) eps[d] = rng.normal();
            x0.row(s) = clean.transpose();
            x_t.row(s) = noise_pose(clean, t[static_cast<std::size_t>(s)], eps, schedule).transpose();

            const long subject = data.samples[static_cast<std::size_t>(i)].subject;
            const VecX identity = data.subject_shapes.row(subject).transpose();
            VecX c = cfg.shape_rand ? perturb_shape(identity, cfg.perturb_prob, cfg.perturb_scale, rng)
                                    : identity;
            if (!cfg.shape_cond) c.setZero();
            cond.row(s) = c.transpose();

            consts[static_cast<std::size_t>(s)] = &subject_consts[static_cast<std::size_t>(subject)];
            if (cfg.lambda_v > 0 || cfg.lambda_col > 0) {
                const FkResult fk = forward_kinematics(
                    model, unpack_pose_aa(data.samples[static_cast<std::size_t>(i)].pose_aa),
                    ShapeVector(identity));
                gt_verts[static_cast<std::size_t>(s)] = fk.vertices;
            }
            gt_ptr[static_cast<std::size_t>(s)] = &gt_verts[static_cast<std::size_t>(s)];
        }

        ad::Tape tape;
        ad::Tensor x_t_const = tape.constant(B, layout::kD6Dim, [&] {
            Eigen::VectorXd flat(B * layout::kD6Dim);
            for (long i = 0; i < B; ++i)
                for (long j = 0; j < layout::kD6Dim; ++j) flat[i * layout::kD6Dim + j] = x_t(i, j);
            return flat;
        }());
        ad::Tensor cond_const = tape.constant(B, n_shape, [&] {
            Eigen::VectorXd flat(B * n_shape);
            for (long i = 0; i < B; ++i)
                for (long j = 0; j < n_shape; ++j) flat[i * n_shape + j] = cond(i, j);
            return flat;
        }());

        std::vector<ad::Tensor> leaves;
        ad::Tensor x0_hat = result.net.forward(tape, x_t_const, t, cond_const, &leaves);
        LossBreakdown parts;
        ad::Tensor loss =
            training_losses_on_tape(tape, model, x0_hat, x0, consts, gt_ptr, cfg, &bvh_scratch, &parts);
        if (!std::isfinite(parts.total))
            throw error("train: non-finite loss at iteration " + std::to_string(iter));
        tape.backward(loss);

        std::vector<Eigen::VectorXd> grads;
        grads.reserve(leaves.size());
        for (const ad::Tensor& leaf : leaves) grads.push_back(leaf.grad());
        adam_step(result.net.params, grads, result.adam);

        LossRow row{iter, parts.total, parts.pose, parts.vertex, parts.collision};
        result.curve.push_back(row);
        if (progress) progress(row);
    }
    return result;
}

}  // namespace scprior
