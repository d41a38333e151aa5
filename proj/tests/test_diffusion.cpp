#include <catch2/catch_amalgamated.hpp>

#include "scprior/body_builder.hpp"
#include "scprior/training.hpp"

using namespace scprior;
using namespace scprior::ad;

namespace {
const BodyModel& test_model() {
    static BodyModel m = build_default_model(12);
    return m;
}

VecX random_pose_6d(Rng& rng, double scale) {
    VecX aa(layout::kAaDim);
    for (long d = 0; d < layout::kAaDim; ++d) aa[d] = rng.normal() * scale;
    return pose_aa_to_6d(aa);
}

// tiny dataset of jittered poses around two subjects
PoseDataset tiny_dataset(const BodyModel& m, long n_samples, std::uint64_t seed) {
    PoseDataset ds;
    ds.split = "train";
    Rng rng(seed);
    ds.subject_shapes.resize(2, m.shape_dim());
    for (long s = 0; s < 2; ++s)
        for (long k = 0; k < m.shape_dim(); ++k) ds.subject_shapes(s, k) = rng.normal() * 0.5;
    ds.action_names = {"touch_belly"};
    for (long i = 0; i < n_samples; ++i) {
        PoseSample sample;
        sample.pose_aa.resize(layout::kAaDim);
        for (long d = 0; d < layout::kAaDim; ++d) sample.pose_aa[d] = rng.normal() * 0.25;
        sample.subject = i % 2;
        sample.action = 0;
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}
}  // namespace

TEST_CASE("cosine schedule satisfies its invariants") {
    for (long T : {50L, 200L, 1000L}) {
        const DiffusionSchedule sch = cosine_schedule(T);
        REQUIRE(sch.alpha_bar_at(0) == 1.0);  // definition of the t -> 0 limit
        double prev = 1.0;
        for (long t = 1; t <= T; ++t) {
            REQUIRE(sch.alpha_bar_at(t) < prev);
            REQUIRE(sch.beta[t - 1] > 0.0);
            REQUIRE(sch.beta[t - 1] <= 0.999);
            prev = sch.alpha_bar_at(t);
        }
        if (T >= 200) REQUIRE(sch.alpha_bar_at(1) > 0.999);
    }
    const DiffusionSchedule sch = cosine_schedule(1000);
    REQUIRE(sch.alpha_bar_at(1000) < 1e-4);
}

TEST_CASE("forward noising follows Eq. (1) exactly") {
    const DiffusionSchedule sch = cosine_schedule(1000);
    Rng rng(31);
    VecX x0(322), eps(322);
    for (long d = 0; d < 322; ++d) {
        x0[d] = rng.normal();
        eps[d] = rng.normal();
    }

    SECTION("zero noise scales by sqrt(alpha_bar)") {
        const VecX xt = noise_pose(x0, 700, VecX::Zero(322), sch);
        // fp contraction may fuse the multiply-add, so compare to last bits
        REQUIRE((xt - std::sqrt(sch.alpha_bar_at(700)) * x0).cwiseAbs().maxCoeff() < 1e-15);
    }

    SECTION("inversion identity recovers X0 to 1e-9") {
        for (long t : {1L, 100L, 500L, 999L}) {
            const VecX xt = noise_pose(x0, t, eps, sch);
            const double ab = sch.alpha_bar_at(t);
            const VecX back = (xt - std::sqrt(1 - ab) * eps) / std::sqrt(ab);
            REQUIRE((back - x0).cwiseAbs().maxCoeff() < 1e-9);
        }
    }

    SECTION("t out of range raises") {
        REQUIRE_THROWS_AS(noise_pose(x0, 0, eps, sch), validation_error);
        REQUIRE_THROWS_AS(noise_pose(x0, 1001, eps, sch), validation_error);
    }

    SECTION("sample variance matches 1 - alpha_bar within 2%") {
        const long t = 400;
        const double ab = sch.alpha_bar_at(t);
        Rng mc(32);
        double acc = 0;
        const long draws = 100000;
        for (long i = 0; i < draws; ++i) {
            const double e = mc.normal();
            const double xt = std::sqrt(ab) * x0[0] + std::sqrt(1 - ab) * e;
            const double dev = xt - std::sqrt(ab) * x0[0];
            acc += dev * dev;
        }
        REQUIRE(acc / static_cast<double>(draws) ==
                Catch::Approx(1 - ab).epsilon(0.02));
    }
}

TEST_CASE("shape perturbation follows Eq. (2)") {
    Rng rng(33);
    VecX identity(40);
    for (long i = 0; i < 40; ++i) identity[i] = rng.normal();

    SECTION("degenerate parameters leave the identity unchanged") {
        Rng r1(1);
        REQUIRE((perturb_shape(identity, 1.0, 0.0, r1) - identity).norm() == 0.0);
        Rng r2(2);
        REQUIRE((perturb_shape(identity, 0.0, 1e-4, r2) - identity).norm() == 0.0);
    }

    SECTION("p = 1 perturbation variance matches s^2 within 5%") {
        Rng mc(34);
        double acc = 0;
        const long draws = 100000;
        for (long i = 0; i < draws; ++i) {
            const VecX c = perturb_shape(identity, 1.0, 1e-4, mc);
            acc += (c - identity).squaredNorm() / 40.0;
        }
        REQUIRE(acc / static_cast<double>(draws) == Catch::Approx(1e-8).epsilon(0.05));
    }

    SECTION("per-coordinate variance with p = 0.3 equals p s^2 within 5%") {
        Rng mc(35);
        double acc = 0;
        const long draws = 200000;
        for (long i = 0; i < draws; ++i) {
            const VecX c = perturb_shape(identity, 0.3, 1e-4, mc);
            acc += (c[7] - identity[7]) * (c[7] - identity[7]);
        }
        REQUIRE(acc / static_cast<double>(draws) == Catch::Approx(0.3 * 1e-8).epsilon(0.05));
    }
}

TEST_CASE("zero output projections make the denoiser the zero map") {
    DenoiserConfig cfg;
    cfg.n_shape = 12;
    DenoiserNet net = DenoiserNet::init(cfg, 55);
    net.zero_output_projections();
    Rng rng(56);
    const VecX out = net.denoise(random_pose_6d(rng, 0.5), 500, VecX::Ones(12));
    REQUIRE(out.norm() == 0.0);
}

TEST_CASE("consistent head permutation leaves the output unchanged") {
    DenoiserConfig cfg;
    cfg.n_shape = 12;
    DenoiserNet net = DenoiserNet::init(cfg, 57);
    Rng rng(58);
    const VecX x = random_pose_6d(rng, 0.5);
    VecX cond(12);
    for (long i = 0; i < 12; ++i) cond[i] = rng.normal();
    const VecX before = net.denoise(x, 321, cond);

    // swap head 0 and head 2: columns of q/k/v projections, rows of the output
    const long hd = cfg.latent / cfg.heads;
    for (long b = 0; b < cfg.blocks; ++b) {
        const std::string pre = "block" + std::to_string(b) + "_";
        for (const char* w : {"q", "k", "v"}) {
            ad::Param& p = net.param(pre + w + std::string("_w"));
            MapM m(p.value.data(), p.rows, p.cols);
            const RowMat tmp = m.middleCols(0, hd);
            m.middleCols(0, hd) = m.middleCols(2 * hd, hd);
            m.middleCols(2 * hd, hd) = tmp;
            ad::Param& pb = net.param(pre + w + std::string("_b"));
            MapM mb(pb.value.data(), 1, pb.cols);
            const RowMat tmpb = mb.middleCols(0, hd);
            mb.middleCols(0, hd) = mb.middleCols(2 * hd, hd);
            mb.middleCols(2 * hd, hd) = tmpb;
        }
        ad::Param& o = net.param(pre + "o_w");
        MapM mo(o.value.data(), o.rows, o.cols);
        const RowMat tmp = mo.middleRows(0, hd);
        mo.middleRows(0, hd) = mo.middleRows(2 * hd, hd);
        mo.middleRows(2 * hd, hd) = tmp;
    }
    const VecX after = net.denoise(x, 321, cond);
    REQUIRE((after - before).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("time enters only through the embedding") {
    DenoiserConfig cfg;
    cfg.n_shape = 8;
    DenoiserNet net = DenoiserNet::init(cfg, 59);
    // equalize the embeddings of every step by zeroing the time projection
    net.param("time_w").value.setZero();
    Rng rng(60);
    const VecX x = random_pose_6d(rng, 0.5);
    const VecX cond = VecX::Ones(8);
    REQUIRE((net.denoise(x, 5, cond) - net.denoise(x, 900, cond)).norm() == 0.0);
}

TEST_CASE("swapping hands together with their weights swaps the output parts") {
    DenoiserConfig cfg;
    cfg.n_shape = 8;
    DenoiserNet net = DenoiserNet::init(cfg, 61);
    Rng rng(62);
    const VecX x = random_pose_6d(rng, 0.5);
    VecX cond(8);
    for (long i = 0; i < 8; ++i) cond[i] = rng.normal();
    const VecX before = net.denoise(x, 77, cond);

    auto swap_params = [&](const std::string& a, const std::string& b) {
        std::swap(net.param(a).value, net.param(b).value);
    };
    swap_params("enc_rh_w", "enc_lh_w");
    swap_params("enc_rh_b", "enc_lh_b");
    swap_params("dec_rh_w", "dec_lh_w");
    swap_params("dec_rh_b", "dec_lh_b");
    {
        ad::Param& tokens = net.param("part_tokens");
        MapM m(tokens.value.data(), 4, cfg.latent);
        const RowMat tmp = m.row(1);
        m.row(1) = m.row(2);
        m.row(2) = tmp;
    }
    VecX swapped_x = x;
    swapped_x.segment(layout::d6_rh, layout::d6_hand_dim) = x.segment(layout::d6_lh, layout::d6_hand_dim);
    swapped_x.segment(layout::d6_lh, layout::d6_hand_dim) = x.segment(layout::d6_rh, layout::d6_hand_dim);
    const VecX after = net.denoise(swapped_x, 77, cond);

    REQUIRE((after.segment(layout::d6_rh, 90) - before.segment(layout::d6_lh, 90)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((after.segment(layout::d6_lh, 90) - before.segment(layout::d6_rh, 90)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((after.segment(layout::d6_jaw, 16) - before.segment(layout::d6_jaw, 16)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((after.segment(layout::d6_body, 126) - before.segment(layout::d6_body, 126)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("unconditioned nets ignore the identity input") {
    DenoiserConfig cfg;
    cfg.n_shape = 8;
    cfg.shape_cond = false;
    DenoiserNet net = DenoiserNet::init(cfg, 63);
    Rng rng(64);
    const VecX x = random_pose_6d(rng, 0.5);
    REQUIRE((net.denoise(x, 10, VecX::Ones(8)) - net.denoise(x, 10, 5.0 * VecX::Ones(8))).norm() ==
            0.0);
}

TEST_CASE("the no-attention baseline matches the attention stack's parameter count") {
    DenoiserConfig attn;
    attn.n_shape = 300;
    DenoiserConfig mlp = attn;
    mlp.part_attention = false;
    const DenoiserNet a = DenoiserNet::init(attn, 1);
    const DenoiserNet b = DenoiserNet::init(mlp, 1);
    const double rel = std::abs(static_cast<double>(a.parameter_count() - b.parameter_count())) /
                       static_cast<double>(a.parameter_count());
    REQUIRE(rel < 0.02);

    // and it runs
    Rng rng(65);
    const VecX out = b.denoise(random_pose_6d(rng, 0.5), 50, VecX::Zero(300));
    REQUIRE(out.allFinite());
}

TEST_CASE("checkpoint round trip preserves weights and optimizer state") {
    DenoiserConfig cfg;
    cfg.n_shape = 6;
    cfg.blocks = 1;
    DenoiserNet net = DenoiserNet::init(cfg, 66);
    ad::AdamState adam;
    adam.init(net.params);
    adam.step_count = 17;
    adam.m[0].setConstant(0.25);

    const ArrayContainer c = checkpoint_to_container(net, &adam);
    ad::AdamState back_adam;
    const DenoiserNet back = checkpoint_from_container(ArrayContainer::parse(c.serialize(), "mem"),
                                                       &back_adam);
    REQUIRE(back.config == net.config);
    for (std::size_t i = 0; i < net.params.size(); ++i)
        REQUIRE((back.params[i].value - net.params[i].value).norm() == 0.0);
    REQUIRE(back_adam.step_count == 17);
    REQUIRE((back_adam.m[0] - adam.m[0]).norm() == 0.0);
}

TEST_CASE("training losses reduce correctly in their degenerate cases") {
    const BodyModel& m = test_model();
    Rng rng(67);
    const long B = 2;
    MatX x0(B, layout::kD6Dim);
    std::vector<FkConstants> consts_store;
    std::vector<const FkConstants*> consts;
    std::vector<MatX> gt_store;
    std::vector<const MatX*> gt;
    for (long s = 0; s < B; ++s) {
        const VecX p6 = random_pose_6d(rng, 0.2);
        x0.row(s) = p6.transpose();
        VecX coeff = VecX::Zero(m.shape_dim());
        consts_store.push_back(fk_constants(m, ShapeVector(coeff)));
        gt_store.push_back(forward_kinematics(m, unpack_pose_6d(p6), ShapeVector(coeff)).vertices);
    }
    for (long s = 0; s < B; ++s) {
        consts.push_back(&consts_store[static_cast<std::size_t>(s)]);
        gt.push_back(&gt_store[static_cast<std::size_t>(s)]);
    }

    TrainConfig cfg;

    SECTION("perfect prediction leaves only the collision term") {
        ad::Tape tape;
        ad::Tensor x0_hat = tape.constant(B, layout::kD6Dim, [&] {
            Eigen::VectorXd flat(B * layout::kD6Dim);
            for (long i = 0; i < B; ++i)
                for (long j = 0; j < layout::kD6Dim; ++j) flat[i * layout::kD6Dim + j] = x0(i, j);
            return flat;
        }());
        Bvh scratch;
        LossBreakdown parts;
        training_losses_on_tape(tape, m, x0_hat, x0, consts, gt, cfg, &scratch, &parts);
        REQUIRE(parts.pose == 0.0);
        REQUIRE(parts.vertex == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(parts.total == Catch::Approx(cfg.lambda_col * parts.collision).margin(1e-15));
    }

    SECTION("zero mesh weights reduce to the plain pose L1") {
        TrainConfig pose_only = cfg;
        pose_only.lambda_v = 0;
        pose_only.lambda_col = 0;
        ad::Tape tape;
        Eigen::VectorXd flat(B * layout::kD6Dim);
        for (long i = 0; i < B; ++i)
            for (long j = 0; j < layout::kD6Dim; ++j) flat[i * layout::kD6Dim + j] = x0(i, j) + 0.1;
        ad::Tensor x0_hat = tape.constant(B, layout::kD6Dim, std::move(flat));
        LossBreakdown parts;
        const ad::Tensor total =
            training_losses_on_tape(tape, m, x0_hat, x0, {}, {}, pose_only, nullptr, &parts);
        REQUIRE(total.scalar() == Catch::Approx(0.1).margin(1e-12));
        REQUIRE(parts.vertex == 0.0);
        REQUIRE(parts.collision == 0.0);
    }

    SECTION("gradient of the full loss matches finite differences at 1e-3") {
        auto eval = [&](const MatX& xh) {
            ad::Tape tape;
            Eigen::VectorXd flat(B * layout::kD6Dim);
            for (long i = 0; i < B; ++i)
                for (long j = 0; j < layout::kD6Dim; ++j) flat[i * layout::kD6Dim + j] = xh(i, j);
            ad::Tensor x0_hat = tape.leaf(B, layout::kD6Dim, std::move(flat));
            Bvh scratch;
            ad::Tensor total =
                training_losses_on_tape(tape, m, x0_hat, x0, consts, gt, cfg, &scratch);
            return std::make_pair(total.scalar(), x0_hat);
        };

        MatX xh = x0;
        for (long i = 0; i < B; ++i)
            for (long j = 0; j < layout::kD6Dim; ++j) xh(i, j) += 0.05 * (((i + j) % 3) - 1);

        ad::Tape tape;
        Eigen::VectorXd flat(B * layout::kD6Dim);
        for (long i = 0; i < B; ++i)
            for (long j = 0; j < layout::kD6Dim; ++j) flat[i * layout::kD6Dim + j] = xh(i, j);
        ad::Tensor x0_hat = tape.leaf(B, layout::kD6Dim, std::move(flat));
        Bvh scratch;
        ad::Tensor total = training_losses_on_tape(tape, m, x0_hat, x0, consts, gt, cfg, &scratch);
        tape.backward(total);
        const Eigen::VectorXd grad = x0_hat.grad();

        Rng pick(68);
        for (int trial = 0; trial < 8; ++trial) {
            const long i = static_cast<long>(pick.uniform_int(B));
            const long j = static_cast<long>(pick.uniform_int(layout::kD6Dim));
            const double h = 1e-5;
            MatX xp = xh, xm = xh;
            xp(i, j) += h;
            xm(i, j) -= h;
            auto evalv = [&](const MatX& q) {
                ad::Tape t2;
                Eigen::VectorXd f2(B * layout::kD6Dim);
                for (long a = 0; a < B; ++a)
                    for (long b = 0; b < layout::kD6Dim; ++b) f2[a * layout::kD6Dim + b] = q(a, b);
                ad::Tensor xt = t2.constant(B, layout::kD6Dim, std::move(f2));
                Bvh s2;
                return training_losses_on_tape(t2, m, xt, x0, consts, gt, cfg, &s2).scalar();
            };
            const double fd = (evalv(xp) - evalv(xm)) / (2 * h);
            const double an = grad[i * layout::kD6Dim + j];
            REQUIRE(std::abs(fd - an) <= 1e-3 * std::max({1.0, std::abs(fd), std::abs(an)}));
        }
    }
}

TEST_CASE("fifty repeated steps on one sample decrease its loss") {
    const BodyModel& m = test_model();
    PoseDataset ds = tiny_dataset(m, 1, 70);
    TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.iterations = 50;
    cfg.T = 200;
    cfg.lr = 3e-4;
    cfg.seed = 7;
    const DiffusionSchedule sch = cosine_schedule(cfg.T);
    const TrainResult result = train(ds, m, cfg, sch);
    REQUIRE(result.curve.size() == 50);
    double early = 0, late = 0;
    for (int i = 0; i < 10; ++i) {
        early += result.curve[static_cast<std::size_t>(i)].total;
        late += result.curve[result.curve.size() - 10 + static_cast<std::size_t>(i)].total;
    }
    REQUIRE(late < early);
}

TEST_CASE("training is bit-deterministic in its seed") {
    const BodyModel& m = test_model();
    PoseDataset ds = tiny_dataset(m, 6, 71);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.iterations = 3;
    cfg.T = 100;
    cfg.seed = 9;
    const DiffusionSchedule sch = cosine_schedule(cfg.T);
    const TrainResult a = train(ds, m, cfg, sch);
    const TrainResult b = train(ds, m, cfg, sch);
    for (std::size_t i = 0; i < a.net.params.size(); ++i)
        REQUIRE((a.net.params[i].value - b.net.params[i].value).norm() == 0.0);
    REQUIRE(a.curve.back().total == b.curve.back().total);
}
