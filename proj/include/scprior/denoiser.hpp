#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "scprior/body_model.hpp"
#include "scprior/container.hpp"
#include "scprior/tensor.hpp"

namespace scprior {

// Architecture knobs. `blocks` and `ffn_expansion` expose both readings of the
// attention-stack depth; the defaults are two blocks with 4x feed-forward.
struct DenoiserConfig {
    long latent = 256;
    long heads = 4;
    long blocks = 2;
    long ffn_expansion = 4;
    long n_shape = 300;
    bool part_attention = true;  // false: single concatenated latent + MLP
    bool shape_cond = true;      // false: the shape token sees a zero vector

    bool operator==(const DenoiserConfig&) const = default;
};

namespace denoiser_detail {

constexpr std::array<long, 4> kPartDims = {layout::d6_face_dim, layout::d6_hand_dim,
                                           layout::d6_hand_dim, layout::d6_body_dim};
constexpr std::array<long, 4> kPartOffsets = {layout::d6_jaw, layout::d6_rh, layout::d6_lh,
                                              layout::d6_body};
constexpr const char* kPartNames[4] = {"face", "rh", "lh", "body"};
constexpr long kTokens = 6;  // 4 parts + time + shape

// sinusoidal features with base 1e4, then a learned linear layer
inline ad::RowMat sinusoidal_time_features(const std::vector<long>& t, long dim) {
    ad::RowMat out(static_cast<long>(t.size()), dim);
    for (std::size_t i = 0; i < t.size(); ++i)
        for (long d = 0; d < dim / 2; ++d) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(d) / static_cast<double>(dim));
            out(static_cast<long>(i), 2 * d) = std::sin(static_cast<double>(t[i]) * freq);
            out(static_cast<long>(i), 2 * d + 1) = std::cos(static_cast<double>(t[i]) * freq);
        }
    return out;
}

}  // namespace denoiser_detail

// The x0-predicting denoiser: per-part single-linear-layer autoencoders, a
// six-token self-attention stack over part/time/shape embeddings, and
// per-part output projections. All parts keep separate weights.
class DenoiserNet {
public:
    DenoiserConfig config;
    std::vector<ad::Param> params;

    static DenoiserNet init(const DenoiserConfig& cfg, std::uint64_t seed) {
        DenoiserNet net;
        net.config = cfg;
        Rng rng(seed);
        const long L = cfg.latent;

        auto linear = [&](const std::string& name, long in, long out) {
            net.params.emplace_back(name + "_w", in, out);
            const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
            for (long i = 0; i < in * out; ++i)
                net.params.back().value[i] = bound * (2.0 * rng.uniform() - 1.0);
            net.params.emplace_back(name + "_b", 1, out);
        };

        using namespace denoiser_detail;
        for (int p = 0; p < 4; ++p) linear(std::string("enc_") + kPartNames[p], kPartDims[static_cast<std::size_t>(p)], L);
        net.params.emplace_back("part_tokens", 4, L);
        for (long i = 0; i < 4 * L; ++i) net.params.back().value[i] = 0.02 * rng.normal();
        linear("time", L, L);
        linear("shape", cfg.n_shape, L);

        if (cfg.part_attention) {
            for (long b = 0; b < cfg.blocks; ++b) {
                const std::string pre = "block" + std::to_string(b) + "_";
                linear(pre + "q", L, L);
                linear(pre + "k", L, L);
                linear(pre + "v", L, L);
                linear(pre + "o", L, L);
                net.params.emplace_back(pre + "ln1_g", 1, L);
                net.params.back().value.setOnes();
                net.params.emplace_back(pre + "ln1_b", 1, L);
                linear(pre + "ffn1", L, cfg.ffn_expansion * L);
                linear(pre + "ffn2", cfg.ffn_expansion * L, L);
                net.params.emplace_back(pre + "ln2_g", 1, L);
                net.params.back().value.setOnes();
                net.params.emplace_back(pre + "ln2_b", 1, L);
            }
        } else {
            // single latent space: concatenated part/time/shape features into an
            // MLP whose hidden width matches the attention stack's parameter count
            const long h = net.matched_mlp_width();
            linear("mlp1", 6 * L, h);
            linear("mlp2", h, h);
            linear("mlp3", h, 4 * L);
        }

        for (int p = 0; p < 4; ++p) linear(std::string("dec_") + kPartNames[p], L, kPartDims[static_cast<std::size_t>(p)]);
        return net;
    }

    long matched_mlp_width() const {
        const long L = config.latent;
        // attention-stack parameter count for the configured blocks
        const double target = static_cast<double>(
            config.blocks * (4 * (L * L + L) + 2 * (2 * L) +
                             (L * config.ffn_expansion * L + config.ffn_expansion * L) +
                             (config.ffn_expansion * L * L + L)));
        // params(h) = (6L h + h) + (h^2 + h) + (h 4L + 4L)
        const double b = static_cast<double>(10 * L + 2);
        const double c = static_cast<double>(4 * L) - target;
        return static_cast<long>(std::llround((-b + std::sqrt(b * b - 4 * c)) / 2.0));
    }

    ad::Param& param(const std::string& name) {
        for (ad::Param& p : params)
            if (p.name == name) return p;
        throw error("denoiser: unknown parameter '" + name + "'");
    }
    const ad::Param& param(const std::string& name) const {
        return const_cast<DenoiserNet*>(this)->param(name);
    }

    long parameter_count() const {
        long n = 0;
        for (const ad::Param& p : params) n += p.value.size();
        return n;
    }

    // Test hook: with zero output projections the net is the zero map.
    void zero_output_projections() {
        using namespace denoiser_detail;
        for (int p = 0; p < 4; ++p) {
            param(std::string("dec_") + kPartNames[p] + "_w").value.setZero();
            param(std::string("dec_") + kPartNames[p] + "_b").value.setZero();
        }
    }

    // Forward pass for a batch. `x_t` is (B x 322) in the 6D layout, `t` one
    // step index per sample, `cond` the (B x N_s) conditioning matrix. Leafs
    // for every parameter are created on the tape; their ids are returned via
    // `leaf_ids` for gradient collection when training.
    ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x_t, const std::vector<long>& t,
                       const ad::Tensor& cond, std::vector<ad::Tensor>* leaves = nullptr) const {
        using namespace ad;
        using namespace denoiser_detail;
        const long B = x_t.rows();
        require(x_t.cols() == layout::kD6Dim, "denoise: input must be in the 6D layout (322)");
        require(static_cast<long>(t.size()) == B, "denoise: one timestep per sample");
        require(cond.rows() == B && cond.cols() == config.n_shape,
                "denoise: conditioning must be B x N_s");
        const long L = config.latent;

        std::vector<Tensor> leaf_of(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            leaf_of[i] = tape.leaf(params[i].rows, params[i].cols, params[i].value);
        if (leaves) *leaves = leaf_of;
        auto P = [&](const std::string& name) -> const Tensor& {
            for (std::size_t i = 0; i < params.size(); ++i)
                if (params[i].name == name) return leaf_of[i];
            throw error("denoiser: unknown parameter '" + name + "'");
        };

        // per-part encoders plus part token embeddings
        std::vector<Tensor> tokens;
        for (int p = 0; p < 4; ++p) {
            Tensor part = slice(x_t, 1, kPartOffsets[static_cast<std::size_t>(p)],
                                kPartDims[static_cast<std::size_t>(p)]);
            Tensor lat = add(matmul(part, P(std::string("enc_") + kPartNames[p] + "_w")),
                             P(std::string("enc_") + kPartNames[p] + "_b"));
            tokens.push_back(add(lat, slice(P("part_tokens"), 0, p, 1)));
        }
        Tensor time_feat = tape.constant(sinusoidal_time_features(t, L));
        tokens.push_back(add(matmul(time_feat, P("time_w")), P("time_b")));
        // the unconditional ablation keeps the token but feeds a plain body
        Tensor shape_in = config.shape_cond
                              ? cond
                              : tape.constant(B, config.n_shape, Eigen::VectorXd::Zero(B * config.n_shape));
        tokens.push_back(add(matmul(shape_in, P("shape_w")), P("shape_b")));

        std::vector<Tensor> part_latents;
        if (config.part_attention) {
            // sample-major token sequence: concat along features then reshape
            Tensor seq = reshape(concat(tokens, 1), B * kTokens, L);
            const long hd = L / config.heads;
            for (long b = 0; b < config.blocks; ++b) {
                const std::string pre = "block" + std::to_string(b) + "_";
                Tensor a = layer_norm_rows(seq, P(pre + "ln1_g"), P(pre + "ln1_b"));
                Tensor q = add(matmul(a, P(pre + "q_w")), P(pre + "q_b"));
                Tensor k = add(matmul(a, P(pre + "k_w")), P(pre + "k_b"));
                Tensor v = add(matmul(a, P(pre + "v_w")), P(pre + "v_b"));
                std::vector<Tensor> ctx;
                for (long h = 0; h < config.heads; ++h) {
                    Tensor qh = slice(q, 1, h * hd, hd);
                    Tensor kh = slice(k, 1, h * hd, hd);
                    Tensor vh = slice(v, 1, h * hd, hd);
                    Tensor scores = scale(batched_qk(qh, kh, kTokens), 1.0 / std::sqrt(static_cast<double>(hd)));
                    ctx.push_back(batched_av(softmax_rows(scores), vh, kTokens));
                }
                Tensor merged = add(matmul(concat(ctx, 1), P(pre + "o_w")), P(pre + "o_b"));
                seq = add(seq, merged);
                Tensor a2 = layer_norm_rows(seq, P(pre + "ln2_g"), P(pre + "ln2_b"));
                Tensor ff = add(matmul(gelu(add(matmul(a2, P(pre + "ffn1_w")), P(pre + "ffn1_b"))),
                                       P(pre + "ffn2_w")),
                                P(pre + "ffn2_b"));
                seq = add(seq, ff);
            }
            for (int p = 0; p < 4; ++p) part_latents.push_back(take_token(seq, kTokens, p));
        } else {
            Tensor flat = concat(tokens, 1);  // B x 6L
            Tensor h1 = gelu(add(matmul(flat, P("mlp1_w")), P("mlp1_b")));
            Tensor h2 = gelu(add(matmul(h1, P("mlp2_w")), P("mlp2_b")));
            Tensor h3 = add(matmul(h2, P("mlp3_w")), P("mlp3_b"));  // B x 4L
            for (int p = 0; p < 4; ++p) part_latents.push_back(slice(h3, 1, p * L, L));
        }

        std::vector<Tensor> parts_out;
        for (int p = 0; p < 4; ++p)
            parts_out.push_back(add(matmul(part_latents[static_cast<std::size_t>(p)],
                                           P(std::string("dec_") + kPartNames[p] + "_w")),
                                    P(std::string("dec_") + kPartNames[p] + "_b")));
        return concat(parts_out, 1);  // face | rh | lh | body = 6D layout
    }

    // value-only convenience for inference paths that do not differentiate
    VecX denoise(const VecX& x_t, long t, const VecX& cond) const {
        ad::Tape tape;
        ad::Tensor x = tape.constant(1, layout::kD6Dim, x_t);
        ad::Tensor c = tape.constant(1, cond.size(), cond);
        ad::Tensor out = forward(tape, x, {t}, c);
        return out.value();
    }
};

// --- checkpoint container ----------------------------------------------------

inline ArrayContainer checkpoint_to_container(const DenoiserNet& net, const ad::AdamState* adam) {
    ArrayContainer c("SCCP0001");
    c.add_i32("arch", {7},
              {static_cast<std::int32_t>(net.config.latent), static_cast<std::int32_t>(net.config.heads),
               static_cast<std::int32_t>(net.config.blocks),
               static_cast<std::int32_t>(net.config.ffn_expansion),
               static_cast<std::int32_t>(net.config.n_shape),
               net.config.part_attention ? 1 : 0, net.config.shape_cond ? 1 : 0});
    for (const ad::Param& p : net.params) {
        std::vector<double> data(p.value.data(), p.value.data() + p.value.size());
        c.add_f64("param." + p.name,
                  {static_cast<std::uint64_t>(p.rows), static_cast<std::uint64_t>(p.cols)},
                  std::move(data));
    }
    if (adam) {
        c.add_i32("adam.step", {1}, {static_cast<std::int32_t>(adam->step_count)});
        for (std::size_t i = 0; i < net.params.size(); ++i) {
            std::vector<double> m(adam->m[i].data(), adam->m[i].data() + adam->m[i].size());
            std::vector<double> v(adam->v[i].data(), adam->v[i].data() + adam->v[i].size());
            const std::uint64_t mn = m.size(), vn = v.size();
            c.add_f64("adam.m." + net.params[i].name, {mn}, std::move(m));
            c.add_f64("adam.v." + net.params[i].name, {vn}, std::move(v));
        }
    }
    return c;
}

inline DenoiserNet checkpoint_from_container(const ArrayContainer& c, ad::AdamState* adam = nullptr) {
    const auto& arch = c.get_i32("arch");
    if (arch.size() != 7) throw parse_error("checkpoint: bad arch record");
    DenoiserConfig cfg;
    cfg.latent = arch[0];
    cfg.heads = arch[1];
    cfg.blocks = arch[2];
    cfg.ffn_expansion = arch[3];
    cfg.n_shape = arch[4];
    cfg.part_attention = arch[5] != 0;
    cfg.shape_cond = arch[6] != 0;
    DenoiserNet net = DenoiserNet::init(cfg, 0);
    for (ad::Param& p : net.params) {
        const auto& data = c.get_f64("param." + p.name);
        if (static_cast<long>(data.size()) != p.value.size())
            throw parse_error("checkpoint: parameter '" + p.name + "' has the wrong size");
        for (long i = 0; i < p.value.size(); ++i) p.value[i] = data[static_cast<std::size_t>(i)];
    }
    if (adam && c.has("adam.step")) {
        adam->init(net.params);
        adam->step_count = c.get_i32("adam.step")[0];
        for (std::size_t i = 0; i < net.params.size(); ++i) {
            const auto& m = c.get_f64("adam.m." + net.params[i].name);
            const auto& v = c.get_f64("adam.v." + net.params[i].name);
            for (std::size_t k = 0; k < m.size(); ++k) {
                adam->m[i][static_cast<long>(k)] = m[k];
                adam->v[i][static_cast<long>(k)] = v[k];
            }
        }
    }
    return net;
}

inline void save_checkpoint(const DenoiserNet& net, const std::string& path,
                            const ad::AdamState* adam = nullptr) {
    checkpoint_to_container(net, adam).write(path);
}

inline DenoiserNet load_checkpoint(const std::string& path, ad::AdamState* adam = nullptr) {
    return checkpoint_from_container(ArrayContainer::read(path, "SCCP0001"), adam);
}

}  // namespace scprior
