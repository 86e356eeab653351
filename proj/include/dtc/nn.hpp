// SPDX-License-Identifier: Apache-2.0
//
// Channel predictors built on the autodiff tensor core: a causal
// transformer for CSI time series, an attention-fusion model that combines
// pilot observations with rendered environment views, and a flat MLP
// baseline. Checkpoints persist named tensors plus a JSON config header.

#pragma once

#include "dtc/tensor.hpp"

#include <json.hpp>

namespace dtc::nn {

// --- causal transformer ------------------------------------------------------

struct GptConfig {
    std::size_t d_in = 0;     // feature width F (set from the dataset)
    std::size_t d_model = 128;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 512;
    std::size_t context = 45; // maximum sequence length seen at once
    double init_std = 0.02;

    void validate() const;
    nlohmann::json to_json() const;
    static GptConfig from_json(const nlohmann::json& j);
};

struct GptModel {
    GptConfig cfg;
    Tensor w_in, b_in; // [F,d], [d]
    Tensor pos;        // [context,d] learned positions
    struct Block {
        Tensor ln1_g, ln1_b;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b;
        Tensor w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    Tensor lnf_g, lnf_b;
    Tensor w_out, b_out; // [d,F], [F]

    // Weights ~ N(0, init_std); residual output projections are scaled by
    // 1/sqrt(2*n_layers); biases zero; norm gains one.
    static GptModel init(const GptConfig& cfg, Rng& rng);

    std::vector<std::pair<std::string, Tensor>> named_parameters();
    std::vector<Tensor> parameters();

    // x [T,F] with T <= context; row t of the output predicts row t+1 of
    // the input sequence.
    Tensor forward(const Tensor& x) const;

    // Autoregressive continuation of `history` (rows of width F, model
    // feature space) by n_steps rows. Runs without building a tape.
    std::vector<std::vector<double>> rollout(const std::vector<std::vector<double>>& history,
                                             std::size_t n_steps) const;
};

// Teacher-forcing loss on one window [T,F]: predictions for rows 1..T-1
// from rows 0..T-2, averaged over every shifted position.
Tensor gpt_window_loss(const GptModel& model, const Tensor& window);

// --- pilot/environment fusion ------------------------------------------------

struct FusionConfig {
    std::size_t n_tx = 16;
    std::size_t n_subcarriers = 69;
    std::size_t n_pilots = 8;
    std::size_t n_views = 4;
    std::size_t view_res = 32;
    std::size_t d_model = 128;
    bool use_env = true; // false: pilot token only (no environment branch)
    double init_std = 0.02;

    std::size_t feature_width() const { return 2 * n_tx * n_subcarriers; }
    std::size_t pilot_width() const { return (2 * n_tx + 1) * n_pilots; }
    void validate() const;
    nlohmann::json to_json() const;
    static FusionConfig from_json(const nlohmann::json& j);
};

struct FusionModel {
    FusionConfig cfg;
    // shared per-pilot encoder: affine -> gelu -> affine over
    // (re/im per antenna, band position) of one pilot subcarrier
    Tensor pw1, pb1, pw2, pb2;
    // shared per-view conv stack: 1 -> 8 -> 16 channels, stride 2, then affine to d
    Tensor cw1, cb1, cw2, cb2, ew, eb;
    // learned view-slot embeddings; the conv stack is heading-agnostic
    Tensor vpe;
    // single-head self-attention over [pilot tokens; view tokens]: the view
    // tokens steer how individual pilot observations recombine
    Tensor aq, ak, av, ao, ab;
    Tensor ln_g, ln_b;
    // head on the token mean: affine -> gelu -> affine to F
    Tensor hw1, hb1, hw2, hb2;

    static FusionModel init(const FusionConfig& cfg, Rng& rng);
    std::vector<std::pair<std::string, Tensor>> named_parameters();
    std::vector<Tensor> parameters();

    // pilot [1, pilot_width]; views [n_views] each [1, R, R]. Returns [1, F].
    Tensor forward(const Tensor& pilot, const std::vector<Tensor>& views) const;
};

// --- MLP baseline --------------------------------------------------------------

struct MlpConfig {
    std::size_t d_in = 0;
    std::size_t d_hidden = 256;
    std::size_t d_out = 0;
    double init_std = 0.02;

    nlohmann::json to_json() const;
    static MlpConfig from_json(const nlohmann::json& j);
};

struct MlpModel {
    MlpConfig cfg;
    Tensor w1, b1, w2, b2;

    static MlpModel init(const MlpConfig& cfg, Rng& rng);
    std::vector<std::pair<std::string, Tensor>> named_parameters();
    std::vector<Tensor> parameters();
    Tensor forward(const Tensor& x) const; // [m,d_in] -> [m,d_out]
};

// --- checkpoints ----------------------------------------------------------------

struct Checkpoint {
    std::string kind;      // "gpt" | "fusion" | "mlp"
    nlohmann::json config; // model config plus normalization stats etc.
    std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
    std::vector<std::vector<double>> data; // parallel to shapes
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint pack_gpt(GptModel& model, const nlohmann::json& extra);
GptModel unpack_gpt(const Checkpoint& ckpt);
Checkpoint pack_fusion(FusionModel& model, const nlohmann::json& extra);
FusionModel unpack_fusion(const Checkpoint& ckpt);
Checkpoint pack_mlp(MlpModel& model, const nlohmann::json& extra);
MlpModel unpack_mlp(const Checkpoint& ckpt);

} // namespace dtc::nn
