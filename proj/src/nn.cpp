// SPDX-License-Identifier: Apache-2.0

#include "dtc/nn.hpp"

#include "dtc/binio.hpp"

#include <cmath>
#include <map>

namespace dtc::nn {

namespace {

Tensor param_normal(std::vector<std::size_t> shape, Rng& rng, double std_dev) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.values()) v = rng.normal() * std_dev;
    return t;
}

Tensor param_const(std::vector<std::size_t> shape, double value) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.values()) v = value;
    return t;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

} // namespace

// --- GptConfig ---------------------------------------------------------------

void GptConfig::validate() const {
    if (d_in == 0) throw ConfigError("gpt: d_in must be set from the dataset");
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || context == 0)
        throw ConfigError("gpt: all dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("gpt: d_model must divide into n_heads");
}

nlohmann::json GptConfig::to_json() const {
    return {{"d_in", d_in},       {"d_model", d_model}, {"n_layers", n_layers},
            {"n_heads", n_heads}, {"d_ff", d_ff},       {"context", context},
            {"init_std", init_std}};
}

GptConfig GptConfig::from_json(const nlohmann::json& j) {
    GptConfig c;
    c.d_in = j.at("d_in").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.context = j.at("context").get<std::size_t>();
    c.init_std = j.at("init_std").get<double>();
    return c;
}

// --- GptModel ------------------------------------------------------------------

GptModel GptModel::init(const GptConfig& cfg, Rng& rng) {
    cfg.validate();
    GptModel m;
    m.cfg = cfg;
    const double s = cfg.init_std;
    const double rs = s / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    m.w_in = param_normal({cfg.d_in, cfg.d_model}, rng, s);
    m.b_in = param_const({cfg.d_model}, 0.0);
    m.pos = param_normal({cfg.context, cfg.d_model}, rng, s);
    m.blocks.resize(cfg.n_layers);
    for (auto& b : m.blocks) {
        b.ln1_g = param_const({cfg.d_model}, 1.0);
        b.ln1_b = param_const({cfg.d_model}, 0.0);
        b.wq = param_normal({cfg.d_model, cfg.d_model}, rng, s);
        b.bq = param_const({cfg.d_model}, 0.0);
        b.wk = param_normal({cfg.d_model, cfg.d_model}, rng, s);
        b.bk = param_const({cfg.d_model}, 0.0);
        b.wv = param_normal({cfg.d_model, cfg.d_model}, rng, s);
        b.bv = param_const({cfg.d_model}, 0.0);
        b.wo = param_normal({cfg.d_model, cfg.d_model}, rng, rs);
        b.bo = param_const({cfg.d_model}, 0.0);
        b.ln2_g = param_const({cfg.d_model}, 1.0);
        b.ln2_b = param_const({cfg.d_model}, 0.0);
        b.w1 = param_normal({cfg.d_model, cfg.d_ff}, rng, s);
        b.b1 = param_const({cfg.d_ff}, 0.0);
        b.w2 = param_normal({cfg.d_ff, cfg.d_model}, rng, rs);
        b.b2 = param_const({cfg.d_model}, 0.0);
    }
    m.lnf_g = param_const({cfg.d_model}, 1.0);
    m.lnf_b = param_const({cfg.d_model}, 0.0);
    m.w_out = param_normal({cfg.d_model, cfg.d_in}, rng, s);
    m.b_out = param_const({cfg.d_in}, 0.0);
    return m;
}

std::vector<std::pair<std::string, Tensor>> GptModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("w_in", w_in);
    out.emplace_back("b_in", b_in);
    out.emplace_back("pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto& b = blocks[i];
        const std::string p = "blk" + std::to_string(i) + ".";
        out.emplace_back(p + "ln1_g", b.ln1_g);
        out.emplace_back(p + "ln1_b", b.ln1_b);
        out.emplace_back(p + "wq", b.wq);
        out.emplace_back(p + "bq", b.bq);
        out.emplace_back(p + "wk", b.wk);
        out.emplace_back(p + "bk", b.bk);
        out.emplace_back(p + "wv", b.wv);
        out.emplace_back(p + "bv", b.bv);
        out.emplace_back(p + "wo", b.wo);
        out.emplace_back(p + "bo", b.bo);
        out.emplace_back(p + "ln2_g", b.ln2_g);
        out.emplace_back(p + "ln2_b", b.ln2_b);
        out.emplace_back(p + "w1", b.w1);
        out.emplace_back(p + "b1", b.b1);
        out.emplace_back(p + "w2", b.w2);
        out.emplace_back(p + "b2", b.b2);
    }
    out.emplace_back("lnf_g", lnf_g);
    out.emplace_back("lnf_b", lnf_b);
    out.emplace_back("w_out", w_out);
    out.emplace_back("b_out", b_out);
    return out;
}

std::vector<Tensor> GptModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor GptModel::forward(const Tensor& x) const {
    if (x.shape().size() != 2 || x.dim(1) != cfg.d_in)
        throw ValidationError("gpt forward: expected [T," + std::to_string(cfg.d_in) + "]");
    const std::size_t t = x.dim(0);
    if (t == 0 || t > cfg.context)
        throw ValidationError("gpt forward: sequence length " + std::to_string(t) +
                              " outside [1," + std::to_string(cfg.context) + "]");
    const std::size_t d = cfg.d_model;
    const std::size_t dh = d / cfg.n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor h = add(affine(x, w_in, b_in), slice_rows(pos, 0, t));
    for (const auto& blk : blocks) {
        Tensor a = layer_norm(h, blk.ln1_g, blk.ln1_b);
        Tensor q = affine(a, blk.wq, blk.bq);
        Tensor k = affine(a, blk.wk, blk.bk);
        Tensor v = affine(a, blk.wv, blk.bv);
        std::vector<Tensor> heads;
        heads.reserve(cfg.n_heads);
        for (std::size_t i = 0; i < cfg.n_heads; ++i) {
            Tensor qi = slice_cols(q, i * dh, (i + 1) * dh);
            Tensor ki = slice_cols(k, i * dh, (i + 1) * dh);
            Tensor vi = slice_cols(v, i * dh, (i + 1) * dh);
            Tensor probs = causal_softmax(scale(matmul(qi, transpose(ki)), inv_sqrt_dh));
            heads.push_back(matmul(probs, vi));
        }
        h = add(h, affine(concat_cols(heads), blk.wo, blk.bo));
        Tensor m = layer_norm(h, blk.ln2_g, blk.ln2_b);
        h = add(h, affine(gelu(affine(m, blk.w1, blk.b1)), blk.w2, blk.b2));
    }
    return affine(layer_norm(h, lnf_g, lnf_b), w_out, b_out);
}

std::vector<std::vector<double>> GptModel::rollout(
    const std::vector<std::vector<double>>& history, std::size_t n_steps) const {
    if (history.empty()) throw ValidationError("rollout: empty history");
    for (const auto& row : history)
        if (row.size() != cfg.d_in) throw ValidationError("rollout: row width mismatch");
    NoGradGuard guard;
    std::vector<std::vector<double>> seq = history;
    std::vector<std::vector<double>> out;
    out.reserve(n_steps);
    for (std::size_t step = 0; step < n_steps; ++step) {
        const std::size_t t0 = seq.size() > cfg.context ? seq.size() - cfg.context : 0;
        const std::size_t t = seq.size() - t0;
        std::vector<double> flat;
        flat.reserve(t * cfg.d_in);
        for (std::size_t i = t0; i < seq.size(); ++i)
            flat.insert(flat.end(), seq[i].begin(), seq[i].end());
        Tensor x = Tensor::from_values({t, cfg.d_in}, std::move(flat));
        Tensor y = forward(x);
        std::vector<double> next(y.values().end() - static_cast<std::ptrdiff_t>(cfg.d_in),
                                 y.values().end());
        seq.push_back(next);
        out.push_back(std::move(next));
    }
    return out;
}

Tensor gpt_window_loss(const GptModel& model, const Tensor& window) {
    const std::size_t t = window.dim(0);
    if (t < 2) throw ValidationError("window loss needs at least two rows");
    Tensor pred = model.forward(slice_rows(window, 0, t - 1));
    Tensor target = slice_rows(window, 1, t);
    return mse_loss(pred, target);
}

// --- FusionConfig ---------------------------------------------------------------

void FusionConfig::validate() const {
    if (n_tx == 0 || n_subcarriers == 0 || n_pilots == 0 || d_model == 0)
        throw ConfigError("fusion: all dimensions must be positive");
    if (n_pilots > n_subcarriers)
        throw ConfigError("fusion: more pilots than subcarriers");
    if (n_views == 0 || view_res < 8 || view_res % 4 != 0)
        throw ConfigError("fusion: view_res must be >= 8 and divisible by 4");
}

nlohmann::json FusionConfig::to_json() const {
    return {{"n_tx", n_tx},       {"n_subcarriers", n_subcarriers},
            {"n_pilots", n_pilots}, {"n_views", n_views},
            {"view_res", view_res}, {"d_model", d_model},
            {"use_env", use_env},   {"init_std", init_std}};
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
    FusionConfig c;
    c.n_tx = j.at("n_tx").get<std::size_t>();
    c.n_subcarriers = j.at("n_subcarriers").get<std::size_t>();
    c.n_pilots = j.at("n_pilots").get<std::size_t>();
    c.n_views = j.at("n_views").get<std::size_t>();
    c.view_res = j.at("view_res").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.use_env = j.at("use_env").get<bool>();
    c.init_std = j.at("init_std").get<double>();
    return c;
}

// --- FusionModel ------------------------------------------------------------------

FusionModel FusionModel::init(const FusionConfig& cfg, Rng& rng) {
    cfg.validate();
    FusionModel m;
    m.cfg = cfg;
    const double s = cfg.init_std;
    const std::size_t d = cfg.d_model;
    const std::size_t flat = 16 * (cfg.view_res / 4) * (cfg.view_res / 4);
    m.pw1 = param_normal({2 * cfg.n_tx + 1, d}, rng, s);
    m.pb1 = param_const({d}, 0.0);
    m.pw2 = param_normal({d, d}, rng, s);
    m.pb2 = param_const({d}, 0.0);
    m.cw1 = param_normal({8, 1, 3, 3}, rng, s);
    m.cb1 = param_const({8}, 0.0);
    m.cw2 = param_normal({16, 8, 3, 3}, rng, s);
    m.cb2 = param_const({16}, 0.0);
    m.ew = param_normal({flat, d}, rng, s);
    m.eb = param_const({d}, 0.0);
    m.vpe = param_normal({cfg.n_views, d}, rng, s);
    m.aq = param_normal({d, d}, rng, s);
    m.ak = param_normal({d, d}, rng, s);
    m.av = param_normal({d, d}, rng, s);
    m.ao = param_normal({d, d}, rng, s);
    m.ab = param_const({d}, 0.0);
    m.ln_g = param_const({d}, 1.0);
    m.ln_b = param_const({d}, 0.0);
    m.hw1 = param_normal({d, d}, rng, s);
    m.hb1 = param_const({d}, 0.0);
    m.hw2 = param_normal({d, cfg.feature_width()}, rng, s);
    m.hb2 = param_const({cfg.feature_width()}, 0.0);
    return m;
}

std::vector<std::pair<std::string, Tensor>> FusionModel::named_parameters() {
    return {{"pw1", pw1}, {"pb1", pb1}, {"pw2", pw2}, {"pb2", pb2}, {"cw1", cw1},
            {"cb1", cb1}, {"cw2", cw2}, {"cb2", cb2}, {"ew", ew},   {"eb", eb},
            {"vpe", vpe}, {"aq", aq},   {"ak", ak},   {"av", av},   {"ao", ao},
            {"ab", ab},   {"ln_g", ln_g}, {"ln_b", ln_b}, {"hw1", hw1}, {"hb1", hb1},
            {"hw2", hw2}, {"hb2", hb2}};
}

std::vector<Tensor> FusionModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor FusionModel::forward(const Tensor& pilot, const std::vector<Tensor>& views) const {
    if (pilot.shape().size() != 2 || pilot.dim(0) != 1 || pilot.dim(1) != cfg.pilot_width())
        throw ValidationError("fusion forward: pilot must be [1," +
                              std::to_string(cfg.pilot_width()) + "]");
    const std::size_t d = cfg.d_model;
    const std::size_t n_p = cfg.n_pilots;
    const std::size_t vw = 2 * cfg.n_tx;

    // One token per pilot: (re/im per antenna, band position), shared encoder.
    Tensor vals = reshape(slice_cols(pilot, 0, vw * n_p), {n_p, vw});
    Tensor pos = reshape(slice_cols(pilot, vw * n_p, cfg.pilot_width()), {n_p, 1});
    Tensor pilot_toks = affine(gelu(affine(concat_cols({vals, pos}), pw1, pb1)), pw2, pb2);

    std::vector<Tensor> tokens{pilot_toks};
    if (cfg.use_env) {
        if (views.size() != cfg.n_views)
            throw ValidationError("fusion forward: expected " + std::to_string(cfg.n_views) +
                                  " views, got " + std::to_string(views.size()));
        const std::size_t flat = 16 * (cfg.view_res / 4) * (cfg.view_res / 4);
        std::vector<Tensor> view_toks;
        view_toks.reserve(cfg.n_views);
        for (const auto& view : views) {
            if (view.shape() !=
                std::vector<std::size_t>{1, cfg.view_res, cfg.view_res})
                throw ValidationError("fusion forward: bad view shape");
            Tensor c1 = gelu(conv2d(view, cw1, cb1, 2, 1));
            Tensor c2 = gelu(conv2d(c1, cw2, cb2, 2, 1));
            view_toks.push_back(affine(reshape(c2, {1, flat}), ew, eb));
        }
        tokens.push_back(add(concat_rows(view_toks), vpe));
    }
    Tensor all = concat_rows(tokens);
    const std::size_t n_tok = all.dim(0);
    Tensor q = matmul(all, aq);
    Tensor k = matmul(all, ak);
    Tensor v = matmul(all, av);
    Tensor probs = softmax_rows(scale(matmul(q, transpose(k)),
                                      1.0 / std::sqrt(static_cast<double>(d))));
    Tensor fused = add_rowvec(matmul(matmul(probs, v), ao), ab);
    Tensor z = layer_norm(add(all, fused), ln_g, ln_b);
    Tensor pool = matmul(Tensor::from_values({1, n_tok},
                                             std::vector<double>(n_tok, 1.0 / n_tok)),
                         z);
    return affine(gelu(affine(pool, hw1, hb1)), hw2, hb2);
}

// --- MlpModel -----------------------------------------------------------------------

nlohmann::json MlpConfig::to_json() const {
    return {{"d_in", d_in}, {"d_hidden", d_hidden}, {"d_out", d_out}, {"init_std", init_std}};
}

MlpConfig MlpConfig::from_json(const nlohmann::json& j) {
    MlpConfig c;
    c.d_in = j.at("d_in").get<std::size_t>();
    c.d_hidden = j.at("d_hidden").get<std::size_t>();
    c.d_out = j.at("d_out").get<std::size_t>();
    c.init_std = j.at("init_std").get<double>();
    return c;
}

MlpModel MlpModel::init(const MlpConfig& cfg, Rng& rng) {
    if (cfg.d_in == 0 || cfg.d_hidden == 0 || cfg.d_out == 0)
        throw ConfigError("mlp: all dimensions must be positive");
    MlpModel m;
    m.cfg = cfg;
    m.w1 = param_normal({cfg.d_in, cfg.d_hidden}, rng, cfg.init_std);
    m.b1 = param_const({cfg.d_hidden}, 0.0);
    m.w2 = param_normal({cfg.d_hidden, cfg.d_out}, rng, cfg.init_std);
    m.b2 = param_const({cfg.d_out}, 0.0);
    return m;
}

std::vector<std::pair<std::string, Tensor>> MlpModel::named_parameters() {
    return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}};
}

std::vector<Tensor> MlpModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor MlpModel::forward(const Tensor& x) const {
    return affine(gelu(affine(x, w1, b1)), w2, b2);
}

// --- checkpoints ------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'D', 'T', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

Checkpoint pack_named(const std::string& kind, const nlohmann::json& model_cfg,
                      const nlohmann::json& extra,
                      std::vector<std::pair<std::string, Tensor>> named) {
    Checkpoint c;
    c.kind = kind;
    c.config = {{"model", model_cfg}, {"aux", extra}};
    for (auto& [name, t] : named) {
        c.shapes.emplace_back(name, t.shape());
        c.data.push_back(t.values());
    }
    return c;
}

void unpack_named(const Checkpoint& c, std::vector<std::pair<std::string, Tensor>> named) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) index[c.shapes[i].first] = i;
    for (auto& [name, t] : named) {
        auto it = index.find(name);
        if (it == index.end()) throw IoError("checkpoint missing tensor: " + name);
        const auto& [sname, shape] = c.shapes[it->second];
        if (shape != t.shape()) throw IoError("checkpoint shape mismatch for: " + name);
        t.values() = c.data[it->second];
    }
}
} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    io::BinWriter w(path);
    w.magic(kCkptMagic);
    w.u32(kCkptVersion);
    w.str(ckpt.kind);
    w.str(ckpt.config.dump());
    w.u32(static_cast<std::uint32_t>(ckpt.shapes.size()));
    for (std::size_t i = 0; i < ckpt.shapes.size(); ++i) {
        const auto& [name, shape] = ckpt.shapes[i];
        w.str(name);
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (auto dim : shape) w.u64(dim);
        w.f64s(ckpt.data[i]);
    }
    w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
    io::BinReader r(path);
    r.expect_magic(kCkptMagic);
    const auto version = r.u32();
    if (version != kCkptVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.kind = r.str();
    c.config = nlohmann::json::parse(r.str());
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        const auto ndim = r.u32();
        std::vector<std::size_t> shape(ndim);
        std::size_t numel = 1;
        for (auto& dim : shape) {
            dim = static_cast<std::size_t>(r.u64());
            numel *= dim;
        }
        c.shapes.emplace_back(std::move(name), std::move(shape));
        c.data.push_back(r.f64s(numel));
    }
    return c;
}

Checkpoint pack_gpt(GptModel& model, const nlohmann::json& extra) {
    return pack_named("gpt", model.cfg.to_json(), extra, model.named_parameters());
}

GptModel unpack_gpt(const Checkpoint& ckpt) {
    if (ckpt.kind != "gpt") throw IoError("checkpoint kind is not gpt: " + ckpt.kind);
    Rng rng(0);
    GptModel m = GptModel::init(GptConfig::from_json(ckpt.config.at("model")), rng);
    unpack_named(ckpt, m.named_parameters());
    return m;
}

Checkpoint pack_fusion(FusionModel& model, const nlohmann::json& extra) {
    return pack_named("fusion", model.cfg.to_json(), extra, model.named_parameters());
}

FusionModel unpack_fusion(const Checkpoint& ckpt) {
    if (ckpt.kind != "fusion") throw IoError("checkpoint kind is not fusion: " + ckpt.kind);
    Rng rng(0);
    FusionModel m = FusionModel::init(FusionConfig::from_json(ckpt.config.at("model")), rng);
    unpack_named(ckpt, m.named_parameters());
    return m;
}

Checkpoint pack_mlp(MlpModel& model, const nlohmann::json& extra) {
    return pack_named("mlp", model.cfg.to_json(), extra, model.named_parameters());
}

MlpModel unpack_mlp(const Checkpoint& ckpt) {
    if (ckpt.kind != "mlp") throw IoError("checkpoint kind is not mlp: " + ckpt.kind);
    Rng rng(0);
    MlpModel m = MlpModel::init(MlpConfig::from_json(ckpt.config.at("model")), rng);
    unpack_named(ckpt, m.named_parameters());
    return m;
}

} // namespace dtc::nn
