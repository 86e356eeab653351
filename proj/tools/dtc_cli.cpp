// SPDX-License-Identifier: Apache-2.0
//
// dtc: one binary multiplexing the whole pipeline. Every subcommand reads an
// optional config file, applies --set overrides, echoes the resolved config
// into the output directory, and writes its artifacts there.

#include "dtc/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace dtc;
using pipeline::ReferenceConfig;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides; // key=value
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned workers = 0;
};

void add_common(CLI::App* cmd, GlobalArgs& g) {
    cmd->add_option("--config", g.config_path, "config file (key = value sections)")
        ->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", g.out_dir, "output directory (default: out)");
    cmd->add_option("--set", g.overrides, "override a config key, e.g. --set gpt.d_model=32");
    cmd->add_option("--seed", g.seed, "override scene.seed and every stage seed base")
        ->each([&g](const std::string&) { g.seed_set = true; });
    cmd->add_option("--workers", g.workers, "worker threads (default: hardware)");
}

ReferenceConfig resolve(const GlobalArgs& g) {
    ReferenceConfig cfg;
    if (!g.config_path.empty()) cfg = pipeline::load_config_file(g.config_path, cfg);
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        pipeline::apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed_set) {
        cfg.scene.seed = g.seed;
        cfg.scene.new_seed = seed_for(g.seed, "held-out-scene");
        cfg.gpt_train.seed = g.seed;
        cfg.fusion_train.seed = g.seed;
        cfg.fusion.seed = g.seed;
        cfg.mlp.seed = g.seed;
    }
    if (g.workers > 0) set_worker_count(g.workers);
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

// Each run leaves its exact effective configuration next to its artifacts.
std::string prepare_out(const GlobalArgs& g, const ReferenceConfig& cfg) {
    fs::create_directories(g.out_dir);
    write_text((fs::path(g.out_dir) / "resolved_config.toml").string(),
               pipeline::resolved_config_text(cfg));
    return g.out_dir;
}

std::string at(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void log_line(const std::string& m) { std::cout << m << "\n"; }

// Shared fixtures loaded lazily from a prior stage's artifacts.
scene::Scene need_scene(const std::string& dir, const std::string& name) {
    const auto path = at(dir, name);
    if (!fs::exists(path))
        throw IoError("missing " + path + " (run `dtc scene-gen` first)");
    return scene::load_scene(path);
}

SnapshotArchive need_archive(const std::string& dir) {
    const auto path = at(dir, "archive.dtcs");
    if (!fs::exists(path)) throw IoError("missing " + path + " (run `dtc simulate` first)");
    return load_archive(path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"digital-twin channel laboratory"};
    app.require_subcommand(1);
    GlobalArgs g;

    auto* scene_gen = app.add_subcommand("scene-gen", "generate the origin and held-out scenes");
    auto* simulate = app.add_subcommand("simulate", "trace the reference trajectory");
    auto* dataset = app.add_subcommand("dataset", "build timeseries + fusion datasets");
    auto* train = app.add_subcommand("train", "train a model on a built dataset");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    auto* sweep = app.add_subcommand("sweep", "NMSE vs horizon for gpt and baselines");
    auto* table2 = app.add_subcommand("table2", "cross-scene generalization table");
    auto* map_cmd = app.add_subcommand("map", "coverage map over the origin scene");
    auto* dtc_run = app.add_subcommand("dtc-run", "closed predict/decide/feedback loop");
    auto* repro = app.add_subcommand("reproduce", "full reference pipeline end to end");
    for (auto* c : {scene_gen, simulate, dataset, train, eval_cmd, sweep, table2, map_cmd,
                    dtc_run, repro})
        add_common(c, g);

    std::string task = "gpt";
    train->add_option("--task", task, "gpt | fusion | rs_wowei")
        ->check(CLI::IsMember({"gpt", "fusion", "rs_wowei"}));
    std::string eval_task = "gpt";
    eval_cmd->add_option("--task", eval_task, "gpt | fusion | rs_wowei")
        ->check(CLI::IsMember({"gpt", "fusion", "rs_wowei"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const ReferenceConfig cfg = resolve(g);

        if (*scene_gen) {
            const auto dir = prepare_out(g, cfg);
            const auto origin = pipeline::make_scene(cfg, cfg.scene.seed);
            scene::save_scene(origin, at(dir, "scene.json"));
            const auto fresh = pipeline::make_scene(cfg, cfg.scene.new_seed);
            scene::save_scene(fresh, at(dir, "scene_new.json"));
            log_line("scene-gen: wrote scene.json (id " +
                     std::to_string(scene_content_id(origin)) + ") and scene_new.json");
        } else if (*simulate) {
            const auto dir = prepare_out(g, cfg);
            const auto sc = need_scene(dir, "scene.json");
            const auto archive = pipeline::simulate_trajectory(cfg, sc);
            save_archive(at(dir, "archive.dtcs"), archive);
            log_line("simulate: " + std::to_string(archive.slots.size()) + " slots -> " +
                     at(dir, "archive.dtcs"));
        } else if (*dataset) {
            const auto dir = prepare_out(g, cfg);
            const auto sc = need_scene(dir, "scene.json");
            const auto archive = need_archive(dir);
            const auto ts = pipeline::build_timeseries(cfg, archive);
            save_timeseries_dataset(at(dir, "ts_dataset"), ts);
            const auto fo = pipeline::build_fusion(cfg, sc);
            save_fusion_dataset(at(dir, "fusion_origin"), fo);
            const auto fresh = need_scene(dir, "scene_new.json");
            const auto fn = pipeline::build_fusion(cfg, fresh);
            save_fusion_dataset(at(dir, "fusion_new"), fn);
            log_line("dataset: ts " + std::to_string(ts.train.size()) + "/" +
                     std::to_string(ts.val.size()) + "/" + std::to_string(ts.test.size()) +
                     " windows, fusion " + std::to_string(fo.train.size()) + " train samples");
        } else if (*train) {
            const auto dir = prepare_out(g, cfg);
            if (task == "gpt") {
                const auto ts = load_timeseries_dataset(at(dir, "ts_dataset"));
                auto r = pipeline::train_gpt_stage(cfg, ts);
                auto ck = nn::pack_gpt(r.model, {{"task", "gpt"}});
                nn::save_checkpoint(at(dir, "gpt.dtck"), ck);
                write_text(at(dir, "report_gpt.json"), r.report.to_json().dump(2) + "\n");
                log_line("train gpt: best val nmse " +
                         experiments::format_double(r.report.best_val_nmse));
            } else {
                const auto ds = load_fusion_dataset(at(dir, "fusion_origin"));
                const bool use_env = task == "fusion";
                auto r = pipeline::train_fusion_stage(cfg, ds, use_env);
                auto ck = nn::pack_fusion(r.model, {{"task", task}});
                nn::save_checkpoint(at(dir, task + ".dtck"), ck);
                write_text(at(dir, "report_" + task + ".json"), r.report.to_json().dump(2) + "\n");
                log_line("train " + task + ": best val nmse " +
                         experiments::format_double(r.report.best_val_nmse));
            }
        } else if (*eval_cmd) {
            const auto dir = prepare_out(g, cfg);
            nlohmann::json out;
            if (eval_task == "gpt") {
                const auto ts = load_timeseries_dataset(at(dir, "ts_dataset"));
                auto model = nn::unpack_gpt(nn::load_checkpoint(at(dir, "gpt.dtck")));
                const auto ar = pipeline::fit_ar_stage(cfg, ts);
                const auto mlp = pipeline::train_mlp_stage(cfg, ts);
                const auto curves = pipeline::sweep_stage(cfg, ts, model, ar, mlp);
                double mean = 0.0;
                for (double v : curves.models.front().second) mean += v;
                mean /= static_cast<double>(curves.models.front().second.size());
                out = {{"task", "gpt"}, {"mean_nmse_over_horizons", mean}};
            } else {
                const auto ds = load_fusion_dataset(at(dir, "fusion_origin"));
                auto model = nn::unpack_fusion(nn::load_checkpoint(at(dir, eval_task + ".dtck")));
                const auto r = experiments::eval_fusion_split(model, ds.test, ds.stats);
                out = {{"task", eval_task}, {"nmse", r.nmse}, {"cosine", r.cosine}};
            }
            write_text(at(dir, "eval_" + eval_task + ".json"), out.dump(2) + "\n");
            log_line("eval " + eval_task + ": " + out.dump());
        } else if (*sweep) {
            const auto dir = prepare_out(g, cfg);
            const auto ts = load_timeseries_dataset(at(dir, "ts_dataset"));
            auto model = nn::unpack_gpt(nn::load_checkpoint(at(dir, "gpt.dtck")));
            const auto ar = pipeline::fit_ar_stage(cfg, ts);
            const auto mlp = pipeline::train_mlp_stage(cfg, ts);
            const auto curves = pipeline::sweep_stage(cfg, ts, model, ar, mlp);
            experiments::write_curve_csv(at(dir, "curve.csv"), curves);
            log_line("sweep: curve.csv with " + std::to_string(curves.max_horizon) +
                     " horizons per model");
        } else if (*table2) {
            const auto dir = prepare_out(g, cfg);
            const auto fo = load_fusion_dataset(at(dir, "fusion_origin"));
            const auto fn = load_fusion_dataset(at(dir, "fusion_new"));
            auto fusion = nn::unpack_fusion(nn::load_checkpoint(at(dir, "fusion.dtck")));
            auto wowei = nn::unpack_fusion(nn::load_checkpoint(at(dir, "rs_wowei.dtck")));
            const auto rows = experiments::generalization_study(fusion, wowei, fo, fn);
            experiments::write_table2_csv(at(dir, "table2.csv"), rows);
            write_text(at(dir, "table2.txt"), experiments::format_table2_text(rows));
            std::cout << experiments::format_table2_text(rows);
        } else if (*map_cmd) {
            const auto dir = prepare_out(g, cfg);
            const auto sc = need_scene(dir, "scene.json");
            const auto cmap = pipeline::map_stage(cfg, sc);
            loop::write_channel_map_csv(at(dir, "channel_map.csv"), cmap);
            log_line("map: " + std::to_string(cmap.nx) + "x" + std::to_string(cmap.ny) +
                     " cells -> channel_map.csv");
        } else if (*dtc_run) {
            const auto dir = prepare_out(g, cfg);
            const auto archive = need_archive(dir);
            const auto ts = load_timeseries_dataset(at(dir, "ts_dataset"));
            auto model = nn::unpack_gpt(nn::load_checkpoint(at(dir, "gpt.dtck")));
            loop::GptPredictor pred(std::move(model), ts.stats, cfg.gpt_train.seed);
            const auto res = pipeline::loop_stage(cfg, archive, pred);
            loop::write_loop_log(at(dir, "loop_log.jsonl"), res);
            log_line("dtc-run: mean nmse " + experiments::format_double(res.mean_nmse) +
                     ", mean gain ratio " + experiments::format_double(res.mean_gain_ratio) +
                     ", recollect " + std::to_string(res.n_recollect) + ", retrain " +
                     std::to_string(res.n_retrain));
        } else if (*repro) {
            const auto sum = pipeline::reproduce_reference(cfg, g.out_dir, log_line);
            log_line("reproduce: done in " + experiments::format_double(sum.wall_seconds) + " s");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
