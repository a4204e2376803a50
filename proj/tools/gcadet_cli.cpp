// Command-line front end: train / eval / ablate / gradcheck / bench / gen-data.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "gca/coco.hpp"
#include "gca/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "out";
    bool f64 = false;
    // overrides; only applied when the user passed them
    std::string mode, variant, pool_size;
    gca::u64 seed = 0;
    int reduction = 0;
    bool rpn_recal = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--seed", f.seed, "global seed");
    cmd->add_option("--mode", f.mode, "baseline|dense_no_attention|full|lightweight");
    cmd->add_option("--variant", f.variant, "conv|fc1|fc2|conv_fc1|conv_fc2|conv_fc1_fc2");
    cmd->add_option("--pool-size", f.pool_size, "initial pool size MxN, e.g. 16x16");
    cmd->add_option("--reduction", f.reduction, "SE reduction ratio r");
    cmd->add_flag("--rpn-recal", f.rpn_recal, "enable RPN feature recalibration");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_flag("--f64", f.f64, "run in 64-bit precision");
}

gca::ExperimentConfig resolve_config(const CLI::App* cmd, const CommonFlags& f) {
    gca::ExperimentConfig cfg;
    if (!f.config_path.empty()) cfg = gca::load_config(f.config_path);
    if (cmd->count("--seed")) cfg.seed = f.seed;
    if (cmd->count("--mode")) cfg.mode = f.mode;
    if (cmd->count("--variant")) cfg.variant = f.variant;
    if (cmd->count("--pool-size")) cfg.pool_size = gca::parse_pool_size(f.pool_size);
    if (cmd->count("--reduction")) cfg.reduction = f.reduction;
    if (cmd->count("--rpn-recal")) cfg.rpn_recalibrate = true;
    cfg.detection();  // validate
    return cfg;
}

void write_json(const nlohmann::json& j, const std::string& dir, const std::string& name) {
    fs::create_directories(dir);
    std::ofstream f(fs::path(dir) / name);
    f << j.dump(2) << "\n";
    std::printf("wrote %s\n", (fs::path(dir) / name).string().c_str());
}

template <typename T>
int run_train(const gca::ExperimentConfig& cfg, const std::string& out_dir) {
    gca::TrainOptions opts;
    opts.out_dir = out_dir;
    opts.verbose = true;
    gca::Detector<T> model(cfg.detection());
    auto result = gca::train<T>(cfg, opts, &model);
    auto metrics = gca::evaluate_model(model, gca::dataset_from_config(cfg));
    std::printf("trained %d iterations; smoothed loss %.4f -> %.4f\n", result.iterations,
                result.initial_smoothed, result.final_smoothed);
    std::printf("train-set ap50 %.4f  map %.4f\n", metrics.ap50, metrics.map);
    write_json(gca::metrics_to_json(metrics), out_dir, "train_metrics.json");
    std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Global-context-aware two-stage detector (desk scale)"};
    app.require_subcommand(1);

    CommonFlags train_f, eval_f, ablate_f, grad_f, bench_f, gen_f;

    auto* train_cmd = app.add_subcommand("train", "train a detector");
    add_common(train_cmd, train_f);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, eval_f);
    std::string checkpoint_path;
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
    add_common(ablate_cmd, ablate_f);
    std::vector<std::string> grid_specs;
    ablate_cmd->add_option("--grid", grid_specs,
                           "grid dimension key=v1,v2,... (repeatable); keys: mode, "
                           "pool_size, variant, r, rpn_recal");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    add_common(grad_cmd, grad_f);
    std::string scope = "ops";
    grad_cmd->add_option("--scope", scope, "ops|end_to_end|all");

    auto* bench_cmd = app.add_subcommand("bench", "parameter/MAC/latency report");
    add_common(bench_cmd, bench_f);

    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen_cmd, gen_f);
    int gen_count = 64;
    gen_cmd->add_option("--count", gen_count, "number of scenes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            auto cfg = resolve_config(train_cmd, train_f);
            return train_f.f64 ? run_train<double>(cfg, train_f.out_dir)
                               : run_train<float>(cfg, train_f.out_dir);
        }
        if (eval_cmd->parsed()) {
            auto cfg = resolve_config(eval_cmd, eval_f);
            gca::Detector<float> model(cfg.detection());
            auto entries = gca::read_checkpoint(checkpoint_path);
            auto params = model.params();
            gca::restore_params(params, entries);
            auto data = gca::dataset_from_config(cfg);
            auto metrics = gca::evaluate_model(model, data);
            metrics.total_params = model.total_params();
            std::printf("images %zu  map %.4f  ap50 %.4f\n", data.scenes.size(),
                        metrics.map, metrics.ap50);
            for (size_t i = 0; i < metrics.iou_thresholds.size(); ++i)
                std::printf("  AP@%.2f = %.4f\n", metrics.iou_thresholds[i],
                            metrics.ap_per_iou[i]);
            for (const auto& [c, ap] : metrics.ap_per_class)
                std::printf("  class %d AP = %.4f\n", c, ap);
            if (metrics.pair_accuracy >= 0)
                std::printf("  hue pair accuracy = %.4f\n", metrics.pair_accuracy);
            write_json(gca::metrics_to_json(metrics), eval_f.out_dir, "eval_metrics.json");
            return 0;
        }
        if (ablate_cmd->parsed()) {
            auto cfg = resolve_config(ablate_cmd, ablate_f);
            gca::AblateGrid grid;
            for (const auto& spec : grid_specs) {
                const auto eq = spec.find('=');
                gca::check(eq != std::string::npos, "grid spec must be key=v1,v2,...");
                std::vector<std::string> values;
                std::string rest = spec.substr(eq + 1);
                size_t pos = 0;
                while (pos != std::string::npos) {
                    const auto comma = rest.find(',', pos);
                    values.push_back(rest.substr(
                        pos, comma == std::string::npos ? std::string::npos : comma - pos));
                    pos = comma == std::string::npos ? comma : comma + 1;
                }
                grid.emplace_back(spec.substr(0, eq), values);
            }
            auto rep = gca::ablate(cfg, grid, ablate_f.out_dir, true);
            rep.print();
            return 0;
        }
        if (grad_cmd->parsed()) {
            bool ok = true;
            if (scope == "ops" || scope == "all") {
                auto rep = gca::grad_check_ops();
                std::printf("operation-level checks (tolerance %.0e):\n", rep.tolerance);
                rep.print();
                ok = ok && rep.all_pass();
            }
            if (scope == "end_to_end" || scope == "all") {
                auto rep = gca::grad_check_end_to_end();
                std::printf("end-to-end checks (tolerance %.0e):\n", rep.tolerance);
                rep.print();
                ok = ok && rep.all_pass();
            }
            std::printf("gradcheck %s\n", ok ? "PASS" : "FAIL");
            return ok ? 0 : 1;
        }
        if (bench_cmd->parsed()) {
            auto cfg = resolve_config(bench_cmd, bench_f);
            auto rep = gca::cost_report(cfg);
            rep.print();
            write_json(rep.to_json(), bench_f.out_dir, "cost_report.json");
            return 0;
        }
        if (gen_cmd->parsed()) {
            auto cfg = resolve_config(gen_cmd, gen_f);
            auto spec = cfg.scene_spec();
            auto data = gca::make_dataset(spec, gen_count);
            gca::export_coco(data, gen_f.out_dir);
            std::printf("wrote %d scenes and annotations.json to %s\n", gen_count,
                        gen_f.out_dir.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
