#pragma once

#include <chrono>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gca/gradcheck.hpp"
#include "gca/train.hpp"

namespace gca {

// --- cost accounting ---------------------------------------------------------------

struct CostRow {
    std::string mode;
    i64 head_params = 0;
    i64 total_params = 0;
    i64 forward_macs = 0;
    double latency_ms = 0;
};

struct CostReport {
    std::vector<CostRow> rows;

    const CostRow& row(const std::string& mode) const {
        for (const auto& r : rows)
            if (r.mode == mode) return r;
        fail("cost report: missing mode " + mode);
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto& r : rows)
            rows_j.push_back({{"mode", r.mode},
                              {"head_params", r.head_params},
                              {"total_params", r.total_params},
                              {"forward_macs", r.forward_macs},
                              {"latency_ms", r.latency_ms}});
        return {{"rows", rows_j}};
    }

    void print(FILE* out = stdout) const {
        std::fprintf(out, "%-22s %14s %14s %16s %12s\n", "mode", "head params",
                     "total params", "forward MACs", "latency ms");
        for (const auto& r : rows)
            std::fprintf(out, "%-22s %14lld %14lld %16lld %12.3f\n", r.mode.c_str(),
                         static_cast<long long>(r.head_params),
                         static_cast<long long>(r.total_params),
                         static_cast<long long>(r.forward_macs), r.latency_ms);
    }
};

// Parameter census, MAC estimate, and wall-clock inference latency (mean of
// `runs` after `warmups`) for the baseline, full, and lightweight heads on one
// fixed input.
inline CostReport cost_report(const ExperimentConfig& base, int warmups = 5, int runs = 50) {
    CostReport rep;
    SceneSpec spec = base.scene_spec();
    Scene scene = generate_scene(spec, 0);
    auto img = scene_to_tensor<float>(scene);
    for (const char* mode : {"baseline", "full", "lightweight"}) {
        ExperimentConfig cfg = base;
        cfg.mode = mode;
        Detector<float> model(cfg.detection());
        model.init(cfg.seed);
        CostRow row;
        row.mode = mode;
        row.head_params = model.params_with_prefix("head.");
        row.total_params = model.total_params();
        {
            MacCounter macs;
            (void)model.detect(img);
            row.forward_macs = macs.total();
        }
        for (int i = 0; i < warmups; ++i) (void)model.detect(img);
        auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < runs; ++i) (void)model.detect(img);
        auto t1 = std::chrono::steady_clock::now();
        row.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / runs;
        rep.rows.push_back(row);
    }
    return rep;
}

// --- ablation grids ------------------------------------------------------------------

using AblateGrid = std::vector<std::pair<std::string, std::vector<std::string>>>;

inline std::array<int, 2> parse_pool_size(const std::string& s) {
    const auto x = s.find('x');
    check(x != std::string::npos, "pool size must look like MxN: " + s);
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

inline void apply_grid_value(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
    if (key == "mode") {
        (void)parse_mode(value);
        cfg.mode = value;
    } else if (key == "variant") {
        (void)parse_variant(value);
        cfg.variant = value;
    } else if (key == "pool_size") {
        cfg.pool_size = parse_pool_size(value);
    } else if (key == "r") {
        cfg.reduction = std::stoi(value);
    } else if (key == "rpn_recal") {
        check(value == "on" || value == "off", "rpn_recal must be on|off");
        cfg.rpn_recalibrate = value == "on";
    } else {
        fail("invalid grid key: " + key);
    }
}

struct AblateRow {
    std::map<std::string, std::string> cell;
    double ap50 = 0, map = 0;
    double final_loss = 0, initial_loss = 0;
    i64 head_params = 0;
    int iterations = 0;
};

struct AblateReport {
    std::vector<std::string> keys;
    std::vector<AblateRow> rows;

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json cell(r.cell);
            rows_j.push_back({{"cell", cell},
                              {"ap50", r.ap50},
                              {"map", r.map},
                              {"final_loss", r.final_loss},
                              {"initial_loss", r.initial_loss},
                              {"head_params", r.head_params},
                              {"iterations", r.iterations}});
        }
        return {{"grid_keys", keys}, {"rows", rows_j}};
    }

    void print(FILE* out = stdout) const {
        for (const auto& r : rows) {
            std::string cell;
            for (const auto& [k, v] : r.cell) cell += k + "=" + v + " ";
            if (cell.empty()) cell = "(default) ";
            std::fprintf(out, "%-52s ap50 %.4f  map %.4f  loss %.4f  head_params %lld\n",
                         cell.c_str(), r.ap50, r.map, r.final_loss,
                         static_cast<long long>(r.head_params));
        }
    }
};

// Trains and evaluates every cell of the grid with a shared base seed. Row
// structure depends only on the grid, not on results.
inline AblateReport ablate(const ExperimentConfig& base, const AblateGrid& grid,
                           const std::string& out_dir = "", bool verbose = false) {
    AblateReport rep;
    for (const auto& [k, vals] : grid) {
        check(!vals.empty(), "empty grid dimension: " + k);
        rep.keys.push_back(k);
    }
    // cartesian product, first key slowest
    std::vector<std::map<std::string, std::string>> cells{{}};
    for (const auto& [key, values] : grid) {
        std::vector<std::map<std::string, std::string>> next;
        for (const auto& cell : cells)
            for (const auto& v : values) {
                auto c = cell;
                c[key] = v;
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }

    for (const auto& cell : cells) {
        ExperimentConfig cfg = base;
        for (const auto& [k, v] : cell) apply_grid_value(cfg, k, v);
        cfg.detection();  // validate early

        Detector<float> model(cfg.detection());
        TrainOptions opts;
        opts.verbose = false;
        auto result = train<float>(cfg, opts, &model);
        auto metrics = evaluate_model(model, dataset_from_config(cfg));

        AblateRow row;
        row.cell = cell;
        row.ap50 = metrics.ap50;
        row.map = metrics.map;
        row.final_loss = result.final_smoothed;
        row.initial_loss = result.initial_smoothed;
        row.iterations = result.iterations;
        {
            ParamRefs<float> ps;
            model.head.collect(ps);
            row.head_params = param_count(ps);
        }
        rep.rows.push_back(std::move(row));
        if (verbose) {
            std::string label;
            for (const auto& [k, v] : cell) label += k + "=" + v + " ";
            std::fprintf(stderr, "ablate cell done: %s\n", label.c_str());
        }
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream f(std::filesystem::path(out_dir) / "ablation.json");
        f << rep.to_json().dump(2) << "\n";
    }
    return rep;
}

// metrics report serialization shared by the CLI and tests
inline nlohmann::json metrics_to_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["map"] = rep.map;
    j["ap50"] = rep.ap50;
    j["iou_thresholds"] = rep.iou_thresholds;
    j["ap_per_iou"] = rep.ap_per_iou;
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [c, ap] : rep.ap_per_class) per_class[std::to_string(c)] = ap;
    j["ap_per_class"] = per_class;
    if (rep.pair_accuracy >= 0) j["pair_accuracy"] = rep.pair_accuracy;
    if (rep.total_params > 0) j["total_params"] = rep.total_params;
    if (rep.forward_latency_ms >= 0) j["forward_latency_ms"] = rep.forward_latency_ms;
    return j;
}

}  // namespace gca
