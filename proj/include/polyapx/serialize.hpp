#pragma once

#include <string>

#include <json.hpp>

#include "polyapx/analysis.hpp"
#include "polyapx/approx.hpp"
#include "polyapx/bundle.hpp"
#include "polyapx/harness.hpp"
#include "polyapx/nets.hpp"

namespace polyapx {

// Networks and approximants travel as tensor bundles with a scalar "kind"
// tag: 0 MLP, 1 GLU, 2 linear approximant, 3 quadratic approximant,
// 4 Gaussian, 5 mixture. Activations encode as 0 relu, 1 gelu, 2 identity.

TensorBundle net_to_tensors(const AnyNet& net);
AnyNet net_from_tensors(const TensorBundle& bundle);

TensorBundle approx_to_tensors(const AnyApprox& approx);
AnyApprox approx_from_tensors(const TensorBundle& bundle);

TensorBundle dist_to_tensors(const AnyDist& dist);
AnyDist dist_from_tensors(const TensorBundle& bundle);

nlohmann::json dist_to_json(const AnyDist& dist);
AnyDist dist_from_json(const nlohmann::json& j);

// Distribution files are JSON when the path ends in .json, bundles otherwise.
AnyDist load_dist(const std::string& path);
void save_dist(const std::string& path, const AnyDist& dist);

nlohmann::json report_to_json(const EvalReport& report);

// Shortest round-trip decimal form; identical input bits give identical text.
std::string format_double(double v);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
std::vector<MetricsRecord> metrics_from_csv(const std::string& text);

// Experiment configuration consumed by the sweep driver.
struct SweepConfig {
    int d = 16;
    int classes = 4;
    std::uint64_t task_seed = 0;
    TaskGenOptions gen;
    TrainConfig train;
    std::int64_t eval_n = 200000;
    std::uint64_t eval_seed = 0;
};

SweepConfig sweep_config_from_json(const nlohmann::json& j);
SweepConfig load_sweep_config(const std::string& path);

}  // namespace polyapx
