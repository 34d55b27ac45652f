#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "polyapx/analysis.hpp"
#include "polyapx/gauss.hpp"
#include "polyapx/nets.hpp"

namespace polyapx {

// Synthetic classification task: one mixture component per class.
struct TaskSpec {
    int d = 0;
    int classes = 0;
    GaussianMixture mixture;
    std::int64_t train_size = 0;
    std::uint64_t seed = 0;

    TaskSpec(int d_in, int classes_in, GaussianMixture mixture_in, std::int64_t train_size_in,
             std::uint64_t seed_in);
};

// Knobs for the seeded task generator.
struct TaskGenOptions {
    double separation = 4.0;  // scale of the class-mean simplex
    double cond_max = 10.0;   // condition-number cap of each covariance
    // Strength of per-class covariance differences. 0 gives every class the
    // same covariance. Positive values add a class-specific PSD term confined
    // to the span of the centered class means, so the class conditionals stay
    // identical on the orthogonal complement of that span.
    double cov_mix = 0.0;
    std::int64_t train_size = 8192;
};

// Class means on a scaled simplex, random PSD covariances with bounded
// condition number, uniform weights.
TaskSpec make_synthetic_task(int d, int classes, std::uint64_t seed,
                             const TaskGenOptions& opts = {});

struct TrainConfig {
    int hidden = 128;
    int batch = 64;
    std::int64_t steps = 8192;
    double step_size = 0.05;
    double weight_decay = 0.1;
    Activation activation = Activation::relu;
    std::vector<std::int64_t> checkpoint_steps;  // strictly increasing, within [0, steps]
    std::uint64_t seed = 0;
};

struct Checkpoint {
    std::int64_t step = 0;
    MlpSpec net;
};

// Per-class empirical mean/covariance with shrinkage
// (1 - tau) S + tau (trace(S)/d) I, tau = 0.01; weights are class frequencies.
GaussianMixture fit_mixture_from_data(const Eigen::MatrixXd& features,
                                      const std::vector<int>& labels);

inline constexpr double kShrinkageTau = 0.01;

// Softmax cross-entropy training of an MLP on fresh mixture minibatches;
// SGD with momentum 0.9 and decoupled weight decay. Deterministic for fixed
// seeds. The returned list always starts with the step-0 initialization.
std::vector<Checkpoint> train_mlp(const TaskSpec& task, const TrainConfig& cfg);

struct MetricsRecord {
    std::int64_t step = 0;
    std::string kind;  // "linear" or "quadratic"
    double fvu = 0.0;
    double kl = 0.0;
    double acc_net = 0.0;
    double acc_approx = 0.0;
    std::int64_t n = 0;
    std::uint64_t seed = 0;
};

// For each checkpoint: fit linear and quadratic approximants to the task
// mixture (closed form; quadratic falls back to a standard-normal fit plus
// refine_quadratic above the dimension gate) and evaluate both on the same
// sample. Two records per checkpoint, linear first.
std::vector<MetricsRecord> complexity_sweep(const TaskSpec& task,
                                            const std::vector<Checkpoint>& checkpoints,
                                            std::int64_t eval_n, std::uint64_t seed);

}  // namespace polyapx
