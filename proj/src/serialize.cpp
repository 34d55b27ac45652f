#include "polyapx/serialize.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace polyapx {

namespace {

constexpr double kKindMlp = 0.0;
constexpr double kKindGlu = 1.0;
constexpr double kKindLinear = 2.0;
constexpr double kKindQuadratic = 3.0;
constexpr double kKindGaussian = 4.0;
constexpr double kKindMixture = 5.0;

double act_code(Activation act) {
    switch (act) {
        case Activation::relu: return 0.0;
        case Activation::gelu: return 1.0;
        case Activation::identity: return 2.0;
    }
    throw invalid_input_error("act_code: unknown activation");
}

Activation act_from_code(double code) {
    if (code == 0.0) return Activation::relu;
    if (code == 1.0) return Activation::gelu;
    if (code == 2.0) return Activation::identity;
    throw format_error("unknown activation code " + std::to_string(code));
}

Activation activation_from_name(const std::string& name) {
    for (Activation a : {Activation::relu, Activation::gelu, Activation::identity}) {
        if (name == activation_name(a)) return a;
    }
    throw format_error("unknown activation name: " + name);
}

int kind_of(const TensorBundle& bundle) {
    const double k = scalar_from_tensor(find_tensor(bundle, "kind"));
    return static_cast<int>(k);
}

}  // namespace

TensorBundle net_to_tensors(const AnyNet& net) {
    TensorBundle out;
    if (const auto* mlp = std::get_if<MlpSpec>(&net)) {
        out.push_back(tensor_scalar("kind", kKindMlp));
        out.push_back(tensor_scalar("act", act_code(mlp->act)));
        out.push_back(tensor_from_matrix("w1", mlp->w1));
        out.push_back(tensor_from_vector("b1", mlp->b1));
        out.push_back(tensor_from_matrix("w2", mlp->w2));
        out.push_back(tensor_from_vector("b2", mlp->b2));
        return out;
    }
    const GluSpec& glu = std::get<GluSpec>(net);
    out.push_back(tensor_scalar("kind", kKindGlu));
    out.push_back(tensor_scalar("act", act_code(glu.act)));
    out.push_back(tensor_from_matrix("w", glu.w));
    out.push_back(tensor_from_matrix("v", glu.v));
    out.push_back(tensor_from_vector("b", glu.b));
    out.push_back(tensor_from_vector("c", glu.c));
    if (glu.w_out) out.push_back(tensor_from_matrix("w_out", *glu.w_out));
    return out;
}

AnyNet net_from_tensors(const TensorBundle& bundle) {
    const int kind = kind_of(bundle);
    if (kind == static_cast<int>(kKindMlp)) {
        const Activation act = act_from_code(scalar_from_tensor(find_tensor(bundle, "act")));
        return MlpSpec(matrix_from_tensor(find_tensor(bundle, "w1")),
                       vector_from_tensor(find_tensor(bundle, "b1")),
                       matrix_from_tensor(find_tensor(bundle, "w2")),
                       vector_from_tensor(find_tensor(bundle, "b2")), act);
    }
    if (kind == static_cast<int>(kKindGlu)) {
        const Activation act = act_from_code(scalar_from_tensor(find_tensor(bundle, "act")));
        std::optional<Eigen::MatrixXd> w_out;
        if (has_tensor(bundle, "w_out")) {
            w_out = matrix_from_tensor(find_tensor(bundle, "w_out"));
        }
        return GluSpec(matrix_from_tensor(find_tensor(bundle, "w")),
                       matrix_from_tensor(find_tensor(bundle, "v")),
                       vector_from_tensor(find_tensor(bundle, "b")),
                       vector_from_tensor(find_tensor(bundle, "c")), act, std::move(w_out));
    }
    throw format_error("bundle does not contain a network (kind " + std::to_string(kind) + ")");
}

TensorBundle approx_to_tensors(const AnyApprox& approx) {
    TensorBundle out;
    if (const auto* lin = std::get_if<LinearApproximant>(&approx)) {
        out.push_back(tensor_scalar("kind", kKindLinear));
        out.push_back(tensor_from_vector("alpha", lin->alpha));
        out.push_back(tensor_from_matrix("beta", lin->beta));
        out.push_back(tensor_scalar("ridge_lambda", lin->meta.ridge_lambda));
        return out;
    }
    const QuadraticApproximant& quad = std::get<QuadraticApproximant>(approx);
    out.push_back(tensor_scalar("kind", kKindQuadratic));
    out.push_back(tensor_from_vector("gamma", quad.gamma));
    out.push_back(tensor_from_matrix("beta", quad.beta));
    for (std::size_t k = 0; k < quad.q.size(); ++k) {
        out.push_back(tensor_from_matrix("q" + std::to_string(k), quad.q[k]));
    }
    out.push_back(tensor_scalar("ridge_lambda", quad.meta.ridge_lambda));
    return out;
}

AnyApprox approx_from_tensors(const TensorBundle& bundle) {
    const int kind = kind_of(bundle);
    FitMeta meta;
    if (has_tensor(bundle, "ridge_lambda")) {
        meta.ridge_lambda = scalar_from_tensor(find_tensor(bundle, "ridge_lambda"));
    }
    if (kind == static_cast<int>(kKindLinear)) {
        return LinearApproximant(vector_from_tensor(find_tensor(bundle, "alpha")),
                                 matrix_from_tensor(find_tensor(bundle, "beta")), meta);
    }
    if (kind == static_cast<int>(kKindQuadratic)) {
        Eigen::VectorXd gamma = vector_from_tensor(find_tensor(bundle, "gamma"));
        Eigen::MatrixXd beta = matrix_from_tensor(find_tensor(bundle, "beta"));
        std::vector<Eigen::MatrixXd> q;
        for (Eigen::Index k = 0; k < gamma.size(); ++k) {
            q.push_back(matrix_from_tensor(find_tensor(bundle, "q" + std::to_string(k))));
        }
        return QuadraticApproximant(std::move(gamma), std::move(beta), std::move(q), meta);
    }
    throw format_error("bundle does not contain an approximant (kind " + std::to_string(kind) +
                       ")");
}

TensorBundle dist_to_tensors(const AnyDist& dist) {
    TensorBundle out;
    if (const auto* g = std::get_if<Gaussian>(&dist)) {
        out.push_back(tensor_scalar("kind", kKindGaussian));
        out.push_back(tensor_from_vector("mean", g->mean));
        out.push_back(tensor_from_matrix("cov", g->cov));
        return out;
    }
    const GaussianMixture& mix = std::get<GaussianMixture>(dist);
    out.push_back(tensor_scalar("kind", kKindMixture));
    out.push_back(tensor_from_vector("weights", mix.weights));
    for (int c = 0; c < mix.size(); ++c) {
        out.push_back(tensor_from_vector("mean" + std::to_string(c),
                                         mix.components[static_cast<std::size_t>(c)].mean));
        out.push_back(tensor_from_matrix("cov" + std::to_string(c),
                                         mix.components[static_cast<std::size_t>(c)].cov));
    }
    return out;
}

AnyDist dist_from_tensors(const TensorBundle& bundle) {
    const int kind = kind_of(bundle);
    if (kind == static_cast<int>(kKindGaussian)) {
        return Gaussian(vector_from_tensor(find_tensor(bundle, "mean")),
                        matrix_from_tensor(find_tensor(bundle, "cov")));
    }
    if (kind == static_cast<int>(kKindMixture)) {
        const Eigen::VectorXd weights = vector_from_tensor(find_tensor(bundle, "weights"));
        std::vector<Gaussian> components;
        for (Eigen::Index c = 0; c < weights.size(); ++c) {
            components.emplace_back(
                vector_from_tensor(find_tensor(bundle, "mean" + std::to_string(c))),
                matrix_from_tensor(find_tensor(bundle, "cov" + std::to_string(c))));
        }
        return GaussianMixture(weights, std::move(components));
    }
    throw format_error("bundle does not contain a distribution (kind " + std::to_string(kind) +
                       ")");
}

namespace {

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(row);
    }
    return out;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw format_error("distribution JSON: expected an array");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i];
    return v;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) throw format_error("distribution JSON: expected a matrix");
    const std::size_t rows = j.size();
    const std::size_t cols = j[0].size();
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) {
            throw format_error("distribution JSON: ragged matrix rows");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c];
        }
    }
    return m;
}

}  // namespace

nlohmann::json dist_to_json(const AnyDist& dist) {
    nlohmann::json out;
    if (const auto* g = std::get_if<Gaussian>(&dist)) {
        out["type"] = "gaussian";
        out["mean"] = vector_to_json(g->mean);
        out["cov"] = matrix_to_json(g->cov);
        return out;
    }
    const GaussianMixture& mix = std::get<GaussianMixture>(dist);
    out["type"] = "mixture";
    out["weights"] = vector_to_json(mix.weights);
    nlohmann::json comps = nlohmann::json::array();
    for (const Gaussian& g : mix.components) {
        nlohmann::json c;
        c["mean"] = vector_to_json(g.mean);
        c["cov"] = matrix_to_json(g.cov);
        comps.push_back(c);
    }
    out["components"] = comps;
    return out;
}

AnyDist dist_from_json(const nlohmann::json& j) {
    const std::string type = j.value("type", "");
    if (type == "gaussian") {
        return Gaussian(vector_from_json(j.at("mean")), matrix_from_json(j.at("cov")));
    }
    if (type == "mixture") {
        const Eigen::VectorXd weights = vector_from_json(j.at("weights"));
        std::vector<Gaussian> components;
        for (const nlohmann::json& c : j.at("components")) {
            components.emplace_back(vector_from_json(c.at("mean")),
                                    matrix_from_json(c.at("cov")));
        }
        return GaussianMixture(weights, std::move(components));
    }
    throw format_error("distribution JSON: type must be \"gaussian\" or \"mixture\"");
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

AnyDist load_dist(const std::string& path) {
    if (ends_with(path, ".json")) {
        std::ifstream file(path);
        if (!file) throw format_error("load_dist: cannot open " + path);
        nlohmann::json j;
        try {
            file >> j;
        } catch (const nlohmann::json::exception& e) {
            throw format_error("load_dist: " + path + ": " + e.what());
        }
        return dist_from_json(j);
    }
    return dist_from_tensors(bundle_read(path));
}

void save_dist(const std::string& path, const AnyDist& dist) {
    if (ends_with(path, ".json")) {
        std::ofstream file(path, std::ios::trunc);
        if (!file) throw format_error("save_dist: cannot open " + path);
        file << dist_to_json(dist).dump(2) << "\n";
        return;
    }
    bundle_write(path, dist_to_tensors(dist));
}

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json out;
    out["fvu"] = report.fvu;
    out["kl"] = report.kl;
    if (report.has_accuracy) {
        out["accuracy_net"] = report.accuracy_net;
        out["accuracy_approx"] = report.accuracy_approx;
    } else {
        out["accuracy_net"] = nullptr;
        out["accuracy_approx"] = nullptr;
    }
    out["n"] = report.n_samples;
    out["seed"] = report.seed;
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string metrics_csv_header() { return "step,kind,fvu,kl,acc_net,acc_approx,n,seed"; }

std::string metrics_csv_row(const MetricsRecord& r) {
    std::string out = std::to_string(r.step);
    out += ',';
    out += r.kind;
    out += ',';
    out += format_double(r.fvu);
    out += ',';
    out += format_double(r.kl);
    out += ',';
    out += format_double(r.acc_net);
    out += ',';
    out += format_double(r.acc_approx);
    out += ',';
    out += std::to_string(r.n);
    out += ',';
    out += std::to_string(r.seed);
    return out;
}

std::vector<MetricsRecord> metrics_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw format_error("metrics CSV: empty");
    if (line != metrics_csv_header()) throw format_error("metrics CSV: bad header: " + line);
    std::vector<MetricsRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        MetricsRecord r;
        auto next = [&]() {
            if (!std::getline(row, field, ',')) {
                throw format_error("metrics CSV: short row: " + line);
            }
            return field;
        };
        r.step = std::stoll(next());
        r.kind = next();
        r.fvu = std::stod(next());
        r.kl = std::stod(next());
        r.acc_net = std::stod(next());
        r.acc_approx = std::stod(next());
        r.n = std::stoll(next());
        r.seed = std::stoull(next());
        out.push_back(std::move(r));
    }
    return out;
}

SweepConfig sweep_config_from_json(const nlohmann::json& j) {
    SweepConfig cfg;
    const nlohmann::json& task = j.at("task");
    cfg.d = task.at("d").get<int>();
    cfg.classes = task.at("classes").get<int>();
    cfg.task_seed = task.at("seed").get<std::uint64_t>();
    cfg.gen.train_size = task.value("train_size", cfg.gen.train_size);
    cfg.gen.separation = task.value("separation", cfg.gen.separation);
    cfg.gen.cond_max = task.value("cond_max", cfg.gen.cond_max);
    cfg.gen.cov_mix = task.value("cov_mix", cfg.gen.cov_mix);

    const nlohmann::json& train = j.at("train");
    cfg.train.hidden = train.at("hidden").get<int>();
    cfg.train.batch = train.at("batch").get<int>();
    cfg.train.steps = train.at("steps").get<std::int64_t>();
    cfg.train.step_size = train.at("step_size").get<double>();
    cfg.train.weight_decay = train.at("weight_decay").get<double>();
    cfg.train.checkpoint_steps = train.at("checkpoint_steps").get<std::vector<std::int64_t>>();
    cfg.train.seed = train.at("seed").get<std::uint64_t>();
    if (train.contains("activation")) {
        cfg.train.activation = activation_from_name(train.at("activation").get<std::string>());
    }

    const nlohmann::json& eval = j.at("eval");
    cfg.eval_n = eval.at("n").get<std::int64_t>();
    cfg.eval_seed = eval.at("seed").get<std::uint64_t>();
    return cfg;
}

SweepConfig load_sweep_config(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw format_error("load_sweep_config: cannot open " + path);
    nlohmann::json j;
    try {
        file >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("load_sweep_config: " + path + ": " + e.what());
    }
    try {
        return sweep_config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("load_sweep_config: " + path + ": " + e.what());
    }
}

}  // namespace polyapx
