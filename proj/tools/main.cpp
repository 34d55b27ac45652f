#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "polyapx/analysis.hpp"
#include "polyapx/approx.hpp"
#include "polyapx/bundle.hpp"
#include "polyapx/harness.hpp"
#include "polyapx/serialize.hpp"

namespace {

using namespace polyapx;

AnyApprox fit_approx(const AnyNet& net, const AnyDist& dist, int degree) {
    if (degree == 1) {
        return std::visit(
            [](const auto& n, const auto& d) -> AnyApprox { return linear_approx(n, d); }, net,
            dist);
    }
    if (const auto* mlp = std::get_if<MlpSpec>(&net)) {
        return std::visit(
            [&](const auto& d) -> AnyApprox { return quadratic_approx(*mlp, d); }, dist);
    }
    const GluSpec& glu = std::get<GluSpec>(net);
    if (const auto* g = std::get_if<Gaussian>(&dist)) {
        return AnyApprox(quadratic_approx(glu, *g));
    }
    throw invalid_input_error(
        "quadratic GLU fits need a single Gaussian input; fit one and refine for mixtures");
}

void run_approx(const std::string& net_path, const std::string& dist_path, int degree,
                const std::string& out_path) {
    const AnyNet net = net_from_tensors(bundle_read(net_path));
    const AnyDist dist = load_dist(dist_path);
    const AnyApprox approx = fit_approx(net, dist, degree);
    bundle_write(out_path, approx_to_tensors(approx));
    const double lambda = std::visit([](const auto& a) { return a.meta.ridge_lambda; }, approx);
    nlohmann::json meta;
    meta["degree"] = degree;
    meta["ridge_lambda"] = lambda;
    meta["out"] = out_path;
    std::cout << meta.dump() << "\n";
}

void run_eval(const std::string& net_path, const std::string& approx_path,
              const std::string& dist_path, std::int64_t n, std::uint64_t seed) {
    const AnyNet net = net_from_tensors(bundle_read(net_path));
    const AnyApprox approx = approx_from_tensors(bundle_read(approx_path));
    const AnyDist dist = load_dist(dist_path);
    const EvalReport report = evaluate(net, approx, dist, n, seed);
    std::cout << report_to_json(report).dump() << "\n";
}

void run_spectrum(const std::string& approx_path, int class_index, int top,
                  const std::string& out_path) {
    const AnyApprox approx = approx_from_tensors(bundle_read(approx_path));
    const auto* quad = std::get_if<QuadraticApproximant>(&approx);
    if (!quad) {
        throw invalid_input_error("spectrum requires a quadratic approximant bundle");
    }
    const Spectrum s = quadratic_spectrum(*quad, class_index);
    const int d = static_cast<int>(s.eigenvalues.size());
    const int k = (top <= 0 || top > d) ? d : top;

    nlohmann::json eigs = nlohmann::json::array();
    for (int i = 0; i < k; ++i) eigs.push_back(s.eigenvalues(i));
    nlohmann::json out;
    out["class"] = class_index;
    out["eigenvalues"] = eigs;
    std::cout << out.dump() << "\n";

    TensorBundle bundle;
    bundle.push_back(tensor_scalar("class_index", class_index));
    bundle.push_back(tensor_from_vector("eigenvalues", s.eigenvalues.head(k)));
    bundle.push_back(tensor_from_matrix("eigenvectors", s.eigenvectors.leftCols(k)));
    bundle_write(out_path, bundle);
}

void run_attack(const std::string& approx_path, int k_max, const std::string& net_path,
                const std::string& dist_path, std::int64_t n, std::uint64_t seed) {
    const AnyApprox approx = approx_from_tensors(bundle_read(approx_path));
    const auto* lin = std::get_if<LinearApproximant>(&approx);
    if (!lin) throw invalid_input_error("attack requires a linear approximant bundle");
    const AnyNet net = net_from_tensors(bundle_read(net_path));
    const AnyDist dist = load_dist(dist_path);
    const auto* mix = std::get_if<GaussianMixture>(&dist);
    if (!mix) {
        throw invalid_input_error("attack needs a mixture input: labels are component indices");
    }
    if (k_max < 0) k_max = beta_rank(*lin);

    std::vector<int> labels;
    const Eigen::MatrixXd x = sample(*mix, n, seed, &labels);
    std::cout << "k,acc_net,acc_approx\n";
    for (int k = 0; k <= k_max; ++k) {
        const AttackProjection proj = svd_attack_projection(*lin, k);
        const Eigen::MatrixXd xp = apply_attack(x, proj);
        const double acc_net = argmax_accuracy(forward_batch(net, xp), labels);
        const double acc_approx = argmax_accuracy(predict_batch(approx, xp), labels);
        std::cout << k << ',' << format_double(acc_net) << ',' << format_double(acc_approx)
                  << "\n";
    }
}

void run_sweep(const std::string& config_path, const std::string& out_dir) {
    const SweepConfig cfg = load_sweep_config(config_path);
    std::filesystem::create_directories(out_dir);

    const TaskSpec task = make_synthetic_task(cfg.d, cfg.classes, cfg.task_seed, cfg.gen);
    save_dist(out_dir + "/task_mixture.json", AnyDist(task.mixture));

    const std::vector<Checkpoint> checkpoints = train_mlp(task, cfg.train);
    for (const Checkpoint& chk : checkpoints) {
        bundle_write(out_dir + "/checkpoint_" + std::to_string(chk.step) + ".bundle",
                     net_to_tensors(AnyNet(chk.net)));
    }

    const std::vector<MetricsRecord> records =
        complexity_sweep(task, checkpoints, cfg.eval_n, cfg.eval_seed);
    const std::string csv_path = out_dir + "/metrics.csv";
    {
        std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
        if (!csv) throw format_error("sweep: cannot open " + csv_path);
        csv << metrics_csv_header() << "\n";
        for (const MetricsRecord& r : records) csv << metrics_csv_row(r) << "\n";
    }

    nlohmann::json meta;
    meta["checkpoints"] = checkpoints.size();
    meta["records"] = records.size();
    meta["csv"] = csv_path;
    std::cout << meta.dump() << "\n";
}

void run_refine(const std::string& approx_path, const std::string& net_path,
                const std::string& dist_path, std::int64_t steps, int batch,
                std::uint64_t seed, double lr, const std::string& out_path) {
    const AnyApprox approx = approx_from_tensors(bundle_read(approx_path));
    const auto* quad = std::get_if<QuadraticApproximant>(&approx);
    if (!quad) throw invalid_input_error("refine requires a quadratic approximant bundle");
    const AnyNet net = net_from_tensors(bundle_read(net_path));
    const AnyDist dist = load_dist(dist_path);
    const GaussianMixture mix = [&] {
        if (const auto* m = std::get_if<GaussianMixture>(&dist)) return *m;
        return GaussianMixture(Eigen::VectorXd::Ones(1), {std::get<Gaussian>(dist)});
    }();

    RefineOptions opts;
    opts.steps = steps;
    opts.batch = batch;
    opts.seed = seed;
    opts.step_size = lr;
    const QuadraticApproximant refined = refine_quadratic(*quad, net, mix, opts);
    bundle_write(out_path, approx_to_tensors(AnyApprox(refined)));

    nlohmann::json meta;
    meta["holdout_fvu"] = refined.meta.holdout_fvu;
    meta["kept_init"] = refined.meta.refine_kept_init;
    meta["out"] = out_path;
    std::cout << meta.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"least-squares polynomial approximants of shallow networks"};
    app.require_subcommand(1);

    std::string net_path, dist_path, approx_path, out_path, config_path, out_dir;
    int degree = 1, class_index = 0, top = 0, k = -1, batch = 256;
    std::int64_t n = 200000, steps = 10000;
    std::uint64_t seed = 0;
    double lr = 1e-3;

    CLI::App* c_approx = app.add_subcommand("approx", "fit a polynomial approximant");
    c_approx->add_option("--net", net_path, "network bundle")->required();
    c_approx->add_option("--dist", dist_path, "input distribution (.json or bundle)")->required();
    c_approx->add_option("--degree", degree, "1 linear, 2 quadratic")
        ->required()
        ->check(CLI::IsMember({1, 2}));
    c_approx->add_option("--out", out_path, "output approximant bundle")->required();
    c_approx->callback([&] { run_approx(net_path, dist_path, degree, out_path); });

    CLI::App* c_eval = app.add_subcommand("eval", "Monte-Carlo FVU/KL report");
    c_eval->add_option("--net", net_path)->required();
    c_eval->add_option("--approx", approx_path)->required();
    c_eval->add_option("--dist", dist_path)->required();
    c_eval->add_option("--n", n, "sample count");
    c_eval->add_option("--seed", seed);
    c_eval->callback([&] { run_eval(net_path, approx_path, dist_path, n, seed); });

    CLI::App* c_spec = app.add_subcommand("spectrum", "interaction-matrix eigendecomposition");
    c_spec->add_option("--approx", approx_path)->required();
    c_spec->add_option("--class", class_index)->required();
    c_spec->add_option("--top", top, "how many eigenpairs to keep (0 = all)");
    c_spec->add_option("--out", out_path, "eigenvector bundle")->required();
    c_spec->callback([&] { run_spectrum(approx_path, class_index, top, out_path); });

    CLI::App* c_attack = app.add_subcommand("attack", "accuracy vs ablated SVD components");
    c_attack->add_option("--approx", approx_path, "linear approximant bundle")->required();
    c_attack->add_option("--k", k, "max components to ablate (default rank)");
    c_attack->add_option("--net", net_path)->required();
    c_attack->add_option("--dist", dist_path)->required();
    c_attack->add_option("--n", n, "sample count");
    c_attack->add_option("--seed", seed);
    c_attack->callback([&] { run_attack(approx_path, k, net_path, dist_path, n, seed); });

    CLI::App* c_sweep = app.add_subcommand("sweep", "train, checkpoint, fit, evaluate");
    c_sweep->add_option("--config", config_path, "JSON experiment config")->required();
    c_sweep->add_option("--out-dir", out_dir)->required();
    c_sweep->callback([&] { run_sweep(config_path, out_dir); });

    CLI::App* c_refine = app.add_subcommand("refine", "stochastic quadratic refinement");
    c_refine->add_option("--approx", approx_path)->required();
    c_refine->add_option("--net", net_path)->required();
    c_refine->add_option("--dist", dist_path)->required();
    c_refine->add_option("--steps", steps);
    c_refine->add_option("--batch", batch);
    c_refine->add_option("--seed", seed);
    c_refine->add_option("--lr", lr);
    c_refine->add_option("--out", out_path)->required();
    c_refine->callback(
        [&] { run_refine(approx_path, net_path, dist_path, steps, batch, seed, lr, out_path); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const polyapx::invalid_input_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const polyapx::resource_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const polyapx::numerical_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
