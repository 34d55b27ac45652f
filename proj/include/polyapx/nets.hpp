#pragma once

#include <Eigen/Dense>
#include <optional>
#include <variant>

#include "polyapx/actint.hpp"
#include "polyapx/errors.hpp"

namespace polyapx {

// f(x) = w2 * act(w1 x + b1) + b2, column-vector convention.
struct MlpSpec {
    Eigen::MatrixXd w1;  // h x d
    Eigen::VectorXd b1;  // h
    Eigen::MatrixXd w2;  // o x h
    Eigen::VectorXd b2;  // o
    Activation act = Activation::relu;

    MlpSpec(Eigen::MatrixXd w1_in, Eigen::VectorXd b1_in, Eigen::MatrixXd w2_in,
            Eigen::VectorXd b2_in, Activation act_in);

    int input_dim() const { return static_cast<int>(w1.cols()); }
    int hidden_dim() const { return static_cast<int>(w1.rows()); }
    int output_dim() const { return static_cast<int>(w2.rows()); }
};

// GLU(x) = act(w x + b) .* (v x + c), optionally followed by an output matrix
// w_out (o x h, identity when absent).
struct GluSpec {
    Eigen::MatrixXd w;  // h x d (gate path)
    Eigen::MatrixXd v;  // h x d (linear path)
    Eigen::VectorXd b;  // h
    Eigen::VectorXd c;  // h
    Activation act = Activation::relu;
    std::optional<Eigen::MatrixXd> w_out;

    GluSpec(Eigen::MatrixXd w_in, Eigen::MatrixXd v_in, Eigen::VectorXd b_in,
            Eigen::VectorXd c_in, Activation act_in,
            std::optional<Eigen::MatrixXd> w_out_in = std::nullopt);

    int input_dim() const { return static_cast<int>(w.cols()); }
    int hidden_dim() const { return static_cast<int>(w.rows()); }
    int output_dim() const {
        return w_out ? static_cast<int>(w_out->rows()) : hidden_dim();
    }
};

Eigen::VectorXd forward(const MlpSpec& net, const Eigen::VectorXd& x);
Eigen::VectorXd forward(const GluSpec& net, const Eigen::VectorXd& x);

// Batched forward; rows of X are samples, rows of the result are outputs.
Eigen::MatrixXd forward_batch(const MlpSpec& net, const Eigen::MatrixXd& X);
Eigen::MatrixXd forward_batch(const GluSpec& net, const Eigen::MatrixXd& X);

using AnyNet = std::variant<MlpSpec, GluSpec>;

int net_input_dim(const AnyNet& net);
int net_output_dim(const AnyNet& net);
Eigen::MatrixXd forward_batch(const AnyNet& net, const Eigen::MatrixXd& X);

}  // namespace polyapx
