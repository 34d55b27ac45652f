#include "polyapx/nets.hpp"

namespace polyapx {

namespace {

void apply_activation(Activation act, Eigen::MatrixXd& m) {
    switch (act) {
        case Activation::relu:
            m = m.cwiseMax(0.0);
            break;
        case Activation::gelu:
            m = m.unaryExpr([](double x) { return activation_value(Activation::gelu, x); });
            break;
        case Activation::identity:
            break;
    }
}

}  // namespace

MlpSpec::MlpSpec(Eigen::MatrixXd w1_in, Eigen::VectorXd b1_in, Eigen::MatrixXd w2_in,
                 Eigen::VectorXd b2_in, Activation act_in)
    : w1(std::move(w1_in)), b1(std::move(b1_in)), w2(std::move(w2_in)), b2(std::move(b2_in)),
      act(act_in) {
    if (b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows()) {
        throw invalid_input_error("MlpSpec: inconsistent weight shapes");
    }
}

GluSpec::GluSpec(Eigen::MatrixXd w_in, Eigen::MatrixXd v_in, Eigen::VectorXd b_in,
                 Eigen::VectorXd c_in, Activation act_in, std::optional<Eigen::MatrixXd> w_out_in)
    : w(std::move(w_in)), v(std::move(v_in)), b(std::move(b_in)), c(std::move(c_in)),
      act(act_in), w_out(std::move(w_out_in)) {
    if (v.rows() != w.rows() || v.cols() != w.cols() || b.size() != w.rows() ||
        c.size() != w.rows()) {
        throw invalid_input_error("GluSpec: inconsistent weight shapes");
    }
    if (w_out && w_out->cols() != w.rows()) {
        throw invalid_input_error("GluSpec: output matrix column count must match hidden width");
    }
}

Eigen::VectorXd forward(const MlpSpec& net, const Eigen::VectorXd& x) {
    Eigen::VectorXd pre = net.w1 * x + net.b1;
    for (Eigen::Index i = 0; i < pre.size(); ++i) pre[i] = activation_value(net.act, pre[i]);
    return net.w2 * pre + net.b2;
}

Eigen::VectorXd forward(const GluSpec& net, const Eigen::VectorXd& x) {
    Eigen::VectorXd gate = net.w * x + net.b;
    const Eigen::VectorXd lin = net.v * x + net.c;
    for (Eigen::Index i = 0; i < gate.size(); ++i) gate[i] = activation_value(net.act, gate[i]);
    Eigen::VectorXd glu = gate.cwiseProduct(lin);
    return net.w_out ? Eigen::VectorXd(*net.w_out * glu) : glu;
}

Eigen::MatrixXd forward_batch(const MlpSpec& net, const Eigen::MatrixXd& X) {
    if (X.cols() != net.input_dim()) throw invalid_input_error("forward_batch: input dim mismatch");
    Eigen::MatrixXd pre = X * net.w1.transpose();
    pre.rowwise() += net.b1.transpose();
    apply_activation(net.act, pre);
    Eigen::MatrixXd out = pre * net.w2.transpose();
    out.rowwise() += net.b2.transpose();
    return out;
}

Eigen::MatrixXd forward_batch(const GluSpec& net, const Eigen::MatrixXd& X) {
    if (X.cols() != net.input_dim()) throw invalid_input_error("forward_batch: input dim mismatch");
    Eigen::MatrixXd gate = X * net.w.transpose();
    gate.rowwise() += net.b.transpose();
    apply_activation(net.act, gate);
    Eigen::MatrixXd lin = X * net.v.transpose();
    lin.rowwise() += net.c.transpose();
    Eigen::MatrixXd glu = gate.cwiseProduct(lin);
    return net.w_out ? Eigen::MatrixXd(glu * net.w_out->transpose()) : glu;
}

int net_input_dim(const AnyNet& net) {
    return std::visit([](const auto& n) { return n.input_dim(); }, net);
}

int net_output_dim(const AnyNet& net) {
    return std::visit([](const auto& n) { return n.output_dim(); }, net);
}

Eigen::MatrixXd forward_batch(const AnyNet& net, const Eigen::MatrixXd& X) {
    return std::visit([&](const auto& n) { return forward_batch(n, X); }, net);
}

}  // namespace polyapx
