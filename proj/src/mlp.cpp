#include "mfgn/mlp.hpp"

#include "mfgn/error.hpp"

namespace mfgn {

namespace {

Eigen::VectorXd apply_activation(Activation act, const Eigen::VectorXd& z) {
  if (act == Activation::Tanh) return z.array().tanh();
  return z.array().max(0.0);
}

Eigen::VectorXd activation_grad(Activation act, const Eigen::VectorXd& pre, const Eigen::VectorXd& post) {
  if (act == Activation::Tanh) return (1.0 - post.array().square()).matrix();
  return (pre.array() > 0.0).cast<double>().matrix();
}

}  // namespace

int MlpParams::input_size() const {
  if (weights.empty()) throw ArgumentError("MLP has no layers");
  return static_cast<int>(weights.front().cols());
}

int MlpParams::output_size() const {
  if (weights.empty()) throw ArgumentError("MLP has no layers");
  return static_cast<int>(weights.back().rows());
}

void MlpParams::validate() const {
  if (weights.empty() || weights.size() != biases.size())
    throw ArgumentError("MLP needs matching weight and bias lists");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows())
      throw ArgumentError("MLP bias size does not match layer rows");
    if (l + 1 < weights.size() && weights[l + 1].cols() != weights[l].rows())
      throw ArgumentError("MLP consecutive layer dimensions disagree");
  }
}

Eigen::VectorXd mlp_forward(const MlpParams& mlp, const Eigen::VectorXd& x, MlpTape* tape) {
  mlp.validate();
  if (x.size() != mlp.input_size()) throw ArgumentError("MLP input length mismatch");
  if (tape) {
    tape->pre.clear();
    tape->post.clear();
  }
  Eigen::VectorXd h = x;
  const int L = mlp.num_layers();
  for (int l = 0; l < L; ++l) {
    Eigen::VectorXd z = mlp.weights[static_cast<std::size_t>(l)] * h + mlp.biases[static_cast<std::size_t>(l)];
    Eigen::VectorXd out = (l + 1 < L) ? apply_activation(mlp.activation, z) : z;
    if (tape) {
      tape->pre.push_back(z);
      tape->post.push_back(out);
    }
    h = std::move(out);
  }
  return h;
}

MlpGradients mlp_backward(const MlpParams& mlp, const MlpTape& tape, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& upstream) {
  const int L = mlp.num_layers();
  if (static_cast<int>(tape.pre.size()) != L) throw ArgumentError("MLP tape does not match network depth");
  if (upstream.size() != mlp.output_size()) throw ArgumentError("MLP upstream gradient length mismatch");

  MlpGradients g;
  g.d_weights.resize(static_cast<std::size_t>(L));
  g.d_biases.resize(static_cast<std::size_t>(L));

  Eigen::VectorXd delta = upstream; // gradient at layer output
  for (int l = L - 1; l >= 0; --l) {
    const std::size_t ul = static_cast<std::size_t>(l);
    if (l + 1 < L) // activation between z and output
      delta = delta.cwiseProduct(activation_grad(mlp.activation, tape.pre[ul], tape.post[ul]));
    const Eigen::VectorXd& layer_in = (l == 0) ? x : tape.post[ul - 1];
    g.d_weights[ul] = delta * layer_in.transpose();
    g.d_biases[ul] = delta;
    delta = mlp.weights[ul].transpose() * delta;
  }
  g.d_input = delta;
  return g;
}

}  // namespace mfgn
