#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mfgn {

enum class Activation { ReLU, Tanh };

// Feedforward network with the activation applied after every layer except
// the last. A single layer is therefore a plain linear map.
struct MlpParams {
  std::vector<Eigen::MatrixXd> weights; // layer l: (out_l x in_l)
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::Tanh;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int input_size() const;
  int output_size() const;
  void validate() const;
};

// Cached per-layer pre-activations and outputs for the backward pass.
struct MlpTape {
  std::vector<Eigen::VectorXd> pre;
  std::vector<Eigen::VectorXd> post;
};

Eigen::VectorXd mlp_forward(const MlpParams& mlp, const Eigen::VectorXd& x, MlpTape* tape = nullptr);

struct MlpGradients {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;
  Eigen::VectorXd d_input;
};

// Exact gradients of <upstream, mlp(x)> with respect to parameters and input.
MlpGradients mlp_backward(const MlpParams& mlp, const MlpTape& tape, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& upstream);

}  // namespace mfgn
