#pragma once

#include "genbound/numerics.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace genbound {

enum class Activation { relu, silu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "silu"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  throw std::invalid_argument("unknown activation: " + std::string(s));
}

/// Fully connected network with hand-written backprop. All weights and biases
/// live in one flat parameter vector so optimizers and gradient checks can
/// treat the network as a point in R^n. Layer l stores W_l (out x in,
/// column-major) followed by b_l.
class Mlp {
 public:
  /// Activations recorded by a forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> inputs;    // input to each layer
    std::vector<Matrix> preacts;   // pre-activation of each hidden layer
  };

  Mlp() = default;

  Mlp(std::vector<std::size_t> dims, Activation act) : dims_(std::move(dims)), act_(act) {
    require(dims_.size() >= 2, "Mlp: need at least input and output dims");
    for (std::size_t d : dims_) require(d >= 1, "Mlp: layer dims must be positive");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      offsets_.push_back(offset);
      offset += dims_[l + 1] * dims_[l] + dims_[l + 1];
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
  }

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init_uniform(Rng& rng) {
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
      const std::size_t n = dims_[l + 1] * dims_[l] + dims_[l + 1];
      for (std::size_t i = 0; i < n; ++i)
        params_[static_cast<Eigen::Index>(offsets_[l] + i)] = rng.uniform(-bound, bound);
    }
  }

  void zero_output_layer() {
    const std::size_t l = num_layers() - 1;
    const std::size_t n = dims_[l + 1] * dims_[l] + dims_[l + 1];
    params_.segment(static_cast<Eigen::Index>(offsets_[l]), static_cast<Eigen::Index>(n)).setZero();
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  Activation activation() const { return act_; }
  std::size_t num_layers() const { return dims_.size() - 1; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {params_.data() + offsets_[l], static_cast<Eigen::Index>(dims_[l + 1]),
            static_cast<Eigen::Index>(dims_[l])};
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + dims_[l + 1] * dims_[l], static_cast<Eigen::Index>(dims_[l + 1])};
  }

  Matrix forward(const Matrix& x) const {
    Matrix a = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Matrix z = a * weight(l).transpose();
      z.rowwise() += bias(l).transpose();
      if (l + 1 < num_layers()) {
        a = activate(z);
      } else {
        a = std::move(z);
      }
    }
    return a;
  }

  Matrix forward(const Matrix& x, Tape& tape) const {
    require(static_cast<std::size_t>(x.cols()) == input_dim(), "Mlp::forward: input width mismatch");
    tape.inputs.clear();
    tape.preacts.clear();
    Matrix a = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      tape.inputs.push_back(a);
      Matrix z = a * weight(l).transpose();
      z.rowwise() += bias(l).transpose();
      if (l + 1 < num_layers()) {
        a = activate(z);
        tape.preacts.push_back(std::move(z));
      } else {
        a = std::move(z);
      }
    }
    return a;
  }

  /// Accumulates dL/dparams into grad and returns dL/dx, given dL/doutput.
  Matrix backward(const Tape& tape, const Matrix& d_out, Eigen::Ref<Vector> grad) const {
    require(grad.size() == params_.size(), "Mlp::backward: gradient buffer size mismatch");
    Matrix dz = d_out;
    for (std::size_t li = num_layers(); li-- > 0;) {
      const Matrix& a = tape.inputs[li];
      Eigen::Map<Matrix> dw(grad.data() + offsets_[li], static_cast<Eigen::Index>(dims_[li + 1]),
                            static_cast<Eigen::Index>(dims_[li]));
      Eigen::Map<Vector> db(grad.data() + offsets_[li] + dims_[li + 1] * dims_[li],
                            static_cast<Eigen::Index>(dims_[li + 1]));
      dw.noalias() += dz.transpose() * a;
      db += dz.colwise().sum().transpose();
      Matrix da = dz * weight(li);
      if (li == 0) return da;
      dz = da.cwiseProduct(activate_grad(tape.preacts[li - 1]));
    }
    return dz;
  }

 private:
  Matrix activate(const Matrix& z) const {
    if (act_ == Activation::relu) return z.cwiseMax(0.0);
    return (z.array() / (1.0 + (-z.array()).exp())).matrix();
  }

  Matrix activate_grad(const Matrix& z) const {
    if (act_ == Activation::relu) return (z.array() > 0.0).cast<double>().matrix();
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
    return (s * (1.0 + z.array() * (1.0 - s))).matrix();
  }

  std::vector<std::size_t> dims_;
  std::vector<std::size_t> offsets_;
  Activation act_ = Activation::silu;
  Vector params_;
};

}  // namespace genbound
