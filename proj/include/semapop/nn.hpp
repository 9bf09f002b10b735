#pragma once

#include "semapop/autodiff.hpp"
#include "semapop/rng.hpp"
#include "semapop/types.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace semapop::nn {

// y = x * W + b with x: B x in, W: in x out, b: 1 x out.
struct Affine {
    Matrix W;
    Matrix b;

    static Affine zeros(Index in, Index out);
    // He-style fan-in scaling for layers followed by a rectifier.
    static Affine he(Index in, Index out, Rng& rng);
    // Smaller fan-in scaling for output heads.
    static Affine head(Index in, Index out, Rng& rng);

    Index in() const { return W.rows(); }
    Index out() const { return W.cols(); }
};

using NamedTensors = std::vector<std::pair<std::string, Matrix*>>;

inline void append_affine(NamedTensors& out, const std::string& prefix, Affine& a) {
    out.emplace_back(prefix + ".W", &a.W);
    out.emplace_back(prefix + ".b", &a.b);
}

// Maps parameter storage to tape nodes. A trainable binder creates leaf
// nodes (differentiated); a frozen binder creates constants.
class Binder {
  public:
    Binder(ad::Tape& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

    ad::Val operator()(const Matrix& m);

    // Leaves aligned with `params` order; every entry must have been bound.
    std::vector<ad::Val> bound(const std::vector<Matrix*>& params) const;

  private:
    ad::Tape* tape_;
    bool trainable_;
    std::unordered_map<const Matrix*, int> ids_;
};

struct AffineRef {
    ad::Val W, b;
};

AffineRef bind(Binder& binder, const Affine& a);
ad::Val apply(const AffineRef& layer, ad::Val x);

Matrix affine_forward(const Matrix& x, const Affine& a);

// Inverted dropout mask: entries are 0 or 1/(1-rate).
Matrix dropout_mask(Index rows, Index cols, double rate, Rng& rng);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

  private:
    struct State {
        Matrix m, v;
    };
    AdamConfig cfg_;
    std::unordered_map<Matrix*, State> state_;
    long t_ = 0;
};

} // namespace semapop::nn
