#pragma once

#include "mtp/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtp {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  bool decay = true;  // weight-decay eligible (matrices yes; biases/norms/embeddings no)
};

class ParamRegistry {
 public:
  Tensor add(const std::string& name, Mat init, bool decay) {
    for (const auto& p : params_) {
      if (p.name == name)
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    Tensor t(std::move(init), /*requires_grad=*/true);
    t.node()->name = name;
    params_.push_back({name, t, true, decay});
    return t;
  }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  const Parameter* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Parameter* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  int64_t count_trainable() const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
};

}  // namespace mtp
