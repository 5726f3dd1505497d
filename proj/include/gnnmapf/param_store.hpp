#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnmapf/tensor.hpp"

namespace gnnmapf {

// Named learnable parameters with gradient accumulators, plus non-learnable
// buffers (batch-norm running statistics). Names iterate in sorted order.
class ParamStore {
 public:
  struct Parameter {
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor value);
  Tensor& add_buffer(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return params_.contains(name); }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

  std::map<std::string, Parameter>& parameters() noexcept { return params_; }
  const std::map<std::string, Parameter>& parameters() const noexcept { return params_; }
  const std::map<std::string, Tensor>& buffers() const noexcept { return buffers_; }
  std::map<std::string, Tensor>& buffers() noexcept { return buffers_; }

  void zero_grad();
  // Adds `g` into the accumulator for `name`.
  void accumulate(const std::string& name, const Tensor& g);
  std::size_t parameter_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::map<std::string, Parameter> params_;
  std::map<std::string, Tensor> buffers_;
};

// {"name": [[shape...], v0, v1, ...], ...}
nlohmann::json tensors_to_json(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> tensors_from_json(const nlohmann::json& j);

}  // namespace gnnmapf
