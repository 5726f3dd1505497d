#include "gnnmapf/param_store.hpp"

#include "json.hpp"
#include <stdexcept>

#include "gnnmapf/error.hpp"

namespace gnnmapf {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  Tensor grad(value.shape());
  auto [it, inserted] = params_.insert_or_assign(name, Parameter{std::move(value), std::move(grad)});
  return it->second.value;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor value) {
  return buffers_.insert_or_assign(name, std::move(value)).first->second;
}

namespace {
template <typename Map>
auto& lookup(Map& map, const std::string& name, const char* kind) {
  auto it = map.find(name);
  if (it == map.end()) throw std::out_of_range(std::string("no ") + kind + " named '" + name + "'");
  return it->second;
}
}  // namespace

Tensor& ParamStore::value(const std::string& name) { return lookup(params_, name, "parameter").value; }
const Tensor& ParamStore::value(const std::string& name) const {
  return lookup(params_, name, "parameter").value;
}
Tensor& ParamStore::grad(const std::string& name) { return lookup(params_, name, "parameter").grad; }
const Tensor& ParamStore::grad(const std::string& name) const {
  return lookup(params_, name, "parameter").grad;
}
Tensor& ParamStore::buffer(const std::string& name) { return lookup(buffers_, name, "buffer"); }
const Tensor& ParamStore::buffer(const std::string& name) const {
  return lookup(buffers_, name, "buffer");
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

void ParamStore::accumulate(const std::string& name, const Tensor& g) {
  Tensor& acc = grad(name);
  if (acc.shape() != g.shape()) {
    throw ShapeMismatch("gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                        ", parameter has " + shape_string(acc.shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.buffers_ != b.buffers_ || a.params_.size() != b.params_.size()) return false;
  for (auto ia = a.params_.begin(), ib = b.params_.begin(); ia != a.params_.end(); ++ia, ++ib)
    if (ia->first != ib->first || ia->second.value != ib->second.value) return false;
  return true;
}

nlohmann::json tensors_to_json(const std::map<std::string, Tensor>& tensors) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, t] : tensors) {
    nlohmann::json entry = nlohmann::json::array();
    entry.push_back(t.shape());
    for (double v : t.values()) entry.push_back(v);
    out[name] = std::move(entry);
  }
  return out;
}

std::map<std::string, Tensor> tensors_from_json(const nlohmann::json& j) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, entry] : j.items()) {
    if (!entry.is_array() || entry.empty() || !entry[0].is_array())
      throw std::invalid_argument("tensor '" + name + "' must be [shape, values...]");
    Shape shape = entry[0].get<Shape>();
    std::vector<double> values;
    values.reserve(entry.size() - 1);
    for (std::size_t i = 1; i < entry.size(); ++i) values.push_back(entry[i].get<double>());
    out.emplace(name, Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace gnnmapf
