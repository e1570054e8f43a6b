#include "ctxalign/nn/graph.hpp"

namespace ctxalign::nn {

Parameter::Parameter(std::string name, Matrix v) : value(std::move(v)), name_(std::move(name)) {
  grad = Matrix::Zero(value.rows(), value.cols());
}

Parameter& ParameterSet::add(std::string name, Matrix value) {
  if (index_.count(name)) throw DataError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("no parameter named '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("no parameter named '" + name + "'");
  return *params_[it->second];
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  for (auto& p : params_) {
    const auto& src = other.get(p->name());
    if (src.rows() != p->rows() || src.cols() != p->cols()) {
      throw DataError("shape mismatch copying parameter '" + p->name() + "'");
    }
    p->value = src.value;
  }
}

const Matrix& Expr::value() const { return graph->value(id); }

double Expr::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DataError("expression is not a scalar");
  return v(0, 0);
}

Expr Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Expr Graph::parameter(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Expr Graph::record(Matrix value, std::vector<int> inputs, Backward backward) {
#ifndef NDEBUG
  if (!value.allFinite()) throw NumericalError("non-finite value produced in graph node");
#endif
  Node n;
  n.value = std::move(value);
  for (int in : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Graph::grad(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Expr loss) {
  if (loss.graph != this) throw DataError("loss belongs to another graph");
  const Matrix& lv = value(loss.id);
  if (lv.size() != 1) throw DataError("backward() needs a scalar loss");
  if (!std::isfinite(lv(0, 0))) throw NumericalError("loss is not finite");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad(loss.id)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

}  // namespace ctxalign::nn
