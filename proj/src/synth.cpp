#include "subprune/synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace subprune {
namespace {

void init_uniform(Matrix& w, std::vector<double>& bias, std::size_t fan_in, SplitMix64& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w.data()) v = rng.uniform(-a, a);
  for (double& v : bias) v = rng.uniform(-a, a);
}

LayerSpec dense(const std::string& name, std::size_t in, std::size_t out, bool hidden, SplitMix64& rng) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Dense;
  l.weight = Matrix(in, out);
  l.bias.assign(out, 0.0);
  init_uniform(l.weight, l.bias, in, rng);
  l.nonlinearity = hidden ? Nonlinearity::Relu : Nonlinearity::None;
  l.prunable = hidden;
  return l;
}

LayerSpec conv(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t pad,
               SplitMix64& rng) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Conv2d;
  l.in_channels = in_c;
  l.kernel_h = k;
  l.kernel_w = k;
  l.padding = pad;
  l.weight = Matrix(out_c, in_c * k * k);
  l.bias.assign(out_c, 0.0);
  init_uniform(l.weight, l.bias, in_c * k * k, rng);
  l.nonlinearity = Nonlinearity::Relu;
  l.prunable = true;
  return l;
}

}  // namespace

NetworkModel make_teacher(const std::string& arch, SplitMix64& rng) {
  NetworkModel m;
  if (arch == "lenet-toy") {
    m.input = {1, 10, 10};
    m.layers.push_back(conv("conv1", 1, 4, 3, 1, rng));
    LayerSpec pool;
    pool.name = "pool1";
    pool.kind = LayerKind::MaxPool2;
    m.layers.push_back(pool);
    m.layers.push_back(conv("conv2", 4, 8, 3, 0, rng));
    m.layers.push_back(dense("fc1", 72, 16, true, rng));
    m.layers.push_back(dense("fc2", 16, 5, false, rng));
    layer_shapes(m);
    return m;
  }
  if (arch.rfind("mlp:", 0) != 0) throw std::invalid_argument("unknown arch '" + arch + "' (mlp:d0,d1,... | lenet-toy)");
  std::vector<std::size_t> dims;
  std::stringstream ss(arch.substr(4));
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || v < 1) throw std::invalid_argument("bad layer width '" + tok + "' in '" + arch + "'");
    dims.push_back(static_cast<std::size_t>(v));
  }
  if (dims.size() < 2) throw std::invalid_argument("mlp arch needs at least input and output widths");
  m.input = {dims[0], 1, 1};
  for (std::size_t i = 1; i < dims.size(); ++i) {
    const bool hidden = i + 1 < dims.size();
    m.layers.push_back(dense("fc" + std::to_string(i), dims[i - 1], dims[i], hidden, rng));
  }
  return m;
}

Bundle synthesize(const SynthOptions& opts) {
  if (opts.samples == 0 || opts.verify_samples == 0) throw std::invalid_argument("sample counts must be positive");
  SplitMix64 rng(opts.seed);
  const NetworkModel teacher = make_teacher(opts.arch, rng);
  const std::size_t n = opts.samples + opts.verify_samples;
  Dataset data;
  data.inputs = Matrix(n, teacher.input.size());
  for (double& v : data.inputs.data()) v = rng.normal();
  const Matrix logits = forward(teacher, data.inputs);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = logits.row(r);
    data.labels.push_back(std::max_element(row.begin(), row.end()) - row.begin());
  }
  for (std::size_t r = 0; r < n; ++r) (r < opts.samples ? data.pruning : data.verification).push_back(r);
  return bundle_from_model(teacher, data, true);
}

}  // namespace subprune
