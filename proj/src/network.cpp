#include "subprune/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "subprune/linalg.hpp"
#include "subprune/parallel.hpp"

namespace subprune {

std::string Shape3::to_string() const {
  std::ostringstream os;
  os << '[' << c << ',' << h << ',' << w << ']';
  return os.str();
}

std::size_t LayerSpec::out_units() const noexcept {
  switch (kind) {
    case LayerKind::Dense: return weight.cols();
    case LayerKind::Conv2d: return weight.rows();
    case LayerKind::MaxPool2: return 0;
  }
  return 0;
}

std::size_t LayerSpec::kept_units() const noexcept {
  if (!kept_mask) return out_units();
  return static_cast<std::size_t>(std::count(kept_mask->begin(), kept_mask->end(), true));
}

namespace {

ShapeError layer_error(const LayerSpec& layer, const std::string& msg) {
  return ShapeError("layer '" + layer.name + "': " + msg);
}

void finish_activation(Matrix& out, const Shape3& shape, const LayerSpec& layer) {
  if (layer.nonlinearity == Nonlinearity::Relu) {
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  }
  if (!layer.kept_mask) return;
  const auto& mask = *layer.kept_mask;
  if (mask.size() != shape.c) {
    throw layer_error(layer, "kept_mask has " + std::to_string(mask.size()) + " entries for " +
                                 std::to_string(shape.c) + " units");
  }
  const std::size_t g = shape.spatial();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t u = 0; u < mask.size(); ++u) {
      if (!mask[u]) std::fill(row.begin() + u * g, row.begin() + (u + 1) * g, 0.0);
    }
  }
}

void add_bias_rows(Matrix& out, const std::vector<double>& bias) {
  if (bias.empty()) return;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
}

void check_input(const Matrix& input, const Shape3& in, const char* what) {
  if (input.cols() != in.size()) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(input.cols()) +
                     " features, geometry " + in.to_string() + " needs " + std::to_string(in.size()));
  }
}

// One sample of the naive convolution; shared by the parallel and serial paths.
void conv_sample(const double* x, const Shape3& in, const Shape3& out, const LayerSpec& l, double* y) {
  const auto pad = static_cast<std::ptrdiff_t>(l.padding);
  for (std::size_t oc = 0; oc < out.c; ++oc) {
    const double* filt = l.weight.data().data() + oc * l.weight.cols();
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < in.c; ++ic) {
          for (std::size_t ky = 0; ky < l.kernel_h; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
            for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
              acc += x[(ic * in.h + static_cast<std::size_t>(iy)) * in.w + static_cast<std::size_t>(ix)] *
                     filt[(ic * l.kernel_h + ky) * l.kernel_w + kx];
            }
          }
        }
        if (!l.bias.empty()) acc += l.bias[oc];
        y[(oc * out.h + oy) * out.w + ox] = acc;
      }
    }
  }
}

void im2col_sample(const double* x, const Shape3& in, std::size_t kh, std::size_t kw,
                   std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, Matrix& out,
                   std::size_t row0) {
  const std::size_t cols = in.c * kh * kw;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* dst = out.data().data() + (row0 + oy * ow + ox) * cols;
      for (std::size_t ic = 0; ic < in.c; ++ic) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(in.h) && ix >= 0 &&
                                ix < static_cast<std::ptrdiff_t>(in.w);
            dst[(ic * kh + ky) * kw + kx] =
                inside ? x[(ic * in.h + static_cast<std::size_t>(iy)) * in.w + static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

std::size_t conv_extent(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad,
                        const std::string& who, const Shape3& in) {
  const std::size_t span = n + 2 * pad;
  if (stride == 0 || span < k || (span - k) % stride != 0) {
    throw ShapeError(who + ": non-integral conv output for input " + in.to_string() + ", kernel " +
                     std::to_string(k) + ", stride " + std::to_string(stride) + ", pad " +
                     std::to_string(pad));
  }
  return (span - k) / stride + 1;
}

Matrix dense_impl(const Matrix& input, const LayerSpec& layer, bool parallel) {
  if (input.cols() != layer.weight.rows()) {
    throw layer_error(layer, "dense input " + input.shape_string() + " vs weight " +
                                 layer.weight.shape_string());
  }
  Matrix out = parallel ? matmul(input, layer.weight) : serial::matmul(input, layer.weight);
  add_bias_rows(out, layer.bias);
  finish_activation(out, Shape3{layer.weight.cols(), 1, 1}, layer);
  return out;
}

}  // namespace

Shape3 output_shape(const LayerSpec& layer, const Shape3& in) {
  switch (layer.kind) {
    case LayerKind::Dense:
      if (in.size() != layer.weight.rows()) {
        throw layer_error(layer, "dense expects " + std::to_string(layer.weight.rows()) +
                                     " inputs, got " + in.to_string());
      }
      return {layer.weight.cols(), 1, 1};
    case LayerKind::Conv2d: {
      if (in.c != layer.in_channels || layer.weight.cols() != in.c * layer.kernel_h * layer.kernel_w) {
        throw layer_error(layer, "conv expects " + std::to_string(layer.in_channels) +
                                     " input channels, got " + in.to_string());
      }
      const std::string who = "layer '" + layer.name + "'";
      return {layer.weight.rows(), conv_extent(in.h, layer.kernel_h, layer.stride, layer.padding, who, in),
              conv_extent(in.w, layer.kernel_w, layer.stride, layer.padding, who, in)};
    }
    case LayerKind::MaxPool2:
      if (in.h < 2 || in.w < 2) throw layer_error(layer, "maxpool2 on " + in.to_string());
      return {in.c, in.h / 2, in.w / 2};
  }
  return in;
}

std::vector<Shape3> layer_shapes(const NetworkModel& model) {
  std::vector<Shape3> shapes{model.input};
  for (const auto& l : model.layers) shapes.push_back(output_shape(l, shapes.back()));
  return shapes;
}

Matrix dense_forward(const Matrix& input, const LayerSpec& layer) { return dense_impl(input, layer, true); }

Matrix conv2d_forward(const Matrix& input, const Shape3& in, const LayerSpec& layer) {
  check_input(input, in, "conv2d_forward");
  const Shape3 out = output_shape(layer, in);
  Matrix y(input.rows(), out.size());
  const auto n = static_cast<std::ptrdiff_t>(input.rows());
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (n > 1)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto i = static_cast<std::size_t>(s);
    conv_sample(input.row(i).data(), in, out, layer, y.row(i).data());
  }
  finish_activation(y, out, layer);
  return y;
}

Matrix maxpool2_forward(const Matrix& input, const Shape3& in) {
  check_input(input, in, "maxpool2_forward");
  const Shape3 out{in.c, in.h / 2, in.w / 2};
  Matrix y(input.rows(), out.size());
  for (std::size_t s = 0; s < input.rows(); ++s) {
    const auto x = input.row(s);
    auto dst = y.row(s);
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t oy = 0; oy < out.h; ++oy) {
        for (std::size_t ox = 0; ox < out.w; ++ox) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
              m = std::max(m, x[(c * in.h + 2 * oy + dy) * in.w + 2 * ox + dx]);
          dst[(c * out.h + oy) * out.w + ox] = m;
        }
      }
    }
  }
  return y;
}

Matrix im2col(const Matrix& input, const Shape3& in, std::size_t k_h, std::size_t k_w,
              std::size_t stride, std::size_t pad) {
  check_input(input, in, "im2col");
  const std::size_t oh = conv_extent(in.h, k_h, stride, pad, "im2col", in);
  const std::size_t ow = conv_extent(in.w, k_w, stride, pad, "im2col", in);
  const std::size_t p = oh * ow;
  Matrix out(input.rows() * p, in.c * k_h * k_w);
  const auto n = static_cast<std::ptrdiff_t>(input.rows());
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (n > 1)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto i = static_cast<std::size_t>(s);
    im2col_sample(input.row(i).data(), in, k_h, k_w, stride, pad, oh, ow, out, i * p);
  }
  return out;
}

namespace serial {

Matrix dense_forward(const Matrix& input, const LayerSpec& layer) { return dense_impl(input, layer, false); }

Matrix conv2d_forward(const Matrix& input, const Shape3& in, const LayerSpec& layer) {
  check_input(input, in, "conv2d_forward");
  const Shape3 out = output_shape(layer, in);
  Matrix y(input.rows(), out.size());
  for (std::size_t i = 0; i < input.rows(); ++i)
    conv_sample(input.row(i).data(), in, out, layer, y.row(i).data());
  finish_activation(y, out, layer);
  return y;
}

Matrix im2col(const Matrix& input, const Shape3& in, std::size_t k_h, std::size_t k_w,
              std::size_t stride, std::size_t pad) {
  check_input(input, in, "im2col");
  const std::size_t oh = conv_extent(in.h, k_h, stride, pad, "im2col", in);
  const std::size_t ow = conv_extent(in.w, k_w, stride, pad, "im2col", in);
  Matrix out(input.rows() * oh * ow, in.c * k_h * k_w);
  for (std::size_t i = 0; i < input.rows(); ++i)
    im2col_sample(input.row(i).data(), in, k_h, k_w, stride, pad, oh, ow, out, i * oh * ow);
  return out;
}

}  // namespace serial

Matrix layer_forward(const Matrix& input, const Shape3& in, const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::Dense:
      check_input(input, in, "dense_forward");
      return dense_forward(input, layer);
    case LayerKind::Conv2d: return conv2d_forward(input, in, layer);
    case LayerKind::MaxPool2: return maxpool2_forward(input, in);
  }
  return input;
}

Matrix forward(const NetworkModel& model, const Matrix& inputs) {
  Matrix x = inputs;
  Shape3 shape = model.input;
  for (const auto& l : model.layers) {
    x = layer_forward(x, shape, l);
    shape = output_shape(l, shape);
  }
  return x;
}

std::size_t successor_index(const NetworkModel& model, std::size_t layer) {
  for (std::size_t s = layer + 1; s < model.layers.size(); ++s)
    if (model.layers[s].weighted()) return s;
  throw ShapeError("layer '" + model.layers.at(layer).name + "' has no weighted successor");
}

Matrix successor_weight(const LayerSpec& successor) {
  return successor.kind == LayerKind::Conv2d ? successor.weight.transposed() : successor.weight;
}

void set_successor_weight(LayerSpec& successor, const Matrix& w) {
  const Matrix next = successor.kind == LayerKind::Conv2d ? w.transposed() : w;
  if (next.rows() != successor.weight.rows() || next.cols() != successor.weight.cols()) {
    throw layer_error(successor, "replacement weight " + w.shape_string() + " does not fit " +
                                     successor.weight.shape_string());
  }
  successor.weight = next;
}

CaptureResult forward_capture(const NetworkModel& model, const Matrix& inputs) {
  const auto shapes = layer_shapes(model);
  std::vector<Matrix> acts;  // acts[i] = input of layer i
  acts.reserve(model.layers.size() + 1);
  acts.push_back(inputs);
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    acts.push_back(layer_forward(acts.back(), shapes[i], model.layers[i]));

  CaptureResult res;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (!model.layers[i].prunable) continue;
    ActivationCapture cap;
    cap.layer = i;
    cap.successor = successor_index(model, i);
    const auto& succ = model.layers[cap.successor];
    const Shape3& seen = shapes[cap.successor];
    cap.units = seen.c;
    if (succ.kind == LayerKind::Conv2d) {
      cap.matrix = im2col(acts[cap.successor], seen, succ.kernel_h, succ.kernel_w, succ.stride, succ.padding);
      cap.group_size = succ.kernel_h * succ.kernel_w;
    } else {
      cap.matrix = acts[cap.successor];
      cap.group_size = seen.spatial();
    }
    res.captures.push_back(std::move(cap));
  }
  res.logits = std::move(acts.back());
  return res;
}

Matrix preactivation(const NetworkModel& model, const Matrix& inputs, std::size_t layer) {
  const auto shapes = layer_shapes(model);
  Matrix x = inputs;
  for (std::size_t i = 0; i < layer; ++i) x = layer_forward(x, shapes[i], model.layers[i]);
  LayerSpec bare = model.layers.at(layer);
  bare.bias.clear();
  bare.nonlinearity = Nonlinearity::None;
  bare.kept_mask.reset();
  if (bare.kind == LayerKind::Dense) return dense_forward(x, bare);
  if (bare.kind != LayerKind::Conv2d) throw layer_error(bare, "no pre-activation for pooling");
  const Shape3 out = output_shape(bare, shapes[layer]);
  const Matrix y = conv2d_forward(x, shapes[layer], bare);
  Matrix r(y.rows() * out.spatial(), out.c);
  for (std::size_t s = 0; s < y.rows(); ++s)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t p = 0; p < out.spatial(); ++p) r(s * out.spatial() + p, c) = y(s, c * out.spatial() + p);
  return r;
}

std::vector<std::vector<std::size_t>> block_groups(std::size_t units, std::size_t group_size) {
  std::vector<std::vector<std::size_t>> groups(units);
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t j = 0; j < group_size; ++j) groups[u].push_back(u * group_size + j);
  return groups;
}

double accuracy_from_logits(const Matrix& logits, const std::vector<std::int64_t>& labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("accuracy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const auto best = static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == labels[r] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate_accuracy(const NetworkModel& model, const Matrix& inputs,
                         const std::vector<std::int64_t>& labels) {
  return accuracy_from_logits(forward(model, inputs), labels);
}

std::vector<LayerCost> layer_costs(const NetworkModel& model) {
  const auto shapes = layer_shapes(model);
  std::vector<LayerCost> costs(model.layers.size());
  std::optional<std::size_t> prev;  // previous weighted layer
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.weighted()) continue;
    const Shape3& in = shapes[i];
    const std::size_t in_units = prev ? model.layers[*prev].kept_units() : in.c;
    const std::size_t out_units = l.kept_units();
    const std::size_t per_unit = l.kind == LayerKind::Dense ? in.spatial() : l.kernel_h * l.kernel_w;
    const std::uint64_t weights = static_cast<std::uint64_t>(in_units) * per_unit * out_units;
    costs[i].params = weights + (l.bias.empty() ? 0 : out_units);
    const std::uint64_t positions = l.kind == LayerKind::Dense ? 1 : shapes[i + 1].spatial();
    costs[i].flops = 2 * weights * positions;
    prev = i;
  }
  return costs;
}

std::uint64_t count_params(const NetworkModel& model) {
  std::uint64_t total = 0;
  for (const auto& c : layer_costs(model)) total += c.params;
  return total;
}

std::uint64_t count_flops(const NetworkModel& model) {
  std::uint64_t total = 0;
  for (const auto& c : layer_costs(model)) total += c.flops;
  return total;
}

NetworkModel model_from_bundle(const Bundle& bundle) {
  const auto& t = bundle.tensors;
  NetworkModel model;
  const auto& in = t.at(bundle.manifest.data.inputs);
  if (in.shape.size() == 4) {
    model.input = {in.shape[1], in.shape[2], in.shape[3]};
  } else {
    model.input = {in.shape[1], 1, 1};
  }
  for (const auto& d : bundle.manifest.model) {
    LayerSpec l;
    l.name = d.name;
    l.kind = d.kind;
    l.nonlinearity = d.nonlinearity;
    l.stride = d.stride;
    l.padding = d.padding;
    l.prunable = d.prunable;
    if (d.kind != LayerKind::MaxPool2) {
      const auto& w = t.at(d.weight);
      l.weight = tensor_matrix(w);
      if (d.kind == LayerKind::Conv2d) {
        l.in_channels = w.shape[1];
        l.kernel_h = w.shape[2];
        l.kernel_w = w.shape[3];
      }
    }
    if (d.bias) l.bias = tensor_values(t.at(*d.bias));
    if (d.mask) {
      const auto m = tensor_indices(t.at(*d.mask));
      l.kept_mask = std::vector<bool>(m.size());
      for (std::size_t u = 0; u < m.size(); ++u) (*l.kept_mask)[u] = m[u] != 0;
    }
    model.layers.push_back(std::move(l));
  }
  layer_shapes(model);
  return model;
}

Dataset dataset_from_bundle(const Bundle& bundle) {
  const auto& t = bundle.tensors;
  Dataset d;
  d.inputs = tensor_matrix(t.at(bundle.manifest.data.inputs));
  d.labels = tensor_indices(t.at(bundle.manifest.data.labels));
  std::vector<bool> is_verify(d.inputs.rows(), false);
  for (auto idx : tensor_indices(t.at(bundle.manifest.data.verification))) {
    d.verification.push_back(static_cast<std::size_t>(idx));
    is_verify[static_cast<std::size_t>(idx)] = true;
  }
  for (std::size_t r = 0; r < is_verify.size(); ++r)
    if (!is_verify[r]) d.pruning.push_back(r);
  return d;
}

std::vector<std::int64_t> select_labels(const std::vector<std::int64_t>& labels,
                                        const std::vector<std::size_t>& rows) {
  std::vector<std::int64_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels.at(r));
  return out;
}

Bundle bundle_from_model(const NetworkModel& model, const Dataset& data, bool with_captures) {
  Bundle b;
  auto put = [&](TensorRecord rec) {
    const std::string name = rec.name;
    b.tensors[name] = std::move(rec);
    return name;
  };
  std::vector<std::uint64_t> in_shape{data.inputs.rows()};
  if (model.input.h == 1 && model.input.w == 1) {
    in_shape.push_back(model.input.c);
  } else {
    in_shape.insert(in_shape.end(), {model.input.c, model.input.h, model.input.w});
  }
  b.manifest.data.inputs = put(make_tensor("inputs", DType::F64, in_shape, data.inputs.data()));
  b.manifest.data.labels = put(make_index_tensor("labels", data.labels));
  std::vector<std::int64_t> verify(data.verification.begin(), data.verification.end());
  b.manifest.data.verification = put(make_index_tensor("verification", verify));

  CaptureResult caps;
  if (with_captures) caps = forward_capture(model, data.inputs.select_rows(data.pruning));
  const auto shapes = layer_shapes(model);
  std::size_t cap_i = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    LayerDescriptor d;
    d.name = l.name;
    d.kind = l.kind;
    d.nonlinearity = l.nonlinearity;
    d.stride = l.stride;
    d.padding = l.padding;
    d.prunable = l.prunable;
    if (l.kind == LayerKind::Dense) {
      d.weight = put(make_tensor(l.name + ".weight", DType::F64, {l.weight.rows(), l.weight.cols()},
                                 l.weight.data()));
    } else if (l.kind == LayerKind::Conv2d) {
      d.weight = put(make_tensor(l.name + ".weight", DType::F64,
                                 {l.weight.rows(), l.in_channels, l.kernel_h, l.kernel_w}, l.weight.data()));
    }
    if (!l.bias.empty()) {
      d.bias = put(make_tensor(l.name + ".bias", DType::F64, {l.bias.size()}, l.bias));
    }
    if (l.kept_mask) {
      std::vector<std::int64_t> m(l.kept_mask->begin(), l.kept_mask->end());
      d.mask = put(make_index_tensor(l.name + ".mask", m));
    }
    if (with_captures && l.prunable) {
      const auto& cap = caps.captures.at(cap_i++);
      // Raw post-nonlinearity output of this layer on the pruning batch.
      const Matrix raw = [&] {
        Matrix x = data.inputs.select_rows(data.pruning);
        for (std::size_t j = 0; j <= i; ++j) x = layer_forward(x, shapes[j], model.layers[j]);
        return x;
      }();
      const Shape3& o = shapes[i + 1];
      std::vector<std::uint64_t> raw_shape{raw.rows()};
      if (l.kind == LayerKind::Conv2d) raw_shape.insert(raw_shape.end(), {o.c, o.h, o.w});
      else raw_shape.push_back(o.c);
      d.capture = put(make_tensor(l.name + ".capture", DType::F32, raw_shape, raw.data()));
      d.patches = put(make_tensor(l.name + ".patches", DType::F32, {cap.matrix.rows(), cap.matrix.cols()},
                                  cap.matrix.data()));
    }
    b.manifest.model.push_back(std::move(d));
  }
  return b;
}

}  // namespace subprune
