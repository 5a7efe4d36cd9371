#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subprune/bundle.hpp"
#include "subprune/matrix.hpp"

namespace subprune {

/// Activation geometry of one sample. Flat vectors are {features, 1, 1}.
struct Shape3 {
  std::size_t c = 0;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const noexcept { return c * h * w; }
  std::size_t spatial() const noexcept { return h * w; }
  std::string to_string() const;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Dense;
  /// dense: n_in x n_out.  conv: out_c x (in_c * k_h * k_w), filter-major.
  Matrix weight;
  std::vector<double> bias;  // empty when the layer has none
  Nonlinearity nonlinearity = Nonlinearity::None;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool prunable = false;
  std::optional<std::vector<bool>> kept_mask;

  bool weighted() const noexcept { return kind != LayerKind::MaxPool2; }
  /// Neurons for dense, channels for conv, 0 for pooling.
  std::size_t out_units() const noexcept;
  std::size_t kept_units() const noexcept;
};

struct NetworkModel {
  Shape3 input;
  std::vector<LayerSpec> layers;
};

/// Throws ShapeError naming the layer and geometry when `in` does not fit.
Shape3 output_shape(const LayerSpec& layer, const Shape3& in);
/// shapes[i] is the input of layer i; the last entry is the output shape.
std::vector<Shape3> layer_shapes(const NetworkModel& model);

/// input x W + bias, then nonlinearity and mask.
Matrix dense_forward(const Matrix& input, const LayerSpec& layer);
/// Naive cross-correlation over [n, c*h*w] rows, parallel over samples.
Matrix conv2d_forward(const Matrix& input, const Shape3& in, const LayerSpec& layer);
Matrix maxpool2_forward(const Matrix& input, const Shape3& in);

/// Rows: sample-major then output position row-major. Columns: channel-major,
/// then (i_h * k_w + i_w). Padding is materialized as zeros.
Matrix im2col(const Matrix& input, const Shape3& in, std::size_t k_h, std::size_t k_w,
              std::size_t stride, std::size_t pad);

/// One layer including nonlinearity and kept_mask.
Matrix layer_forward(const Matrix& input, const Shape3& in, const LayerSpec& layer);
Matrix forward(const NetworkModel& model, const Matrix& inputs);

namespace serial {
Matrix dense_forward(const Matrix& input, const LayerSpec& layer);
Matrix conv2d_forward(const Matrix& input, const Shape3& in, const LayerSpec& layer);
Matrix im2col(const Matrix& input, const Shape3& in, std::size_t k_h, std::size_t k_w,
              std::size_t stride, std::size_t pad);
}  // namespace serial

/// What the weighted successor of a prunable layer actually consumes.
struct ActivationCapture {
  std::size_t layer = 0;      // prunable layer index
  std::size_t successor = 0;  // next weighted layer index
  /// conv successor: [n*p, units*k_h*k_w].  dense successor: [n, units*h*w].
  Matrix matrix;
  std::size_t units = 0;
  std::size_t group_size = 1;
};

struct CaptureResult {
  Matrix logits;
  std::vector<ActivationCapture> captures;  // one per prunable layer, in order
};

CaptureResult forward_capture(const NetworkModel& model, const Matrix& inputs);

/// Index of the next weighted layer after `layer`; throws if none.
std::size_t successor_index(const NetworkModel& model, std::size_t layer);
/// Successor weights in capture-column order: [units*g, n_out].
Matrix successor_weight(const LayerSpec& successor);
void set_successor_weight(LayerSpec& successor, const Matrix& w);
/// Layer `layer`'s pre-bias, pre-nonlinearity output in capture row layout
/// ([n, n_out] dense, [n*p, out_c] conv).
Matrix preactivation(const NetworkModel& model, const Matrix& inputs, std::size_t layer);

/// Unit u owns columns [u*g, (u+1)*g).
std::vector<std::vector<std::size_t>> block_groups(std::size_t units, std::size_t group_size);

/// argmax per row (lowest index on ties) compared to labels.
double accuracy_from_logits(const Matrix& logits, const std::vector<std::int64_t>& labels);
double evaluate_accuracy(const NetworkModel& model, const Matrix& inputs,
                         const std::vector<std::int64_t>& labels);

struct LayerCost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // per sample, 2 x MACs
};
/// Masks shrink both the layer's outputs and its weighted successor's inputs.
std::vector<LayerCost> layer_costs(const NetworkModel& model);
std::uint64_t count_params(const NetworkModel& model);
std::uint64_t count_flops(const NetworkModel& model);

struct Dataset {
  Matrix inputs;
  std::vector<std::int64_t> labels;
  std::vector<std::size_t> verification;
  /// Complement of `verification`, ascending.
  std::vector<std::size_t> pruning;
};

NetworkModel model_from_bundle(const Bundle& bundle);
Dataset dataset_from_bundle(const Bundle& bundle);
/// Weights and inputs are written as f64, captures as f32.
Bundle bundle_from_model(const NetworkModel& model, const Dataset& data, bool with_captures);

std::vector<std::int64_t> select_labels(const std::vector<std::int64_t>& labels,
                                        const std::vector<std::size_t>& rows);

}  // namespace subprune
