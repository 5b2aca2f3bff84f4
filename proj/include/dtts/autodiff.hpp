#pragma once

#include "dtts/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dtts::ad {

// Reverse-mode tape over dense float matrices. Graphs are built per call
// (define-by-run); parameter leaves persist across calls and accumulate
// gradients until the optimizer consumes them.
struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
  Mat val;
  Mat grad;  // allocated on first use, same shape as val
  bool requires_grad = false;
  bool is_param = false;
  std::vector<Value> parents;
  std::function<void(Node&)> backward_fn;  // pulls from this->grad into parents

  Mat& g() {
    if (grad.size() == 0) grad = Mat::Zero(val.rows(), val.cols());
    return grad;
  }
  int rows() const { return int(val.rows()); }
  int cols() const { return int(val.cols()); }
  float scalar() const { return val(0, 0); }
};

Value constant(Mat m);
Value param(Mat m);  // trainable leaf

// Runs reverse accumulation from a 1x1 loss node.
void backward(const Value& loss);

// Count of log-probability clamps hit since process start (zero-probability
// targets are floored at 1e-12 and reported here).
int64_t log_clamp_count();

Value add(const Value& a, const Value& b);  // same shape, or b is 1xC row bias
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);  // elementwise
Value scale(const Value& a, float s);
Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value rows(const Value& table, std::vector<int> idx);      // gather rows
Value slice_rows(const Value& a, int start, int n);
Value slice_cols(const Value& a, int start, int n);
Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value broadcast_row(const Value& row, int n);              // 1xC -> nxC
Value softmax_rows(const Value& a);
Value log_softmax_rows(const Value& a);
Value layer_norm(const Value& x, const Value& gain, const Value& bias, float eps = 1e-5f);
Value gelu(const Value& a);
Value relu(const Value& a);
Value tanh_(const Value& a);
Value sigmoid(const Value& a);
Value abs_(const Value& a);
Value log_(const Value& a);  // elementwise, floored at 1e-12 with report
Value mean_all(const Value& a);
Value sum_all(const Value& a);
Value mean_rows(const Value& a);  // RxC -> 1xC

// Identity forward; backward multiplies the incoming gradient by -lambda.
Value grl(const Value& x, float lambda);

// Forward takes the quantized values, backward routes gradients to `z`.
Value straight_through(const Value& z, const Mat& quantized);

// Depthwise 1-D convolution along rows with zero padding (same length).
// kernel is KxC, applied per channel c over a window centered on each row.
Value conv1d_depthwise(const Value& x, const Value& kernel);

// Mean cross-entropy over rows: -(1/R) sum_i log softmax(logits)_i[target_i].
// Accumulated in double; probabilities floored at 1e-12.
Value cross_entropy_mean(const Value& logits, const std::vector<int>& targets);

// Mean absolute deviation: (1/(R*C)) * sum |a - b|.
Value l1_mean(const Value& a, const Value& b);

}  // namespace dtts::ad
