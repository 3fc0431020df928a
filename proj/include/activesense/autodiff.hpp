// SPDX-License-Identifier: Apache-2.0
//
// activesense: active channel sensing laboratory
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef ACTIVESENSE_AUTODIFF_HPP
#define ACTIVESENSE_AUTODIFF_HPP

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace activesense::ad
{
    // Dense real tensor, row-major. Graph operations view every tensor as a
    // matrix: cols() is the last extent and rows() the product of the others
    // (a rank-1 tensor is a single row).
    struct Tensor
    {
        std::vector<std::size_t> shape;
        std::vector<double> data;

        Tensor() = default;
        explicit Tensor(std::vector<std::size_t> shape_, double fill = 0.0);
        Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

        static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
        static Tensor row(std::vector<double> values);

        std::size_t numel() const { return data.size(); }
        std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
        std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

        double &operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
        double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
        double item() const;
    };

    std::size_t shape_numel(const std::vector<std::size_t> &shape);
    std::string shape_string(const std::vector<std::size_t> &shape);

    using TensorMap = std::map<std::string, Tensor>;

    // Handle to a node of a Graph.
    struct Value
    {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    enum class Op
    {
        input,
        parameter,
        constant,
        matmul,
        add,
        sub,
        mul,
        div,
        scale,
        relu,
        sigmoid,
        tanh,
        square,
        sqrt,
        complex_abs,
        sum,
        mean,
        slice_cols,
        slice_rows,
        concat_cols,
        batch_norm,
        normalize_unit_power,
        normalize_modulus,
    };

    enum class Axis
    {
        all,
        rows, // reduce over rows -> [1, cols]
        cols, // reduce over cols -> [rows, 1]
    };

    enum class BatchNormMode
    {
        train,
        infer
    };

    // Batch statistics captured by a batch-norm node during a train-mode forward pass.
    struct BatchStats
    {
        std::string key;
        std::vector<double> mean;
        std::vector<double> var; // biased
    };

    // Epsilon guarding sqrt and |.| near zero.
    inline constexpr double sqrt_guard = 1e-12;

    // Static computation graph. Nodes are appended in topological order and the
    // whole graph is re-executed by forward(); shapes are resolved per call so a
    // graph built once serves any batch extent.
    class Graph
    {
    public:
        Value input(const std::string &name);
        Value parameter(const std::string &name, Tensor init);
        Value constant(Tensor value);

        Value matmul(Value a, Value b, bool transpose_b = false);
        // Elementwise binary ops broadcast any unit extent of either operand.
        Value add(Value a, Value b);
        Value sub(Value a, Value b);
        Value mul(Value a, Value b);
        Value div(Value a, Value b);
        Value scale(Value a, double factor);
        Value relu(Value a);
        Value sigmoid(Value a);
        Value tanh(Value a);
        Value square(Value a);
        Value sqrt(Value a); // sqrt(max(a,0) + sqrt_guard)
        Value complex_abs(Value re, Value im);
        Value sum(Value a, Axis axis);
        Value mean(Value a, Axis axis);
        Value slice_cols(Value a, std::size_t begin, std::size_t end);
        Value slice_rows(Value a, std::size_t begin, std::size_t end);
        Value concat_cols(const std::vector<Value> &parts);
        // Running statistics for infer mode are read from buffers "<key>.running_mean"
        // and "<key>.running_var".
        Value batch_norm(Value x, Value gamma, Value beta, const std::string &key, double epsilon);
        // Row-wise x / ||x||_2. Rows with norm below 1e-12 become e_1 and are flagged.
        Value normalize_unit_power(Value x);
        // Row-wise split-complex phase extraction: entry k of [x1; x2] becomes
        // target * (x1_k, x2_k) / |x1_k + j x2_k|. Entries with squared modulus
        // below 1e-24 get phase 0 and are flagged.
        Value normalize_modulus(Value x, double target);

        void mark_output(const std::string &name, Value v);

        TensorMap forward(const TensorMap &inputs);
        // Gradients of a scalar output with respect to every parameter leaf.
        TensorMap backward(const std::string &output);

        const Tensor &value(Value v) const;
        const Tensor &output(const std::string &name) const;

        bool has_parameter(const std::string &name) const;
        Tensor &parameter_value(const std::string &name);
        const Tensor &parameter_value(const std::string &name) const;
        void set_parameter(const std::string &name, const Tensor &t);
        std::vector<std::string> parameter_names() const;
        TensorMap parameters() const;

        void set_buffer(const std::string &name, Tensor t);
        const TensorMap &buffers() const { return buffers_; }

        void set_batch_norm_mode(BatchNormMode mode) { bn_mode_ = mode; }
        BatchNormMode batch_norm_mode() const { return bn_mode_; }
        std::vector<BatchStats> batch_statistics() const;

        // Number of rows/entries routed to the degenerate branch of a
        // normalization node in the last forward pass.
        std::size_t degenerate_count() const;

        std::size_t node_count() const { return nodes_.size(); }
        bool has_run() const { return forward_done_; }

    private:
        struct Node
        {
            Op op;
            std::vector<int> in;
            Tensor value;
            Tensor grad;
            std::string name;
            double scalar = 0.0;
            std::size_t lo = 0, hi = 0;
            Axis axis = Axis::all;
            bool flag = false;
            bool needs_grad = false;
            std::size_t degenerate = 0;
            std::vector<double> cache_a, cache_b;
        };

        Value push(Node n);
        Node &node(Value v);
        void check(Value v) const;
        void eval(Node &n);
        void pullback(Node &n);

        std::vector<Node> nodes_;
        std::map<std::string, int> inputs_;
        std::map<std::string, int> params_;
        std::map<std::string, int> outputs_;
        TensorMap buffers_;
        BatchNormMode bn_mode_ = BatchNormMode::train;
        bool forward_done_ = false;
    };

    // Max over parameter entries of |analytic - central difference| / max(1, |analytic|).
    double check_gradients(Graph &graph, const TensorMap &inputs, const std::string &output, double h);
}

#endif
