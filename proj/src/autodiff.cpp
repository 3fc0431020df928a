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

#include "activesense/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace activesense::ad
{
    namespace
    {
        using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        using ConstMap = Eigen::Map<const RowMat>;
        using MutMap = Eigen::Map<RowMat>;

        ConstMap as_matrix(const Tensor &t) { return ConstMap(t.data.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
        MutMap as_matrix(Tensor &t) { return MutMap(t.data.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

        void resize(Tensor &t, std::size_t rows, std::size_t cols)
        {
            if (t.shape.size() != 2 || t.shape[0] != rows || t.shape[1] != cols)
                t.shape = {rows, cols};
            t.data.resize(rows * cols);
        }

        void zero_like(Tensor &g, const Tensor &v)
        {
            g.shape = v.shape;
            g.data.assign(v.data.size(), 0.0);
        }

        [[noreturn]] void shape_error(const char *op, const Tensor &a, const Tensor &b)
        {
            std::ostringstream os;
            os << op << ": shape mismatch " << shape_string(a.shape) << " vs " << shape_string(b.shape);
            throw std::invalid_argument(os.str());
        }

        std::size_t broadcast_extent(const char *op, const Tensor &a, const Tensor &b, std::size_t ea, std::size_t eb)
        {
            if (ea == eb)
                return ea;
            if (ea == 1)
                return eb;
            if (eb == 1)
                return ea;
            shape_error(op, a, b);
        }

        double stable_sigmoid(double x)
        {
            if (x >= 0.0)
                return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        }
    }

    Tensor::Tensor(std::vector<std::size_t> shape_, double fill)
        : shape(std::move(shape_)), data(shape_numel(shape), fill)
    {
    }

    Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
        : shape(std::move(shape_)), data(std::move(data_))
    {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_string(shape));
    }

    Tensor Tensor::row(std::vector<double> values)
    {
        const std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    double Tensor::item() const
    {
        if (data.size() != 1)
            throw std::invalid_argument("Tensor::item: tensor is not scalar, shape " + shape_string(shape));
        return data[0];
    }

    std::size_t shape_numel(const std::vector<std::size_t> &shape)
    {
        std::size_t n = 1;
        for (auto e : shape)
            n *= e;
        return n;
    }

    std::string shape_string(const std::vector<std::size_t> &shape)
    {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
        {
            if (i)
                s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    // ---- graph construction ----

    Value Graph::push(Node n)
    {
        for (int i : n.in)
        {
            if (i < 0 || i >= int(nodes_.size()))
                throw std::invalid_argument("Graph: operand does not belong to this graph");
            n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
        }
        nodes_.push_back(std::move(n));
        forward_done_ = false;
        return Value{int(nodes_.size()) - 1};
    }

    Graph::Node &Graph::node(Value v)
    {
        check(v);
        return nodes_[v.id];
    }

    void Graph::check(Value v) const
    {
        if (v.id < 0 || v.id >= int(nodes_.size()))
            throw std::invalid_argument("Graph: invalid value handle");
    }

    Value Graph::input(const std::string &name)
    {
        if (inputs_.count(name))
            return Value{inputs_.at(name)};
        Node n{Op::input};
        n.name = name;
        Value v = push(std::move(n));
        inputs_[name] = v.id;
        return v;
    }

    Value Graph::parameter(const std::string &name, Tensor init)
    {
        if (params_.count(name))
            throw std::invalid_argument("Graph: duplicate parameter '" + name + "'");
        Node n{Op::parameter};
        n.name = name;
        n.value = std::move(init);
        n.needs_grad = true;
        Value v = push(std::move(n));
        params_[name] = v.id;
        return v;
    }

    Value Graph::constant(Tensor value)
    {
        Node n{Op::constant};
        n.value = std::move(value);
        return push(std::move(n));
    }

    Value Graph::matmul(Value a, Value b, bool transpose_b)
    {
        Node n{Op::matmul, {a.id, b.id}};
        n.flag = transpose_b;
        return push(std::move(n));
    }

    Value Graph::add(Value a, Value b) { return push(Node{Op::add, {a.id, b.id}}); }
    Value Graph::sub(Value a, Value b) { return push(Node{Op::sub, {a.id, b.id}}); }
    Value Graph::mul(Value a, Value b) { return push(Node{Op::mul, {a.id, b.id}}); }
    Value Graph::div(Value a, Value b) { return push(Node{Op::div, {a.id, b.id}}); }

    Value Graph::scale(Value a, double factor)
    {
        Node n{Op::scale, {a.id}};
        n.scalar = factor;
        return push(std::move(n));
    }

    Value Graph::relu(Value a) { return push(Node{Op::relu, {a.id}}); }
    Value Graph::sigmoid(Value a) { return push(Node{Op::sigmoid, {a.id}}); }
    Value Graph::tanh(Value a) { return push(Node{Op::tanh, {a.id}}); }
    Value Graph::square(Value a) { return push(Node{Op::square, {a.id}}); }
    Value Graph::sqrt(Value a) { return push(Node{Op::sqrt, {a.id}}); }
    Value Graph::complex_abs(Value re, Value im) { return push(Node{Op::complex_abs, {re.id, im.id}}); }

    Value Graph::sum(Value a, Axis axis)
    {
        Node n{Op::sum, {a.id}};
        n.axis = axis;
        return push(std::move(n));
    }

    Value Graph::mean(Value a, Axis axis)
    {
        Node n{Op::mean, {a.id}};
        n.axis = axis;
        return push(std::move(n));
    }

    Value Graph::slice_cols(Value a, std::size_t begin, std::size_t end)
    {
        if (end <= begin)
            throw std::invalid_argument("slice_cols: empty range");
        Node n{Op::slice_cols, {a.id}};
        n.lo = begin;
        n.hi = end;
        return push(std::move(n));
    }

    Value Graph::slice_rows(Value a, std::size_t begin, std::size_t end)
    {
        if (end <= begin)
            throw std::invalid_argument("slice_rows: empty range");
        Node n{Op::slice_rows, {a.id}};
        n.lo = begin;
        n.hi = end;
        return push(std::move(n));
    }

    Value Graph::concat_cols(const std::vector<Value> &parts)
    {
        if (parts.empty())
            throw std::invalid_argument("concat_cols: no operands");
        Node n{Op::concat_cols};
        for (auto p : parts)
            n.in.push_back(p.id);
        return push(std::move(n));
    }

    Value Graph::batch_norm(Value x, Value gamma, Value beta, const std::string &key, double epsilon)
    {
        if (!(epsilon > 0.0))
            throw std::invalid_argument("batch_norm: epsilon must be positive");
        Node n{Op::batch_norm, {x.id, gamma.id, beta.id}};
        n.name = key;
        n.scalar = epsilon;
        return push(std::move(n));
    }

    Value Graph::normalize_unit_power(Value x) { return push(Node{Op::normalize_unit_power, {x.id}}); }

    Value Graph::normalize_modulus(Value x, double target)
    {
        if (!(target > 0.0))
            throw std::invalid_argument("normalize_modulus: target modulus must be positive");
        Node n{Op::normalize_modulus, {x.id}};
        n.scalar = target;
        return push(std::move(n));
    }

    void Graph::mark_output(const std::string &name, Value v)
    {
        check(v);
        outputs_[name] = v.id;
    }

    // ---- accessors ----

    const Tensor &Graph::value(Value v) const
    {
        check(v);
        return nodes_[v.id].value;
    }

    const Tensor &Graph::output(const std::string &name) const
    {
        auto it = outputs_.find(name);
        if (it == outputs_.end())
            throw std::invalid_argument("Graph: unknown output '" + name + "'");
        return nodes_[it->second].value;
    }

    bool Graph::has_parameter(const std::string &name) const { return params_.count(name) != 0; }

    Tensor &Graph::parameter_value(const std::string &name)
    {
        auto it = params_.find(name);
        if (it == params_.end())
            throw std::invalid_argument("Graph: unknown parameter '" + name + "'");
        return nodes_[it->second].value;
    }

    const Tensor &Graph::parameter_value(const std::string &name) const
    {
        auto it = params_.find(name);
        if (it == params_.end())
            throw std::invalid_argument("Graph: unknown parameter '" + name + "'");
        return nodes_[it->second].value;
    }

    void Graph::set_parameter(const std::string &name, const Tensor &t)
    {
        Tensor &p = parameter_value(name);
        if (p.shape != t.shape)
            throw std::invalid_argument("Graph::set_parameter: shape mismatch for '" + name + "': " +
                                        shape_string(p.shape) + " vs " + shape_string(t.shape));
        p.data = t.data;
    }

    std::vector<std::string> Graph::parameter_names() const
    {
        std::vector<std::string> names;
        for (const auto &[k, _] : params_)
            names.push_back(k);
        return names;
    }

    TensorMap Graph::parameters() const
    {
        TensorMap out;
        for (const auto &[k, id] : params_)
            out[k] = nodes_[id].value;
        return out;
    }

    void Graph::set_buffer(const std::string &name, Tensor t) { buffers_[name] = std::move(t); }

    std::vector<BatchStats> Graph::batch_statistics() const
    {
        std::vector<BatchStats> out;
        if (bn_mode_ != BatchNormMode::train)
            return out;
        for (const auto &n : nodes_)
            if (n.op == Op::batch_norm)
                out.push_back({n.name, n.cache_a, n.cache_b});
        return out;
    }

    std::size_t Graph::degenerate_count() const
    {
        std::size_t c = 0;
        for (const auto &n : nodes_)
            c += n.degenerate;
        return c;
    }

    // ---- forward ----

    TensorMap Graph::forward(const TensorMap &inputs)
    {
        forward_done_ = false;
        for (auto &n : nodes_)
        {
            if (n.op == Op::input)
            {
                auto it = inputs.find(n.name);
                if (it == inputs.end())
                    throw std::invalid_argument("Graph::forward: unbound input '" + n.name + "'");
                n.value = it->second;
            }
            else if (n.op != Op::parameter && n.op != Op::constant)
            {
                eval(n);
            }
        }
        forward_done_ = true;
        TensorMap out;
        for (const auto &[k, id] : outputs_)
            out[k] = nodes_[id].value;
        return out;
    }

    void Graph::eval(Node &n)
    {
        auto in = [&](std::size_t i) -> const Tensor & { return nodes_[n.in[i]].value; };
        Tensor &y = n.value;
        n.degenerate = 0;

        switch (n.op)
        {
        case Op::matmul:
        {
            const Tensor &a = in(0), &b = in(1);
            const std::size_t inner_b = n.flag ? b.cols() : b.rows();
            if (a.cols() != inner_b)
                shape_error("matmul", a, b);
            const std::size_t out_cols = n.flag ? b.rows() : b.cols();
            resize(y, a.rows(), out_cols);
            if (n.flag)
                as_matrix(y).noalias() = as_matrix(a) * as_matrix(b).transpose();
            else
                as_matrix(y).noalias() = as_matrix(a) * as_matrix(b);
            break;
        }
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div:
        {
            const Tensor &a = in(0), &b = in(1);
            const char *opname = "elementwise";
            const std::size_t R = broadcast_extent(opname, a, b, a.rows(), b.rows());
            const std::size_t C = broadcast_extent(opname, a, b, a.cols(), b.cols());
            resize(y, R, C);
            const std::size_t ac = a.cols(), bc = b.cols();
            const bool ar = a.rows() == 1, br = b.rows() == 1, acu = ac == 1, bcu = bc == 1;
            for (std::size_t r = 0; r < R; ++r)
            {
                const double *pa = a.data.data() + (ar ? 0 : r * ac);
                const double *pb = b.data.data() + (br ? 0 : r * bc);
                double *py = y.data.data() + r * C;
                for (std::size_t c = 0; c < C; ++c)
                {
                    const double va = pa[acu ? 0 : c], vb = pb[bcu ? 0 : c];
                    switch (n.op)
                    {
                    case Op::add: py[c] = va + vb; break;
                    case Op::sub: py[c] = va - vb; break;
                    case Op::mul: py[c] = va * vb; break;
                    default: py[c] = va / vb; break;
                    }
                }
            }
            break;
        }
        case Op::scale:
        case Op::relu:
        case Op::sigmoid:
        case Op::tanh:
        case Op::square:
        case Op::sqrt:
        {
            const Tensor &a = in(0);
            resize(y, a.rows(), a.cols());
            const std::size_t N = a.numel();
            for (std::size_t i = 0; i < N; ++i)
            {
                const double x = a.data[i];
                double v;
                switch (n.op)
                {
                case Op::scale: v = n.scalar * x; break;
                case Op::relu: v = x > 0.0 ? x : 0.0; break;
                case Op::sigmoid: v = stable_sigmoid(x); break;
                case Op::tanh: v = std::tanh(x); break;
                case Op::square: v = x * x; break;
                default: v = std::sqrt(std::max(x, 0.0) + sqrt_guard); break;
                }
                y.data[i] = v;
            }
            break;
        }
        case Op::complex_abs:
        {
            const Tensor &a = in(0), &b = in(1);
            if (a.rows() != b.rows() || a.cols() != b.cols())
                shape_error("complex_abs", a, b);
            resize(y, a.rows(), a.cols());
            for (std::size_t i = 0; i < a.numel(); ++i)
                y.data[i] = std::sqrt(a.data[i] * a.data[i] + b.data[i] * b.data[i] + sqrt_guard);
            break;
        }
        case Op::sum:
        case Op::mean:
        {
            const Tensor &a = in(0);
            const std::size_t R = a.rows(), C = a.cols();
            const bool avg = n.op == Op::mean;
            if (n.axis == Axis::all)
            {
                resize(y, 1, 1);
                double s = 0.0;
                for (double v : a.data)
                    s += v;
                y.data[0] = avg ? s / double(a.numel()) : s;
            }
            else if (n.axis == Axis::cols)
            {
                resize(y, R, 1);
                for (std::size_t r = 0; r < R; ++r)
                {
                    double s = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        s += a.data[r * C + c];
                    y.data[r] = avg ? s / double(C) : s;
                }
            }
            else
            {
                resize(y, 1, C);
                std::fill(y.data.begin(), y.data.end(), 0.0);
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c)
                        y.data[c] += a.data[r * C + c];
                if (avg)
                    for (auto &v : y.data)
                        v /= double(R);
            }
            break;
        }
        case Op::slice_cols:
        {
            const Tensor &a = in(0);
            if (n.hi > a.cols())
                throw std::invalid_argument("slice_cols: range exceeds " + shape_string(a.shape));
            const std::size_t R = a.rows(), W = n.hi - n.lo;
            resize(y, R, W);
            for (std::size_t r = 0; r < R; ++r)
                std::copy_n(a.data.data() + r * a.cols() + n.lo, W, y.data.data() + r * W);
            break;
        }
        case Op::slice_rows:
        {
            const Tensor &a = in(0);
            if (n.hi > a.rows())
                throw std::invalid_argument("slice_rows: range exceeds " + shape_string(a.shape));
            const std::size_t C = a.cols();
            resize(y, n.hi - n.lo, C);
            std::copy_n(a.data.data() + n.lo * C, (n.hi - n.lo) * C, y.data.data());
            break;
        }
        case Op::concat_cols:
        {
            const std::size_t R = in(0).rows();
            std::size_t C = 0;
            for (std::size_t i = 0; i < n.in.size(); ++i)
            {
                if (in(i).rows() != R)
                    shape_error("concat_cols", in(0), in(i));
                C += in(i).cols();
            }
            resize(y, R, C);
            std::size_t off = 0;
            for (std::size_t i = 0; i < n.in.size(); ++i)
            {
                const Tensor &p = in(i);
                for (std::size_t r = 0; r < R; ++r)
                    std::copy_n(p.data.data() + r * p.cols(), p.cols(), y.data.data() + r * C + off);
                off += p.cols();
            }
            break;
        }
        case Op::batch_norm:
        {
            const Tensor &x = in(0), &g = in(1), &b = in(2);
            const std::size_t B = x.rows(), F = x.cols();
            if (g.numel() != F || b.numel() != F)
                shape_error("batch_norm", x, g);
            n.cache_a.assign(F, 0.0);
            n.cache_b.assign(F, 0.0);
            std::vector<double> invstd(F);
            if (bn_mode_ == BatchNormMode::train)
            {
                if (B < 2)
                    throw std::invalid_argument("batch_norm: train mode requires batch extent >= 2");
                for (std::size_t r = 0; r < B; ++r)
                    for (std::size_t c = 0; c < F; ++c)
                        n.cache_a[c] += x.data[r * F + c];
                for (auto &m : n.cache_a)
                    m /= double(B);
                for (std::size_t r = 0; r < B; ++r)
                    for (std::size_t c = 0; c < F; ++c)
                    {
                        const double d = x.data[r * F + c] - n.cache_a[c];
                        n.cache_b[c] += d * d;
                    }
                for (auto &v : n.cache_b)
                    v /= double(B);
            }
            else
            {
                auto rm = buffers_.find(n.name + ".running_mean");
                auto rv = buffers_.find(n.name + ".running_var");
                if (rm == buffers_.end() || rv == buffers_.end())
                    throw std::invalid_argument("batch_norm: missing running statistics for '" + n.name + "'");
                if (rm->second.numel() != F || rv->second.numel() != F)
                    throw std::invalid_argument("batch_norm: running statistics extent mismatch for '" + n.name + "'");
                n.cache_a = rm->second.data;
                n.cache_b = rv->second.data;
            }
            for (std::size_t c = 0; c < F; ++c)
                invstd[c] = 1.0 / std::sqrt(n.cache_b[c] + n.scalar);
            resize(y, B, F);
            for (std::size_t r = 0; r < B; ++r)
                for (std::size_t c = 0; c < F; ++c)
                    y.data[r * F + c] = g.data[c] * (x.data[r * F + c] - n.cache_a[c]) * invstd[c] + b.data[c];
            break;
        }
        case Op::normalize_unit_power:
        {
            const Tensor &x = in(0);
            const std::size_t R = x.rows(), C = x.cols();
            resize(y, R, C);
            n.cache_a.assign(R, 0.0);
            for (std::size_t r = 0; r < R; ++r)
            {
                const double *px = x.data.data() + r * C;
                double *py = y.data.data() + r * C;
                double s = 0.0;
                for (std::size_t c = 0; c < C; ++c)
                    s += px[c] * px[c];
                const double nrm = std::sqrt(s);
                if (nrm < 1e-12)
                {
                    std::fill(py, py + C, 0.0);
                    py[0] = 1.0;
                    n.cache_a[r] = 0.0;
                    ++n.degenerate;
                }
                else
                {
                    for (std::size_t c = 0; c < C; ++c)
                        py[c] = px[c] / nrm;
                    n.cache_a[r] = nrm;
                }
            }
            break;
        }
        case Op::normalize_modulus:
        {
            const Tensor &x = in(0);
            const std::size_t R = x.rows(), C = x.cols();
            if (C % 2 != 0)
                throw std::invalid_argument("normalize_modulus: feature extent must be even, got " + shape_string(x.shape));
            const std::size_t K = C / 2;
            resize(y, R, C);
            n.cache_a.assign(R * K, 0.0);
            for (std::size_t r = 0; r < R; ++r)
            {
                const double *px = x.data.data() + r * C;
                double *py = y.data.data() + r * C;
                for (std::size_t k = 0; k < K; ++k)
                {
                    const double a = px[k], b = px[K + k];
                    const double r2 = a * a + b * b;
                    if (r2 < 1e-24)
                    {
                        py[k] = n.scalar;
                        py[K + k] = 0.0;
                        n.cache_a[r * K + k] = 0.0;
                        ++n.degenerate;
                    }
                    else
                    {
                        const double m = std::sqrt(r2);
                        py[k] = n.scalar * a / m;
                        py[K + k] = n.scalar * b / m;
                        n.cache_a[r * K + k] = m;
                    }
                }
            }
            break;
        }
        case Op::input:
        case Op::parameter:
        case Op::constant:
            break;
        }
    }

    // ---- backward ----

    TensorMap Graph::backward(const std::string &output)
    {
        auto it = outputs_.find(output);
        if (it == outputs_.end())
            throw std::invalid_argument("Graph::backward: unknown output '" + output + "'");
        if (!forward_done_)
            throw std::invalid_argument("Graph::backward: forward has not been executed");
        Node &out = nodes_[it->second];
        if (out.value.numel() != 1)
            throw std::invalid_argument("Graph::backward: output '" + output + "' is not scalar, shape " +
                                        shape_string(out.value.shape));

        const int last = it->second;
        for (int i = 0; i <= last; ++i)
            if (nodes_[i].needs_grad)
                zero_like(nodes_[i].grad, nodes_[i].value);

        TensorMap grads;
        if (out.needs_grad)
        {
            out.grad.data[0] = 1.0;
            for (int i = last; i >= 0; --i)
            {
                Node &n = nodes_[i];
                if (n.needs_grad && n.op != Op::parameter)
                    pullback(n);
            }
        }
        for (const auto &[name, id] : params_)
        {
            if (id <= last && nodes_[id].needs_grad && !nodes_[id].grad.data.empty())
                grads[name] = nodes_[id].grad;
            else
                grads[name] = Tensor(nodes_[id].value.shape, 0.0);
        }
        return grads;
    }

    void Graph::pullback(Node &n)
    {
        auto in = [&](std::size_t i) -> Node & { return nodes_[n.in[i]]; };
        const Tensor &gy = n.grad;
        const Tensor &y = n.value;

        switch (n.op)
        {
        case Op::matmul:
        {
            Node &A = in(0), &B = in(1);
            if (A.needs_grad)
            {
                if (n.flag)
                    as_matrix(A.grad).noalias() += as_matrix(gy) * as_matrix(B.value);
                else
                    as_matrix(A.grad).noalias() += as_matrix(gy) * as_matrix(B.value).transpose();
            }
            if (B.needs_grad)
            {
                if (n.flag)
                    as_matrix(B.grad).noalias() += as_matrix(gy).transpose() * as_matrix(A.value);
                else
                    as_matrix(B.grad).noalias() += as_matrix(A.value).transpose() * as_matrix(gy);
            }
            break;
        }
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div:
        {
            Node &A = in(0), &B = in(1);
            const Tensor &a = A.value, &b = B.value;
            const std::size_t R = y.rows(), C = y.cols();
            const std::size_t ac = a.cols(), bc = b.cols();
            const bool ar = a.rows() == 1, br = b.rows() == 1, acu = ac == 1, bcu = bc == 1;
            for (std::size_t r = 0; r < R; ++r)
            {
                const std::size_t oa = ar ? 0 : r * ac, ob = br ? 0 : r * bc;
                for (std::size_t c = 0; c < C; ++c)
                {
                    const std::size_t ia = oa + (acu ? 0 : c), ib = ob + (bcu ? 0 : c);
                    const double g = gy.data[r * C + c];
                    double da, db;
                    switch (n.op)
                    {
                    case Op::add: da = g; db = g; break;
                    case Op::sub: da = g; db = -g; break;
                    case Op::mul: da = g * b.data[ib]; db = g * a.data[ia]; break;
                    default:
                    {
                        const double inv = 1.0 / b.data[ib];
                        da = g * inv;
                        db = -g * a.data[ia] * inv * inv;
                        break;
                    }
                    }
                    if (A.needs_grad)
                        A.grad.data[ia] += da;
                    if (B.needs_grad)
                        B.grad.data[ib] += db;
                }
            }
            break;
        }
        case Op::scale:
        case Op::relu:
        case Op::sigmoid:
        case Op::tanh:
        case Op::square:
        case Op::sqrt:
        {
            Node &A = in(0);
            const Tensor &a = A.value;
            for (std::size_t i = 0; i < a.numel(); ++i)
            {
                const double g = gy.data[i];
                double d;
                switch (n.op)
                {
                case Op::scale: d = n.scalar; break;
                case Op::relu: d = a.data[i] > 0.0 ? 1.0 : 0.0; break;
                case Op::sigmoid: d = y.data[i] * (1.0 - y.data[i]); break;
                case Op::tanh: d = 1.0 - y.data[i] * y.data[i]; break;
                case Op::square: d = 2.0 * a.data[i]; break;
                default: d = a.data[i] > 0.0 ? 0.5 / y.data[i] : 0.0; break;
                }
                A.grad.data[i] += g * d;
            }
            break;
        }
        case Op::complex_abs:
        {
            Node &A = in(0), &B = in(1);
            for (std::size_t i = 0; i < y.numel(); ++i)
            {
                const double g = gy.data[i] / y.data[i];
                if (A.needs_grad)
                    A.grad.data[i] += g * A.value.data[i];
                if (B.needs_grad)
                    B.grad.data[i] += g * B.value.data[i];
            }
            break;
        }
        case Op::sum:
        case Op::mean:
        {
            Node &A = in(0);
            const std::size_t R = A.value.rows(), C = A.value.cols();
            const bool avg = n.op == Op::mean;
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c)
                {
                    double g;
                    if (n.axis == Axis::all)
                        g = avg ? gy.data[0] / double(R * C) : gy.data[0];
                    else if (n.axis == Axis::cols)
                        g = avg ? gy.data[r] / double(C) : gy.data[r];
                    else
                        g = avg ? gy.data[c] / double(R) : gy.data[c];
                    A.grad.data[r * C + c] += g;
                }
            break;
        }
        case Op::slice_cols:
        {
            Node &A = in(0);
            const std::size_t R = y.rows(), W = y.cols(), C = A.value.cols();
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < W; ++c)
                    A.grad.data[r * C + n.lo + c] += gy.data[r * W + c];
            break;
        }
        case Op::slice_rows:
        {
            Node &A = in(0);
            const std::size_t C = A.value.cols();
            for (std::size_t i = 0; i < y.numel(); ++i)
                A.grad.data[n.lo * C + i] += gy.data[i];
            break;
        }
        case Op::concat_cols:
        {
            const std::size_t R = y.rows(), C = y.cols();
            std::size_t off = 0;
            for (std::size_t i = 0; i < n.in.size(); ++i)
            {
                Node &P = in(i);
                const std::size_t W = P.value.cols();
                if (P.needs_grad)
                    for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t c = 0; c < W; ++c)
                            P.grad.data[r * W + c] += gy.data[r * C + off + c];
                off += W;
            }
            break;
        }
        case Op::batch_norm:
        {
            Node &X = in(0), &G = in(1), &Bt = in(2);
            const Tensor &x = X.value;
            const std::size_t B = x.rows(), F = x.cols();
            std::vector<double> invstd(F), sum_dxhat(F, 0.0), sum_dxhat_xhat(F, 0.0);
            for (std::size_t c = 0; c < F; ++c)
                invstd[c] = 1.0 / std::sqrt(n.cache_b[c] + n.scalar);
            for (std::size_t r = 0; r < B; ++r)
                for (std::size_t c = 0; c < F; ++c)
                {
                    const double g = gy.data[r * F + c];
                    const double xhat = (x.data[r * F + c] - n.cache_a[c]) * invstd[c];
                    if (G.needs_grad)
                        G.grad.data[c] += g * xhat;
                    if (Bt.needs_grad)
                        Bt.grad.data[c] += g;
                    const double dxhat = g * G.value.data[c];
                    sum_dxhat[c] += dxhat;
                    sum_dxhat_xhat[c] += dxhat * xhat;
                }
            if (X.needs_grad)
            {
                const bool train = bn_mode_ == BatchNormMode::train;
                for (std::size_t r = 0; r < B; ++r)
                    for (std::size_t c = 0; c < F; ++c)
                    {
                        const double dxhat = gy.data[r * F + c] * G.value.data[c];
                        if (train)
                        {
                            const double xhat = (x.data[r * F + c] - n.cache_a[c]) * invstd[c];
                            X.grad.data[r * F + c] +=
                                invstd[c] / double(B) * (double(B) * dxhat - sum_dxhat[c] - xhat * sum_dxhat_xhat[c]);
                        }
                        else
                        {
                            X.grad.data[r * F + c] += dxhat * invstd[c];
                        }
                    }
            }
            break;
        }
        case Op::normalize_unit_power:
        {
            Node &X = in(0);
            const std::size_t R = y.rows(), C = y.cols();
            for (std::size_t r = 0; r < R; ++r)
            {
                const double nrm = n.cache_a[r];
                if (nrm == 0.0)
                    continue;
                const double *py = y.data.data() + r * C;
                const double *pg = gy.data.data() + r * C;
                double dot = 0.0;
                for (std::size_t c = 0; c < C; ++c)
                    dot += py[c] * pg[c];
                for (std::size_t c = 0; c < C; ++c)
                    X.grad.data[r * C + c] += (pg[c] - py[c] * dot) / nrm;
            }
            break;
        }
        case Op::normalize_modulus:
        {
            Node &X = in(0);
            const std::size_t R = y.rows(), C = y.cols(), K = C / 2;
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t k = 0; k < K; ++k)
                {
                    const double m = n.cache_a[r * K + k];
                    if (m == 0.0)
                        continue;
                    const double u1 = y.data[r * C + k] / n.scalar, u2 = y.data[r * C + K + k] / n.scalar;
                    const double g1 = gy.data[r * C + k], g2 = gy.data[r * C + K + k];
                    const double dot = u1 * g1 + u2 * g2;
                    const double f = n.scalar / m;
                    X.grad.data[r * C + k] += f * (g1 - u1 * dot);
                    X.grad.data[r * C + K + k] += f * (g2 - u2 * dot);
                }
            break;
        }
        case Op::input:
        case Op::parameter:
        case Op::constant:
            break;
        }
    }

    double check_gradients(Graph &graph, const TensorMap &inputs, const std::string &output, double h)
    {
        if (!(h > 0.0))
            throw std::invalid_argument("check_gradients: h must be positive");
        graph.forward(inputs);
        const TensorMap analytic = graph.backward(output);
        double worst = 0.0;
        for (const auto &name : graph.parameter_names())
        {
            Tensor &p = graph.parameter_value(name);
            const Tensor &g = analytic.at(name);
            for (std::size_t i = 0; i < p.numel(); ++i)
            {
                const double orig = p.data[i];
                p.data[i] = orig + h;
                const double up = graph.forward(inputs).at(output).item();
                p.data[i] = orig - h;
                const double down = graph.forward(inputs).at(output).item();
                p.data[i] = orig;
                const double fd = (up - down) / (2.0 * h);
                const double err = std::abs(g.data[i] - fd) / std::max(1.0, std::abs(g.data[i]));
                worst = std::max(worst, err);
            }
        }
        // leave cached values consistent with the unperturbed parameters
        graph.forward(inputs);
        return worst;
    }
}
