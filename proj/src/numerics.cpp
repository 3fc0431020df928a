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

#include "activesense/numerics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace activesense::num
{
    namespace
    {
        constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ULL;
    }

    std::uint64_t mix64(std::uint64_t x)
    {
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ULL;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBULL;
        x ^= x >> 31;
        return x;
    }

    std::uint64_t fnv1a(std::string_view bytes)
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : bytes)
        {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    RandomStream RandomStream::child(std::uint64_t label) const
    {
        return {seed, mix64(stream ^ mix64(label + golden))};
    }

    RandomStream RandomStream::child(std::string_view label) const
    {
        return child(fnv1a(label));
    }

    Rng::Rng(RandomStream stream)
        : desc_(stream), key_(mix64(stream.seed ^ mix64(stream.stream + golden)))
    {
    }

    Rng::result_type Rng::operator()()
    {
        ++counter_;
        return mix64(key_ + counter_ * golden);
    }

    double Rng::uniform()
    {
        return double((*this)() >> 11) * 0x1.0p-53;
    }

    double Rng::uniform(double lo, double hi)
    {
        return lo + (hi - lo) * uniform();
    }

    double Rng::normal()
    {
        if (has_spare_)
        {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    cplx Rng::complex_normal(double variance)
    {
        const double s = std::sqrt(variance / 2.0);
        const double re = normal();
        const double im = normal();
        return {s * re, s * im};
    }

    ComplexVector::ComplexVector(std::vector<double> re_, std::vector<double> im_)
        : re(std::move(re_)), im(std::move(im_))
    {
        if (re.size() != im.size())
            throw std::invalid_argument("ComplexVector: re and im lengths differ");
    }

    ComplexVector ComplexVector::from_complex(std::span<const cplx> values)
    {
        ComplexVector v(values.size());
        for (std::size_t i = 0; i < values.size(); ++i)
            v.set(i, values[i]);
        return v;
    }

    ComplexVector ComplexVector::from_stacked(std::span<const double> stacked)
    {
        if (stacked.size() % 2 != 0)
            throw std::invalid_argument("ComplexVector::from_stacked: odd length");
        const std::size_t n = stacked.size() / 2;
        ComplexVector v(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            v.re[i] = stacked[i];
            v.im[i] = stacked[n + i];
        }
        return v;
    }

    std::vector<cplx> ComplexVector::to_complex() const
    {
        std::vector<cplx> out(size());
        for (std::size_t i = 0; i < size(); ++i)
            out[i] = (*this)[i];
        return out;
    }

    std::vector<double> ComplexVector::stacked() const
    {
        std::vector<double> out(re);
        out.insert(out.end(), im.begin(), im.end());
        return out;
    }

    double ComplexVector::squared_norm() const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i)
            s += re[i] * re[i] + im[i] * im[i];
        return s;
    }

    double ComplexVector::norm() const { return std::sqrt(squared_norm()); }

    ComplexVector sample_complex_gaussian(std::size_t n, double variance, Rng &rng)
    {
        if (n == 0)
            throw std::invalid_argument("sample_complex_gaussian: n must be positive");
        if (!(variance > 0.0))
            throw std::invalid_argument("sample_complex_gaussian: variance must be positive");
        ComplexVector v(n);
        for (std::size_t i = 0; i < n; ++i)
            v.set(i, rng.complex_normal(variance));
        return v;
    }

    ComplexVector sample_complex_gaussian(std::size_t n, double variance, RandomStream stream)
    {
        Rng rng(stream);
        return sample_complex_gaussian(n, variance, rng);
    }

    cplx hermitian_inner(const ComplexVector &a, const ComplexVector &b)
    {
        if (a.size() != b.size())
            throw std::invalid_argument("hermitian_inner: length mismatch");
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            re += a.re[i] * b.re[i] + a.im[i] * b.im[i];
            im += a.re[i] * b.im[i] - a.im[i] * b.re[i];
        }
        return {re, im};
    }

    cplx transpose_inner(const ComplexVector &a, const ComplexVector &b)
    {
        if (a.size() != b.size())
            throw std::invalid_argument("transpose_inner: length mismatch");
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            re += a.re[i] * b.re[i] - a.im[i] * b.im[i];
            im += a.re[i] * b.im[i] + a.im[i] * b.re[i];
        }
        return {re, im};
    }
}
