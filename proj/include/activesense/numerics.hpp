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

#ifndef ACTIVESENSE_NUMERICS_HPP
#define ACTIVESENSE_NUMERICS_HPP

#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace activesense::num
{
    using cplx = std::complex<double>;

    // Immutable descriptor of a reproducible random substream.
    // Identical (seed, stream) pairs always produce the same sequence.
    struct RandomStream
    {
        std::uint64_t seed = 0;
        std::uint64_t stream = 0;

        // Derive an independent child substream, e.g. one per episode or per frame.
        RandomStream child(std::uint64_t label) const;
        RandomStream child(std::string_view label) const;

        friend bool operator==(const RandomStream &, const RandomStream &) = default;
    };

    // Counter-based generator: draw i is a pure function of (descriptor, i).
    // Satisfies UniformRandomBitGenerator so it can drive <random> distributions.
    class Rng
    {
    public:
        using result_type = std::uint64_t;

        explicit Rng(RandomStream stream);

        static constexpr result_type min() { return 0; }
        static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
        result_type operator()();

        double uniform();                   // [0, 1)
        double uniform(double lo, double hi); // [lo, hi)
        double normal();                    // N(0, 1), Box-Muller
        cplx complex_normal(double variance); // CN(0, variance)

        std::uint64_t draws() const { return counter_; }
        const RandomStream &descriptor() const { return desc_; }

    private:
        RandomStream desc_;
        std::uint64_t key_;
        std::uint64_t counter_ = 0;
        bool has_spare_ = false;
        double spare_ = 0.0;
    };

    std::uint64_t mix64(std::uint64_t x);

    // Split [re; im] complex vector. All complex quantities crossing into the
    // real-valued network use this layout.
    struct ComplexVector
    {
        std::vector<double> re;
        std::vector<double> im;

        ComplexVector() = default;
        explicit ComplexVector(std::size_t n) : re(n, 0.0), im(n, 0.0) {}
        ComplexVector(std::vector<double> re_, std::vector<double> im_);

        static ComplexVector from_complex(std::span<const cplx> values);
        static ComplexVector from_stacked(std::span<const double> stacked); // [re; im]

        std::size_t size() const { return re.size(); }
        cplx operator[](std::size_t i) const { return {re[i], im[i]}; }
        void set(std::size_t i, cplx v)
        {
            re[i] = v.real();
            im[i] = v.imag();
        }

        std::vector<cplx> to_complex() const;
        std::vector<double> stacked() const; // [re; im]
        double norm() const;
        double squared_norm() const;
    };

    // Entries i.i.d. CN(0, variance): real and imaginary parts each variance/2.
    ComplexVector sample_complex_gaussian(std::size_t n, double variance, Rng &rng);
    ComplexVector sample_complex_gaussian(std::size_t n, double variance, RandomStream stream);

    // sum_i conj(a_i) * b_i
    cplx hermitian_inner(const ComplexVector &a, const ComplexVector &b);
    // sum_i a_i * b_i (no conjugation)
    cplx transpose_inner(const ComplexVector &a, const ComplexVector &b);

    // 64-bit FNV-1a, used for config hashing.
    std::uint64_t fnv1a(std::string_view bytes);
}

#endif
