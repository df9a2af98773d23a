#pragma once

#include "condsr/autodiff.hpp"

#include <optional>
#include <string_view>

namespace condsr {

/// Central moment discrepancy settings. `lower`/`upper` record the range of
/// the representations (tanh gives [-1, 1]); the discrepancy itself is not
/// rescaled by them.
struct CmdConfig {
    int moment_order = 5;
    double lower = -1.0;
    double upper = 1.0;

    void validate() const;
};

enum class Kernel { Linear, Rbf };

std::string_view to_string(Kernel k);
Kernel kernel_from_string(std::string_view s);

struct MmdConfig {
    Kernel kernel = Kernel::Rbf;
    /// Fixed RBF bandwidth; empty selects the median pairwise distance of the
    /// pooled samples, recomputed on every call.
    std::optional<double> bandwidth;

    void validate() const;
};

/// ||mean(H1) - mean(H2)||^2 + sum_{k=2..K} ||c_k(H1) - c_k(H2)||^2 where
/// c_k is the column-wise k-th central moment.
ad::Var cmd(ad::Var h1, ad::Var h2, const CmdConfig& cfg);

/// Biased squared-MMD estimate
/// mean k(H1, H1) - 2 mean k(H1, H2) + mean k(H2, H2).
/// The bandwidth is a constant of the graph; no gradient flows into it.
ad::Var mmd(ad::Var h1, ad::Var h2, const MmdConfig& cfg);

/// Median of the pairwise Euclidean distances among the rows of `a` and `b`
/// pooled; 1 when that median is 0.
double median_heuristic_bandwidth(const Matrix& a, const Matrix& b);

/// Value-only conveniences.
double cmd_value(const Matrix& h1, const Matrix& h2, const CmdConfig& cfg);
double mmd_value(const Matrix& h1, const Matrix& h2, const MmdConfig& cfg);

}  // namespace condsr
