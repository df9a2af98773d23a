#include "condsr/shift_metrics.hpp"

#include "condsr/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace condsr {

namespace {

void require_compatible(ad::Var h1, ad::Var h2, const char* who) {
    if (h1.rows() == 0 || h2.rows() == 0) throw ShapeError(std::string(who) + ": empty sample");
    if (h1.cols() != h2.cols()) {
        throw ShapeError(std::string(who) + ": column mismatch " + std::to_string(h1.rows()) + "x" +
                         std::to_string(h1.cols()) + " vs " + std::to_string(h2.rows()) + "x" +
                         std::to_string(h2.cols()));
    }
}

ad::Var rbf_mean(ad::Var a, ad::Var b, double gamma) {
    return ad::mean(ad::exp(ad::scale(ad::pairwise_sq_dists(a, b), -gamma)));
}

}  // namespace

void CmdConfig::validate() const {
    if (moment_order < 1) throw ValidationError("cmd: moment order must be >= 1");
    if (!(lower < upper)) throw ValidationError("cmd: bounds must satisfy lower < upper");
}

std::string_view to_string(Kernel k) { return k == Kernel::Linear ? "linear" : "rbf"; }

Kernel kernel_from_string(std::string_view s) {
    if (s == "linear") return Kernel::Linear;
    if (s == "rbf") return Kernel::Rbf;
    throw ValidationError("mmd: unknown kernel '" + std::string(s) + "' (expected linear or rbf)");
}

void MmdConfig::validate() const {
    if (bandwidth && !(*bandwidth > 0.0)) throw ValidationError("mmd: bandwidth must be positive");
}

ad::Var cmd(ad::Var h1, ad::Var h2, const CmdConfig& cfg) {
    cfg.validate();
    require_compatible(h1, h2, "cmd");
    ad::Var m1 = ad::col_mean(h1);
    ad::Var m2 = ad::col_mean(h2);
    ad::Var total = ad::sum_squares(ad::sub(m1, m2));
    if (cfg.moment_order >= 2) {
        ad::Var c1 = ad::sub_row(h1, m1);
        ad::Var c2 = ad::sub_row(h2, m2);
        for (int k = 2; k <= cfg.moment_order; ++k) {
            ad::Var diff = ad::sub(ad::col_mean(ad::pow(c1, k)), ad::col_mean(ad::pow(c2, k)));
            total = ad::add(total, ad::sum_squares(diff));
        }
    }
    return total;
}

double median_heuristic_bandwidth(const Matrix& a, const Matrix& b) {
    const Eigen::Index n = a.rows() + b.rows();
    auto row = [&](Eigen::Index i) { return i < a.rows() ? a.row(i) : b.row(i - a.rows()); };
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) dists.push_back((row(i) - row(j)).norm());
    }
    if (dists.empty()) return 1.0;
    const std::size_t mid = dists.size() / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
    double median = dists[mid];
    if (dists.size() % 2 == 0) {
        const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
        median = 0.5 * (median + lower);
    }
    return median > 0.0 ? median : 1.0;
}

ad::Var mmd(ad::Var h1, ad::Var h2, const MmdConfig& cfg) {
    cfg.validate();
    require_compatible(h1, h2, "mmd");
    if (cfg.kernel == Kernel::Linear) return ad::sum_squares(ad::sub(ad::col_mean(h1), ad::col_mean(h2)));

    const double sigma = cfg.bandwidth ? *cfg.bandwidth : median_heuristic_bandwidth(h1.value(), h2.value());
    const double gamma = 1.0 / (2.0 * sigma * sigma);
    // Both cross orientations are averaged so that swapping the arguments
    // reproduces the value bit for bit.
    ad::Var self = ad::add(rbf_mean(h1, h1, gamma), rbf_mean(h2, h2, gamma));
    ad::Var cross = ad::add(rbf_mean(h1, h2, gamma), rbf_mean(h2, h1, gamma));
    return ad::sub(self, cross);
}

double cmd_value(const Matrix& h1, const Matrix& h2, const CmdConfig& cfg) {
    ad::Tape t;
    return cmd(t.constant(h1), t.constant(h2), cfg).scalar();
}

double mmd_value(const Matrix& h1, const Matrix& h2, const MmdConfig& cfg) {
    ad::Tape t;
    return mmd(t.constant(h1), t.constant(h2), cfg).scalar();
}

}  // namespace condsr
