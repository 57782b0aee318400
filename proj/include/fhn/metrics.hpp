#pragma once

// The four evaluation measures (SQB, CMSE, MdAPE, CDET) in vector and
// per-component form, plus report assembly and serialization.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fhn/errors.hpp"

namespace fhn {

using Samples = std::vector<std::vector<double>>; // n_samples rows of width p

namespace detail {

inline void check_pair(const Samples& preds, const Samples& truths) {
    if (preds.empty() || truths.empty()) throw EmptyInputError("metric inputs");
    if (preds.size() != truths.size()) throw ShapeMismatchError("metric sample counts differ");
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i].size() != truths[i].size() || preds[i].size() != preds[0].size())
            throw ShapeMismatchError("metric row widths differ");
}

inline std::vector<double> mean_of(const Samples& s) {
    std::vector<double> m(s[0].size(), 0.0);
    for (const auto& row : s)
        for (std::size_t k = 0; k < row.size(); ++k) m[k] += row[k];
    for (double& v : m) v /= static_cast<double>(s.size());
    return m;
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Squared bias: |mean(truths) - mean(preds)|^2.
inline double sqb(const Samples& preds, const Samples& truths) {
    detail::check_pair(preds, truths);
    std::vector<double> mp = detail::mean_of(preds), mt = detail::mean_of(truths);
    double s = 0.0;
    for (std::size_t k = 0; k < mp.size(); ++k) {
        double d = mt[k] - mp[k];
        s += d * d;
    }
    return s;
}

/// Centered MSE: mean_i |(truth_i - mean truth) - (pred_i - mean pred)|^2.
inline double cmse(const Samples& preds, const Samples& truths) {
    detail::check_pair(preds, truths);
    std::vector<double> mp = detail::mean_of(preds), mt = detail::mean_of(truths);
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (std::size_t k = 0; k < mp.size(); ++k) {
            double d = (truths[i][k] - mt[k]) - (preds[i][k] - mp[k]);
            s += d * d;
        }
    return s / static_cast<double>(preds.size());
}

/// Median of |truth_i - pred_i| / |truth_i| over samples (vector norms).
inline double mdape(const Samples& preds, const Samples& truths) {
    detail::check_pair(preds, truths);
    std::vector<double> ratios(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < preds[i].size(); ++k) {
            double d = truths[i][k] - preds[i][k];
            num += d * d;
            den += truths[i][k] * truths[i][k];
        }
        if (den == 0.0) throw ZeroNormTruthError(i);
        ratios[i] = std::sqrt(num / den);
    }
    return detail::median_of(std::move(ratios));
}

/// Coefficient of determination (R^2), vector form.
inline double cdet(const Samples& preds, const Samples& truths) {
    detail::check_pair(preds, truths);
    std::vector<double> mt = detail::mean_of(truths);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (std::size_t k = 0; k < mt.size(); ++k) {
            double d = truths[i][k] - preds[i][k];
            double c = truths[i][k] - mt[k];
            num += d * d;
            den += c * c;
        }
    if (den == 0.0) throw DegenerateTruthsError();
    return 1.0 - num / den;
}

namespace detail {

inline Samples component_slice(const Samples& s, std::size_t k) {
    Samples out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = {s[i][k]};
    return out;
}

} // namespace detail

/// All four measures, vector-level and per-component. Component names come
/// from the label layout so report rows line up with the source tables.
struct EvalReport {
    std::size_t n_samples = 0;
    std::vector<std::string> component_names;
    double mdape_vec = 0.0, cdet_vec = 0.0, sqb_vec = 0.0, cmse_vec = 0.0;
    std::vector<double> mdape_comp, cdet_comp, sqb_comp, cmse_comp;

    std::string to_text() const {
        std::ostringstream os;
        os.precision(6);
        os << "n_samples = " << n_samples << "\n";
        os << "vector: mdape = " << mdape_vec << ", cdet = " << cdet_vec
           << ", sqb = " << sqb_vec << ", cmse = " << cmse_vec << "\n";
        for (std::size_t k = 0; k < component_names.size(); ++k)
            os << component_names[k] << ": mdape = " << mdape_comp[k]
               << ", cdet = " << cdet_comp[k] << ", sqb = " << sqb_comp[k]
               << ", cmse = " << cmse_comp[k] << "\n";
        return os.str();
    }

    /// Comma-separated rows shaped like the reference tables: one metric per
    /// row, parameter columns in layout order, vector value last.
    std::string to_csv() const {
        std::ostringstream os;
        os.precision(6);
        os << "metric";
        for (const auto& name : component_names) os << "," << name;
        os << ",vector\n";
        auto row = [&](const char* metric, const std::vector<double>& comp, double vec_val) {
            os << metric;
            for (double v : comp) os << "," << v;
            os << "," << vec_val << "\n";
        };
        row("mdape", mdape_comp, mdape_vec);
        row("cdet", cdet_comp, cdet_vec);
        row("sqb", sqb_comp, sqb_vec);
        row("cmse", cmse_comp, cmse_vec);
        return os.str();
    }
};

inline EvalReport evaluate_predictions(const Samples& preds, const Samples& truths,
                                       const std::vector<std::string>& component_names) {
    detail::check_pair(preds, truths);
    if (component_names.size() != preds[0].size())
        throw ShapeMismatchError("component name count");
    EvalReport r;
    r.n_samples = preds.size();
    r.component_names = component_names;
    r.mdape_vec = mdape(preds, truths);
    r.cdet_vec = cdet(preds, truths);
    r.sqb_vec = sqb(preds, truths);
    r.cmse_vec = cmse(preds, truths);
    for (std::size_t k = 0; k < component_names.size(); ++k) {
        Samples pk = detail::component_slice(preds, k);
        Samples tk = detail::component_slice(truths, k);
        r.mdape_comp.push_back(mdape(pk, tk));
        r.cdet_comp.push_back(cdet(pk, tk));
        r.sqb_comp.push_back(sqb(pk, tk));
        r.cmse_comp.push_back(cmse(pk, tk));
    }
    return r;
}

} // namespace fhn
