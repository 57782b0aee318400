#pragma once

// Prior sampling with rejection, feature extraction (TS / FC / TSFC), label
// assembly, Hessian screening of covariance labels, binary persistence, and
// train/validation/test splitting.
//
// Determinism: every sample i draws from its own RngStream(seed, 2 + i) in a
// fixed order (theta, beta, fresh rho/sigma if enabled, then the noise
// realization), so generation is reproducible and embarrassingly parallel,
// and growing n_train extends the training split without disturbing the
// test/validation samples. Stream 1 holds the shared (rho, sigma) pairs.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fhn/adjoint.hpp"
#include "fhn/errors.hpp"
#include "fhn/fourier.hpp"
#include "fhn/noise.hpp"
#include "fhn/ode.hpp"
#include "fhn/rng.hpp"
#include "fhn/spd.hpp"

namespace fhn {

enum class FeatureKind { TS, FC, TSFC };

inline std::string to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::TS: return "ts";
        case FeatureKind::FC: return "fc";
        case FeatureKind::TSFC: return "tsfc";
    }
    return "?";
}

inline FeatureKind feature_kind_from_string(const std::string& s) {
    if (s == "ts") return FeatureKind::TS;
    if (s == "fc") return FeatureKind::FC;
    if (s == "tsfc") return FeatureKind::TSFC;
    throw ConfigError("unknown feature kind: " + s);
}

inline std::size_t feature_width(FeatureKind k, std::size_t n_t) {
    return k == FeatureKind::TSFC ? 2 * n_t : n_t;
}

/// Label vector layout: [theta0, theta1, theta2 | beta? | rho? sigma? |
/// vec(log Gamma)?]. The noise block composition follows the noise kind.
struct LabelLayout {
    bool dyn = true; // always present
    bool noise = false;
    bool cov = false;
    NoiseKind noise_kind = NoiseKind::Additive;

    bool has_beta() const {
        return noise && (noise_kind == NoiseKind::Intrinsic || noise_kind == NoiseKind::Combined);
    }
    bool has_rho_sigma() const {
        return noise && (noise_kind == NoiseKind::Additive || noise_kind == NoiseKind::Combined);
    }
    std::size_t p() const {
        return 3 + (has_beta() ? 1 : 0) + (has_rho_sigma() ? 2 : 0) + (cov ? 6 : 0);
    }
    std::size_t cov_offset() const { return p() - 6; }

    std::vector<std::string> component_names() const {
        std::vector<std::string> names{"theta0", "theta1", "theta2"};
        if (has_beta()) names.push_back("beta");
        if (has_rho_sigma()) {
            names.push_back("rho");
            names.push_back("sigma");
        }
        if (cov)
            for (const char* n : {"logcov00", "logcov01", "logcov02", "logcov11", "logcov12",
                                  "logcov22"})
                names.push_back(n);
        return names;
    }

    /// Blocks string for manifests and the CLI, e.g. "dyn,noise,cov".
    std::string blocks() const {
        std::string s = "dyn";
        if (noise) s += ",noise";
        if (cov) s += ",cov";
        return s;
    }
    static LabelLayout from_blocks(const std::string& blocks, NoiseKind kind) {
        LabelLayout l;
        l.noise_kind = kind;
        std::stringstream ss(blocks);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item == "dyn") l.dyn = true;
            else if (item == "noise") l.noise = true;
            else if (item == "cov") l.cov = true;
            else throw ConfigError("unknown label block: " + item);
        }
        return l;
    }
};

/// Draw from the componentwise-normal prior, rejecting any draw with a
/// component outside the admissible bounds.
inline DynParams sample_prior(const PriorConfig& prior, RngStream& rng) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Vec3 draw;
        for (std::size_t i = 0; i < 3; ++i) draw[i] = rng.normal(prior.mean[i], prior.sigma[i]);
        bool ok = true;
        for (std::size_t i = 0; i < 3; ++i)
            if (draw[i] < prior.lower[i] || draw[i] > prior.upper[i]) ok = false;
        if (ok) return DynParams::from_vec(draw);
    }
    throw BugError("sample_prior: 1e4 consecutive rejections");
}

enum class SampleVerdict : int { Accepted = 0, NegativeDefinite = 1, IllConditioned = 2, Failed = 3 };
enum class Split : int { Test = 0, Val = 1, Train = 2 };

struct GenerateConfig {
    std::size_t n_train = 1000;
    std::size_t n_val = 500;
    std::size_t n_test = 1000;
    FeatureKind features = FeatureKind::TSFC;
    NoiseKind noise = NoiseKind::Additive;
    LabelLayout labels;
    PriorConfig prior;
    SimConfig sim;
    LikelihoodConfig like;                      // objective weighting (reports, phi)
    LikelihoodConfig hessian_like{10.0};        // weighting for covariance labels
    std::uint64_t seed = 0;
    std::size_t shared_noise_pairs = 100;       // 0 = fresh (rho, sigma) per sample
    std::size_t threads = 1;
};

struct DatasetManifest {
    std::string schema = "fhn-dataset-1";
    GenerateConfig cfg;
    std::size_t feature_width = 0;
    std::size_t label_width = 0;
    std::size_t n_train_kept = 0, n_val_kept = 0, n_test_kept = 0;
    std::size_t dropped_negdef = 0, dropped_illcond = 0, dropped_failed = 0;

    std::string to_text() const;
    static DatasetManifest from_text(const std::string& text);
};

struct MetaRow {
    DynParams dyn;
    NoiseSpec noise;
    SampleVerdict verdict = SampleVerdict::Accepted;
    Split split = Split::Train;
};

struct LabeledSample {
    std::vector<double> features;
    std::vector<double> labels;
    MetaRow meta;
};

/// Kept samples, row-major, ordered train block then val block then test
/// block. `meta` covers every requested sample including dropped ones.
struct Dataset {
    std::size_t feature_width = 0;
    std::size_t label_width = 0;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    std::vector<double> features;
    std::vector<double> labels;
    std::vector<MetaRow> meta;

    std::size_t n_rows() const { return n_train + n_val + n_test; }
    const double* feature_row(std::size_t i) const { return features.data() + i * feature_width; }
    const double* label_row(std::size_t i) const { return labels.data() + i * label_width; }

    std::size_t split_begin(Split s) const {
        switch (s) {
            case Split::Train: return 0;
            case Split::Val: return n_train;
            case Split::Test: return n_train + n_val;
        }
        return 0;
    }
    std::size_t split_count(Split s) const {
        switch (s) {
            case Split::Train: return n_train;
            case Split::Val: return n_val;
            case Split::Test: return n_test;
        }
        return 0;
    }
};

namespace detail {

struct RawSample {
    std::vector<double> features;
    std::vector<double> labels;      // without the covariance block
    Hessian3 hessian;                // valid when cov labels requested and !failed
    MetaRow meta;
    bool failed = false;
};

inline void run_parallel(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& work) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                work(i);
            }
        });
    for (auto& th : pool) th.join();
}

} // namespace detail

/// Generate the full dataset. If covariance labels are requested, Hessians
/// are assembled at the true parameters against each sample's noisy
/// observation, screened with batch-level whiskers, and non-accepted samples
/// are dropped (never regenerated).
inline std::pair<Dataset, DatasetManifest> generate_dataset(const GenerateConfig& cfg) {
    cfg.sim.validate();
    if (cfg.labels.noise_kind != cfg.noise)
        throw ConfigError("label layout noise kind must match the generation noise kind");
    const std::size_t n_total = cfg.n_train + cfg.n_val + cfg.n_test;
    if (n_total == 0) throw ConfigError("generate_dataset: no samples requested");

    // Shared (rho, sigma) pairs; the combined halving happens at use.
    NoiseWindows windows;
    std::vector<std::pair<double, double>> pairs;
    if (cfg.shared_noise_pairs > 0 &&
        (cfg.noise == NoiseKind::Additive || cfg.noise == NoiseKind::Combined)) {
        RngStream pair_rng(cfg.seed, 1);
        pairs.reserve(cfg.shared_noise_pairs);
        for (std::size_t i = 0; i < cfg.shared_noise_pairs; ++i) {
            double rho = pair_rng.truncated_normal(windows.rho_mean, windows.rho_sd,
                                                   windows.rho_lo, windows.rho_hi);
            double sigma = pair_rng.truncated_normal(windows.sigma_mean, windows.sigma_sd,
                                                     windows.sigma_lo, windows.sigma_hi);
            pairs.emplace_back(rho, sigma);
        }
    }

    std::vector<detail::RawSample> raw(n_total);
    const std::size_t fw = feature_width(cfg.features, cfg.sim.n_t);

    auto make_sample = [&](std::size_t i) {
        detail::RawSample& s = raw[i];
        // split assignment: test first, then val, then train, so growing
        // n_train leaves test/val untouched (nested training subsets)
        s.meta.split = i < cfg.n_test            ? Split::Test
                       : i < cfg.n_test + cfg.n_val ? Split::Val
                                                    : Split::Train;
        RngStream rng(cfg.seed, 2 + i);
        try {
            s.meta.dyn = sample_prior(cfg.prior, rng);
            NoiseSpec spec;
            spec.kind = cfg.noise;
            if (cfg.noise == NoiseKind::Intrinsic || cfg.noise == NoiseKind::Combined)
                spec.beta = rng.truncated_normal(windows.beta_mean, windows.beta_sd,
                                                 windows.beta_lo, windows.beta_hi);
            if (cfg.noise == NoiseKind::Additive || cfg.noise == NoiseKind::Combined) {
                if (pairs.empty()) {
                    spec.rho = rng.truncated_normal(windows.rho_mean, windows.rho_sd,
                                                    windows.rho_lo, windows.rho_hi);
                    spec.sigma = rng.truncated_normal(windows.sigma_mean, windows.sigma_sd,
                                                      windows.sigma_lo, windows.sigma_hi);
                } else {
                    spec.rho = pairs[i % pairs.size()].first;
                    spec.sigma = pairs[i % pairs.size()].second;
                }
            }
            if (cfg.noise == NoiseKind::Combined) {
                spec.sigma *= 0.5;
                spec.beta *= 0.5;
            }
            s.meta.noise = spec;

            std::vector<double> obs = make_observation(s.meta.dyn, spec, cfg.sim, rng);
            switch (cfg.features) {
                case FeatureKind::TS: s.features = obs; break;
                case FeatureKind::FC: s.features = fourier_features(obs); break;
                case FeatureKind::TSFC: {
                    s.features = obs;
                    std::vector<double> fc = fourier_features(obs);
                    s.features.insert(s.features.end(), fc.begin(), fc.end());
                    break;
                }
            }
            s.labels = {s.meta.dyn.theta0, s.meta.dyn.theta1, s.meta.dyn.theta2};
            if (cfg.labels.has_beta()) s.labels.push_back(spec.beta);
            if (cfg.labels.has_rho_sigma()) {
                s.labels.push_back(spec.rho);
                s.labels.push_back(spec.sigma);
            }
            if (cfg.labels.cov)
                s.hessian = assemble_hessian(s.meta.dyn, obs, cfg.hessian_like, cfg.prior,
                                             cfg.sim);
        } catch (const NonFiniteError&) {
            s.failed = true;
            s.meta.verdict = SampleVerdict::Failed;
        }
    };
    detail::run_parallel(n_total, cfg.threads, make_sample);

    // Batch-level screening of the covariance Hessians.
    if (cfg.labels.cov) {
        std::vector<Hessian3> hs;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n_total; ++i)
            if (!raw[i].failed) {
                hs.push_back(raw[i].hessian);
                idx.push_back(i);
            }
        if (!hs.empty()) {
            std::vector<HessianQuality> quality = screen_hessians(hs);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                detail::RawSample& s = raw[idx[k]];
                switch (quality[k].verdict) {
                    case HessianVerdict::Accepted: {
                        PosteriorCov cov = posterior_covariance(s.hessian);
                        TangentVec t = vec(log_at_identity(cov.gamma));
                        s.labels.insert(s.labels.end(), t.begin(), t.end());
                        break;
                    }
                    case HessianVerdict::NegativeDefinite:
                        s.meta.verdict = SampleVerdict::NegativeDefinite;
                        break;
                    case HessianVerdict::IllConditioned:
                        s.meta.verdict = SampleVerdict::IllConditioned;
                        break;
                }
            }
        }
    }

    Dataset ds;
    ds.feature_width = fw;
    ds.label_width = cfg.labels.p();
    DatasetManifest manifest;
    manifest.cfg = cfg;
    manifest.feature_width = fw;
    manifest.label_width = ds.label_width;

    for (Split split : {Split::Train, Split::Val, Split::Test}) {
        std::size_t kept = 0;
        for (std::size_t i = 0; i < n_total; ++i) {
            const detail::RawSample& s = raw[i];
            if (s.meta.split != split) continue;
            if (s.meta.verdict != SampleVerdict::Accepted) continue;
            ds.features.insert(ds.features.end(), s.features.begin(), s.features.end());
            ds.labels.insert(ds.labels.end(), s.labels.begin(), s.labels.end());
            ++kept;
        }
        if (split == Split::Train) ds.n_train = manifest.n_train_kept = kept;
        if (split == Split::Val) ds.n_val = manifest.n_val_kept = kept;
        if (split == Split::Test) ds.n_test = manifest.n_test_kept = kept;
    }
    for (std::size_t i = 0; i < n_total; ++i) {
        ds.meta.push_back(raw[i].meta);
        switch (raw[i].meta.verdict) {
            case SampleVerdict::NegativeDefinite: ++manifest.dropped_negdef; break;
            case SampleVerdict::IllConditioned: ++manifest.dropped_illcond; break;
            case SampleVerdict::Failed: ++manifest.dropped_failed; break;
            case SampleVerdict::Accepted: break;
        }
    }
    return {std::move(ds), std::move(manifest)};
}

/// Per-feature mean/std computed from the training split only.
struct ScalerStats {
    std::vector<double> mean;
    std::vector<double> stddev; // floored at 1e-8
};

inline ScalerStats fit_scaler(const Dataset& ds) {
    if (ds.n_train == 0) throw EmptyInputError("fit_scaler: empty training split");
    ScalerStats st;
    st.mean.assign(ds.feature_width, 0.0);
    st.stddev.assign(ds.feature_width, 0.0);
    const double n = static_cast<double>(ds.n_train);
    for (std::size_t i = 0; i < ds.n_train; ++i) {
        const double* row = ds.feature_row(i);
        for (std::size_t k = 0; k < ds.feature_width; ++k) st.mean[k] += row[k];
    }
    for (double& m : st.mean) m /= n;
    for (std::size_t i = 0; i < ds.n_train; ++i) {
        const double* row = ds.feature_row(i);
        for (std::size_t k = 0; k < ds.feature_width; ++k) {
            double d = row[k] - st.mean[k];
            st.stddev[k] += d * d;
        }
    }
    for (double& s : st.stddev) s = std::max(std::sqrt(s / n), 1e-8);
    return st;
}

inline void apply_scaler(const ScalerStats& st, std::vector<double>& row) {
    if (row.size() != st.mean.size()) throw ShapeMismatchError("scaler width");
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = (row[k] - st.mean[k]) / st.stddev[k];
}

/// Standardize all splits in place with training-split statistics.
inline ScalerStats standardize_features(Dataset& ds) {
    ScalerStats st = fit_scaler(ds);
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        double* row = ds.features.data() + i * ds.feature_width;
        for (std::size_t k = 0; k < ds.feature_width; ++k)
            row[k] = (row[k] - st.mean[k]) / st.stddev[k];
    }
    return st;
}

/// Z-score the labels of all splits with training-split statistics. Without
/// this, low-variance targets (sigma spans ~1e-4 against theta's ~1e-1) send
/// the shared trunk gradients three orders of magnitude weaker and stall at
/// small step budgets. Predictions are mapped back through the stored stats.
inline ScalerStats standardize_labels(Dataset& ds) {
    if (ds.n_train == 0) throw EmptyInputError("standardize_labels: empty training split");
    ScalerStats st;
    st.mean.assign(ds.label_width, 0.0);
    st.stddev.assign(ds.label_width, 0.0);
    const double n = static_cast<double>(ds.n_train);
    for (std::size_t i = 0; i < ds.n_train; ++i)
        for (std::size_t k = 0; k < ds.label_width; ++k)
            st.mean[k] += ds.label_row(i)[k];
    for (double& m : st.mean) m /= n;
    for (std::size_t i = 0; i < ds.n_train; ++i)
        for (std::size_t k = 0; k < ds.label_width; ++k) {
            double d = ds.label_row(i)[k] - st.mean[k];
            st.stddev[k] += d * d;
        }
    for (double& s : st.stddev) s = std::max(std::sqrt(s / n), 1e-8);
    for (std::size_t i = 0; i < ds.n_rows(); ++i)
        for (std::size_t k = 0; k < ds.label_width; ++k) {
            double& v = ds.labels[i * ds.label_width + k];
            v = (v - st.mean[k]) / st.stddev[k];
        }
    return st;
}

// ---------------------------------------------------------------------------
// persistence: manifest (key = value text) + raw little-endian f64 blobs

namespace detail {

inline void put_kv(std::ostringstream& os, const std::string& key, const std::string& v) {
    os << key << " = " << v << "\n";
}
inline void put_kv(std::ostringstream& os, const std::string& key, std::size_t v) {
    os << key << " = " << v << "\n";
}
inline void put_kv(std::ostringstream& os, const std::string& key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << key << " = " << buf << "\n";
}

struct KvMap {
    std::vector<std::pair<std::string, std::string>> items;
    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : items)
            if (k == key) return v;
        throw IoError("manifest key missing: " + key);
    }
    double get_f(const std::string& key) const { return std::stod(get(key)); }
    std::size_t get_u(const std::string& key) const { return std::stoull(get(key)); }
    static KvMap parse(const std::string& text) {
        KvMap m;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            auto pos = line.find(" = ");
            if (pos == std::string::npos) continue;
            m.items.emplace_back(line.substr(0, pos), line.substr(pos + 3));
        }
        return m;
    }
};

inline void write_f64(const std::filesystem::path& path, const std::vector<double>& data) {
    static_assert(sizeof(double) == 8);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path.string());
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<double> read_f64(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw IoError("cannot open for read: " + path.string());
    std::streamsize bytes = is.tellg();
    if (bytes % 8 != 0) throw IoError("truncated f64 file: " + path.string());
    is.seekg(0);
    std::vector<double> data(static_cast<std::size_t>(bytes) / 8);
    is.read(reinterpret_cast<char*>(data.data()), bytes);
    if (!is) throw IoError("read failed: " + path.string());
    return data;
}

} // namespace detail

inline std::string DatasetManifest::to_text() const {
    std::ostringstream os;
    detail::put_kv(os, "schema", schema);
    detail::put_kv(os, "seed", static_cast<std::size_t>(cfg.seed));
    detail::put_kv(os, "n_train", cfg.n_train);
    detail::put_kv(os, "n_val", cfg.n_val);
    detail::put_kv(os, "n_test", cfg.n_test);
    detail::put_kv(os, "features", fhn::to_string(cfg.features));
    detail::put_kv(os, "noise", fhn::to_string(cfg.noise));
    detail::put_kv(os, "labels", cfg.labels.blocks());
    detail::put_kv(os, "n_t", cfg.sim.n_t);
    detail::put_kv(os, "tau", cfg.sim.tau);
    detail::put_kv(os, "z", cfg.sim.z);
    detail::put_kv(os, "u0", cfg.sim.u0);
    detail::put_kv(os, "v0", cfg.sim.v0);
    for (std::size_t i = 0; i < 3; ++i) {
        std::string s = std::to_string(i);
        detail::put_kv(os, "prior_mean" + s, cfg.prior.mean[i]);
        detail::put_kv(os, "prior_sigma" + s, cfg.prior.sigma[i]);
        detail::put_kv(os, "prior_lower" + s, cfg.prior.lower[i]);
        detail::put_kv(os, "prior_upper" + s, cfg.prior.upper[i]);
    }
    detail::put_kv(os, "sigma_noise_tau", cfg.like.sigma_noise_tau);
    detail::put_kv(os, "hessian_sigma_noise_tau", cfg.hessian_like.sigma_noise_tau);
    detail::put_kv(os, "shared_noise_pairs", cfg.shared_noise_pairs);
    detail::put_kv(os, "feature_width", feature_width);
    detail::put_kv(os, "label_width", label_width);
    detail::put_kv(os, "n_train_kept", n_train_kept);
    detail::put_kv(os, "n_val_kept", n_val_kept);
    detail::put_kv(os, "n_test_kept", n_test_kept);
    detail::put_kv(os, "dropped_negative_definite", dropped_negdef);
    detail::put_kv(os, "dropped_ill_conditioned", dropped_illcond);
    detail::put_kv(os, "dropped_failed", dropped_failed);
    return os.str();
}

inline DatasetManifest DatasetManifest::from_text(const std::string& text) {
    detail::KvMap kv = detail::KvMap::parse(text);
    DatasetManifest m;
    m.schema = kv.get("schema");
    if (m.schema != "fhn-dataset-1") throw IoError("unsupported dataset schema: " + m.schema);
    m.cfg.seed = kv.get_u("seed");
    m.cfg.n_train = kv.get_u("n_train");
    m.cfg.n_val = kv.get_u("n_val");
    m.cfg.n_test = kv.get_u("n_test");
    m.cfg.features = feature_kind_from_string(kv.get("features"));
    m.cfg.noise = noise_kind_from_string(kv.get("noise"));
    m.cfg.labels = LabelLayout::from_blocks(kv.get("labels"), m.cfg.noise);
    m.cfg.sim.n_t = kv.get_u("n_t");
    m.cfg.sim.tau = kv.get_f("tau");
    m.cfg.sim.z = kv.get_f("z");
    m.cfg.sim.u0 = kv.get_f("u0");
    m.cfg.sim.v0 = kv.get_f("v0");
    for (std::size_t i = 0; i < 3; ++i) {
        std::string s = std::to_string(i);
        m.cfg.prior.mean[i] = kv.get_f("prior_mean" + s);
        m.cfg.prior.sigma[i] = kv.get_f("prior_sigma" + s);
        m.cfg.prior.lower[i] = kv.get_f("prior_lower" + s);
        m.cfg.prior.upper[i] = kv.get_f("prior_upper" + s);
    }
    m.cfg.like.sigma_noise_tau = kv.get_f("sigma_noise_tau");
    m.cfg.hessian_like.sigma_noise_tau = kv.get_f("hessian_sigma_noise_tau");
    m.cfg.shared_noise_pairs = kv.get_u("shared_noise_pairs");
    m.feature_width = kv.get_u("feature_width");
    m.label_width = kv.get_u("label_width");
    m.n_train_kept = kv.get_u("n_train_kept");
    m.n_val_kept = kv.get_u("n_val_kept");
    m.n_test_kept = kv.get_u("n_test_kept");
    m.dropped_negdef = kv.get_u("dropped_negative_definite");
    m.dropped_illcond = kv.get_u("dropped_ill_conditioned");
    m.dropped_failed = kv.get_u("dropped_failed");
    return m;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds,
                         const DatasetManifest& manifest) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "manifest", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write manifest under " + dir.string());
        os << manifest.to_text();
    }
    detail::write_f64(dir / "features.bin", ds.features);
    detail::write_f64(dir / "labels.bin", ds.labels);
    std::vector<double> meta;
    meta.reserve(ds.meta.size() * 8);
    for (const MetaRow& r : ds.meta) {
        meta.push_back(r.dyn.theta0);
        meta.push_back(r.dyn.theta1);
        meta.push_back(r.dyn.theta2);
        meta.push_back(r.noise.beta);
        meta.push_back(r.noise.rho);
        meta.push_back(r.noise.sigma);
        meta.push_back(static_cast<double>(static_cast<int>(r.verdict)));
        meta.push_back(static_cast<double>(static_cast<int>(r.split)));
    }
    detail::write_f64(dir / "meta.bin", meta);
}

inline std::pair<Dataset, DatasetManifest> load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest", std::ios::binary);
    if (!is) throw IoError("cannot read manifest under " + dir.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    DatasetManifest m = DatasetManifest::from_text(buf.str());
    Dataset ds;
    ds.feature_width = m.feature_width;
    ds.label_width = m.label_width;
    ds.n_train = m.n_train_kept;
    ds.n_val = m.n_val_kept;
    ds.n_test = m.n_test_kept;
    ds.features = detail::read_f64(dir / "features.bin");
    ds.labels = detail::read_f64(dir / "labels.bin");
    if (ds.features.size() != ds.n_rows() * ds.feature_width)
        throw IoError("features.bin size mismatch");
    if (ds.labels.size() != ds.n_rows() * ds.label_width)
        throw IoError("labels.bin size mismatch");
    std::vector<double> meta = detail::read_f64(dir / "meta.bin");
    if (meta.size() % 8 != 0) throw IoError("meta.bin size mismatch");
    for (std::size_t i = 0; i + 8 <= meta.size(); i += 8) {
        MetaRow r;
        r.dyn = DynParams{meta[i], meta[i + 1], meta[i + 2]};
        r.noise.kind = m.cfg.noise;
        r.noise.beta = meta[i + 3];
        r.noise.rho = meta[i + 4];
        r.noise.sigma = meta[i + 5];
        r.verdict = static_cast<SampleVerdict>(static_cast<int>(meta[i + 6]));
        r.split = static_cast<Split>(static_cast<int>(meta[i + 7]));
        ds.meta.push_back(r);
    }
    return {std::move(ds), std::move(m)};
}

} // namespace fhn
