// Command-line front end: dataset generation, training, evaluation, Hessian
// batches, an MCMC covariance check, and plot-data export. All numeric logic
// lives in the library; the CLI parses flags, wires configs, and writes
// provenance next to every output.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fhn/fhn.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "fhn 0.1.0";

std::size_t default_threads() {
    if (const char* env = std::getenv("FHN_THREADS")) {
        long v = std::atol(env);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return 1;
}

fhn::Vec3 parse_vec3(const std::string& s, const char* flag) {
    fhn::Vec3 v{};
    std::stringstream ss(s);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',') && i < 3) v[i++] = std::stod(item);
    if (i != 3) throw fhn::ConfigError(std::string(flag) + " expects three comma-separated values");
    return v;
}

void write_provenance(const fs::path& target, const std::string& command,
                      const std::vector<std::pair<std::string, std::string>>& opts) {
    fs::path path = fs::is_directory(target) ? target / "provenance.txt"
                                             : fs::path(target.string() + ".prov");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw fhn::IoError("cannot write provenance: " + path.string());
    os << "version = " << kVersion << "\n";
    os << "command = " << command << "\n";
    for (const auto& [k, v] : opts) os << k << " = " << v << "\n";
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------- generate

struct GenerateArgs {
    std::size_t n = 1000, n_val = 0, n_test = 0;
    std::string noise = "additive", features = "tsfc", labels = "dyn,noise";
    std::uint64_t seed = 0;
    std::string out;
    std::string from_manifest;
    std::size_t threads = default_threads();
    std::size_t shared_pairs = 100;
    bool fresh_noise = false;
    double sigma_noise_tau = 0.1, hessian_sigma_noise_tau = 10.0;
    double tau = 200.0, z = -0.4, u0 = -1.0, v0 = 1.0;
    std::size_t n_t = 2000;
    std::string prior_mean, prior_sigma;
};

int run_generate(const GenerateArgs& a) {
    fhn::GenerateConfig cfg;
    if (!a.from_manifest.empty()) {
        std::ifstream is(a.from_manifest);
        if (!is) throw fhn::IoError("cannot read manifest: " + a.from_manifest);
        std::ostringstream buf;
        buf << is.rdbuf();
        cfg = fhn::DatasetManifest::from_text(buf.str()).cfg;
        cfg.threads = a.threads;
    } else {
        cfg.n_train = a.n;
        cfg.n_val = a.n_val > 0 ? a.n_val : std::max<std::size_t>(1, a.n / 2);
        cfg.n_test = a.n_test > 0 ? a.n_test : std::max<std::size_t>(1, a.n);
        cfg.noise = fhn::noise_kind_from_string(a.noise);
        cfg.features = fhn::feature_kind_from_string(a.features);
        cfg.labels = fhn::LabelLayout::from_blocks(a.labels, cfg.noise);
        cfg.seed = a.seed;
        cfg.threads = a.threads;
        cfg.shared_noise_pairs = a.fresh_noise ? 0 : a.shared_pairs;
        cfg.like.sigma_noise_tau = a.sigma_noise_tau;
        cfg.hessian_like.sigma_noise_tau = a.hessian_sigma_noise_tau;
        cfg.sim.tau = a.tau;
        cfg.sim.n_t = a.n_t;
        cfg.sim.z = a.z;
        cfg.sim.u0 = a.u0;
        cfg.sim.v0 = a.v0;
        if (!a.prior_mean.empty()) cfg.prior.mean = parse_vec3(a.prior_mean, "--prior-mean");
        if (!a.prior_sigma.empty()) cfg.prior.sigma = parse_vec3(a.prior_sigma, "--prior-sigma");
    }
    auto [ds, manifest] = fhn::generate_dataset(cfg);
    fhn::save_dataset(a.out, ds, manifest);
    write_provenance(a.out, "generate",
                     {{"seed", std::to_string(cfg.seed)},
                      {"n_train", std::to_string(cfg.n_train)},
                      {"n_val", std::to_string(cfg.n_val)},
                      {"n_test", std::to_string(cfg.n_test)},
                      {"noise", fhn::to_string(cfg.noise)},
                      {"features", fhn::to_string(cfg.features)},
                      {"labels", cfg.labels.blocks()},
                      {"sigma_noise_tau", fmt(cfg.like.sigma_noise_tau)},
                      {"hessian_sigma_noise_tau", fmt(cfg.hessian_like.sigma_noise_tau)},
                      {"threads", std::to_string(cfg.threads)}});
    std::size_t requested = cfg.n_train + cfg.n_val + cfg.n_test;
    std::size_t kept = manifest.n_train_kept + manifest.n_val_kept + manifest.n_test_kept;
    std::printf("wrote %s: kept %zu / %zu samples (negdef %zu, illcond %zu, failed %zu)\n",
                a.out.c_str(), kept, requested, manifest.dropped_negdef,
                manifest.dropped_illcond, manifest.dropped_failed);
    return 0;
}

// ------------------------------------------------------------------------- train

struct TrainArgs {
    std::string arch = "cnn";
    std::size_t layers = 5, nf = 8, nu = 128;
    double dropout = 0.0;
    std::string data, out, history;
    double lr = 0.002;
    std::size_t batch = 32, epochs = 64;
    std::uint64_t seed = 0;
    std::size_t threads = default_threads();
};

int run_train(const TrainArgs& a) {
    auto [ds, manifest] = fhn::load_dataset(a.data);
    fhn::ScalerStats scaler = fhn::standardize_features(ds);

    fhn::ModelSpec spec;
    const std::size_t n_t = manifest.cfg.sim.n_t;
    const std::size_t p = ds.label_width;
    if (a.arch == "cnn") {
        std::size_t channels = manifest.cfg.features == fhn::FeatureKind::TSFC ? 2 : 1;
        spec = fhn::cnn_spec(a.layers, a.nf, n_t, channels, p);
    } else if (a.arch == "dnn") {
        spec = fhn::dnn_spec(a.layers, a.nu, ds.feature_width, p, a.dropout);
    } else {
        throw fhn::ConfigError("--arch must be cnn or dnn");
    }
    fhn::Model model(spec);
    model.init_weights(a.seed);
    std::printf("%s: %zu trainable parameters\n", a.arch.c_str(), model.parameter_count());

    fhn::TrainConfig tc;
    tc.learning_rate = a.lr;
    tc.batch_size = a.batch;
    tc.epochs = a.epochs;
    tc.seed = a.seed;
    tc.threads = a.threads;
    fhn::TrainHistory hist = fhn::train(model, ds, tc);

    fhn::ModelFile mf;
    mf.spec = spec;
    mf.weights = model.weights();
    mf.biases = model.biases();
    mf.scaler = scaler;
    mf.labels = manifest.cfg.labels;
    mf.features = manifest.cfg.features;
    mf.n_t = n_t;
    mf.seed = a.seed;
    mf.dataset_hash = fhn::fnv1a64(manifest.to_text());
    fhn::save_model(a.out, mf);

    fs::path hist_path = a.history.empty() ? fs::path(a.out + ".history.csv") : fs::path(a.history);
    std::ofstream os(hist_path, std::ios::trunc);
    if (!os) throw fhn::IoError("cannot write history: " + hist_path.string());
    os << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < hist.train_loss.size(); ++e)
        os << e + 1 << "," << fmt(hist.train_loss[e]) << "," << fmt(hist.val_loss[e]) << "\n";

    write_provenance(a.out, "train",
                     {{"arch", a.arch},
                      {"layers", std::to_string(a.layers)},
                      {"nf", std::to_string(a.nf)},
                      {"nu", std::to_string(a.nu)},
                      {"data", a.data},
                      {"epochs", std::to_string(a.epochs)},
                      {"lr", fmt(a.lr)},
                      {"batch", std::to_string(a.batch)},
                      {"seed", std::to_string(a.seed)},
                      {"parameters", std::to_string(model.parameter_count())}});
    std::printf("final train loss %.6g, val loss %.6g\n", hist.train_loss.back(),
                hist.val_loss.back());
    return 0;
}

// ---------------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string model, data, out, predictions, split = "test";
};

int run_evaluate(const EvaluateArgs& a) {
    auto [ds, manifest] = fhn::load_dataset(a.data);
    fhn::Split split = a.split == "test"  ? fhn::Split::Test
                       : a.split == "val" ? fhn::Split::Val
                                          : fhn::Split::Train;
    const std::size_t begin = ds.split_begin(split);
    const std::size_t count = ds.split_count(split);
    if (count == 0) throw fhn::ConfigError("selected split is empty");
    const std::size_t p = ds.label_width;

    fhn::Samples truths(count), preds(count);
    for (std::size_t i = 0; i < count; ++i)
        truths[i].assign(ds.label_row(begin + i), ds.label_row(begin + i) + p);

    fhn::LabelLayout layout = manifest.cfg.labels;
    std::size_t spd_count = 0;
    if (!a.predictions.empty()) {
        std::vector<double> rows = fhn::detail::read_f64(a.predictions);
        if (rows.size() != count * p)
            throw fhn::ConfigError("--predictions row count/width mismatch");
        for (std::size_t i = 0; i < count; ++i)
            preds[i].assign(rows.begin() + static_cast<std::ptrdiff_t>(i * p),
                            rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * p));
    } else {
        if (a.model.empty()) throw fhn::ConfigError("need --model or --predictions");
        fhn::ModelFile mf = fhn::load_model(a.model);
        fhn::Model model = mf.instantiate();
        layout = mf.labels;
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<double> row(ds.feature_row(begin + i),
                                    ds.feature_row(begin + i) + ds.feature_width);
            fhn::Prediction pr = fhn::predict(mf, model, row);
            preds[i] = pr.values;
            if (pr.has_cov) {
                fhn::EigenSym3 eig = fhn::eigen_sym3(pr.gamma_pred);
                if (eig.values[0] > 0.0) ++spd_count;
            }
        }
    }

    fhn::EvalReport report = fhn::evaluate_predictions(preds, truths, layout.component_names());
    fs::create_directories(a.out);
    {
        std::ofstream os(fs::path(a.out) / "report.txt", std::ios::trunc);
        os << report.to_text();
        if (layout.cov && a.predictions.empty())
            os << "spd_predictions = " << spd_count << " / " << count << "\n";
    }
    {
        std::ofstream os(fs::path(a.out) / "report.csv", std::ios::trunc);
        os << report.to_csv();
    }

    // Covariance entries mapped back to SPD space, shaped like the reference
    // tables (gamma_ij columns).
    if (layout.cov) {
        const std::size_t off = layout.cov_offset();
        fhn::Samples gt(count), gp(count);
        for (std::size_t i = 0; i < count; ++i) {
            fhn::TangentVec tt{}, tp{};
            for (std::size_t k = 0; k < 6; ++k) {
                tt[k] = truths[i][off + k];
                tp[k] = preds[i][off + k];
            }
            fhn::Mat3 gamma_t = fhn::exp_at_identity(fhn::devec(tt));
            fhn::Mat3 gamma_p = fhn::exp_at_identity(fhn::devec(tp));
            for (auto [r, c] : {std::pair<int, int>{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}}) {
                gt[i].push_back(gamma_t(r, c));
                gp[i].push_back(gamma_p(r, c));
            }
        }
        fhn::EvalReport gamma_report = fhn::evaluate_predictions(
            gp, gt, {"gamma00", "gamma01", "gamma02", "gamma11", "gamma12", "gamma22"});
        std::ofstream os(fs::path(a.out) / "gamma_report.csv", std::ios::trunc);
        os << gamma_report.to_csv();
    }

    write_provenance(a.out, "evaluate",
                     {{"model", a.model}, {"data", a.data}, {"split", a.split},
                      {"predictions", a.predictions}});
    std::printf("%s", report.to_text().c_str());
    return 0;
}

// ----------------------------------------------------------------------- hessian

struct HessianArgs {
    std::size_t n = 100;
    std::string noise = "additive";
    std::uint64_t seed = 0;
    std::string out;
    double sigma_noise_tau = 10.0;
    std::size_t threads = default_threads();
};

int run_hessian(const HessianArgs& a) {
    fhn::SimConfig sim;
    fhn::PriorConfig prior;
    fhn::LikelihoodConfig like{a.sigma_noise_tau};
    fhn::NoiseKind kind = fhn::noise_kind_from_string(a.noise);
    fhn::NoiseWindows windows;

    std::vector<fhn::Hessian3> hessians(a.n);
    std::vector<fhn::DynParams> params(a.n);
    std::vector<bool> failed(a.n, false);
    fhn::detail::run_parallel(a.n, a.threads, [&](std::size_t i) {
        fhn::RngStream rng(a.seed, 2 + i);
        try {
            params[i] = fhn::sample_prior(prior, rng);
            fhn::NoiseSpec spec;
            spec.kind = kind;
            if (kind != fhn::NoiseKind::Additive)
                spec.beta = rng.truncated_normal(windows.beta_mean, windows.beta_sd,
                                                 windows.beta_lo, windows.beta_hi);
            if (kind != fhn::NoiseKind::Intrinsic) {
                spec.rho = rng.truncated_normal(windows.rho_mean, windows.rho_sd, windows.rho_lo,
                                                windows.rho_hi);
                spec.sigma = rng.truncated_normal(windows.sigma_mean, windows.sigma_sd,
                                                  windows.sigma_lo, windows.sigma_hi);
            }
            if (kind == fhn::NoiseKind::Combined) {
                spec.sigma *= 0.5;
                spec.beta *= 0.5;
            }
            std::vector<double> obs = fhn::make_observation(params[i], spec, sim, rng);
            hessians[i] = fhn::assemble_hessian(params[i], obs, like, prior, sim);
        } catch (const fhn::NonFiniteError&) {
            failed[i] = true;
        }
    });

    std::vector<fhn::Hessian3> ok;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < a.n; ++i)
        if (!failed[i]) {
            ok.push_back(hessians[i]);
            idx.push_back(i);
        }
    std::vector<fhn::HessianQuality> quality = fhn::screen_hessians(ok);

    fs::create_directories(a.out);
    const double nan = std::nan("");
    std::vector<double> hrows(a.n * 9, nan), crows(a.n * 9, nan);
    std::size_t accepted = 0, negdef = 0, illcond = 0;
    std::ofstream qcsv(fs::path(a.out) / "quality.csv", std::ios::trunc);
    qcsv << "index,verdict,s1,s2,s3\n";
    std::size_t k = 0;
    for (std::size_t i = 0; i < a.n; ++i) {
        if (failed[i]) {
            qcsv << i << ",failed,nan,nan,nan\n";
            continue;
        }
        const fhn::HessianQuality& q = quality[k];
        for (std::size_t e = 0; e < 9; ++e) hrows[i * 9 + e] = ok[k].matrix.a[e];
        const char* verdict = "accepted";
        switch (q.verdict) {
            case fhn::HessianVerdict::Accepted: {
                fhn::PosteriorCov cov = fhn::posterior_covariance(ok[k]);
                for (std::size_t e = 0; e < 9; ++e) crows[i * 9 + e] = cov.gamma.a[e];
                ++accepted;
                break;
            }
            case fhn::HessianVerdict::NegativeDefinite:
                verdict = "negative_definite";
                ++negdef;
                break;
            case fhn::HessianVerdict::IllConditioned:
                verdict = "ill_conditioned";
                ++illcond;
                break;
        }
        qcsv << i << "," << verdict << "," << fmt(q.singular_values[0]) << ","
             << fmt(q.singular_values[1]) << "," << fmt(q.singular_values[2]) << "\n";
        ++k;
    }
    fhn::detail::write_f64(fs::path(a.out) / "hessians.bin", hrows);
    fhn::detail::write_f64(fs::path(a.out) / "covariances.bin", crows);
    double retained = static_cast<double>(accepted) / static_cast<double>(a.n);
    {
        std::ofstream os(fs::path(a.out) / "summary", std::ios::trunc);
        os << "n = " << a.n << "\naccepted = " << accepted << "\nnegative_definite = " << negdef
           << "\nill_conditioned = " << illcond
           << "\nfailed = " << (a.n - accepted - negdef - illcond)
           << "\nretained_fraction = " << fmt(retained) << "\n";
    }
    write_provenance(a.out, "hessian",
                     {{"n", std::to_string(a.n)},
                      {"noise", a.noise},
                      {"seed", std::to_string(a.seed)},
                      {"sigma_noise_tau", fmt(a.sigma_noise_tau)}});
    std::printf("accepted %zu / %zu (retained fraction %.3f)\n", accepted, a.n, retained);
    return 0;
}

// -------------------------------------------------------------------- mcmc-check

struct McmcArgs {
    std::string theta = "0.4,0.4,3.4";
    std::size_t n_samples = 100000;
    std::string proposal;
    bool proposal_from_hessian = false;
    double burn_in = 0.2;
    std::uint64_t seed = 0;
    bool clean = true;
    std::string noise = "additive";
    double sigma_noise_tau = 0.1;
    std::string out;
};

int run_mcmc_check(const McmcArgs& a) {
    fhn::SimConfig sim;
    fhn::PriorConfig prior;
    fhn::LikelihoodConfig like{a.sigma_noise_tau};
    fhn::DynParams theta = fhn::DynParams::from_vec(parse_vec3(a.theta, "--theta"));

    fhn::RngStream rng(a.seed, 77);
    std::vector<double> y_obs;
    if (a.clean) {
        y_obs = fhn::parameter_to_observation(theta, sim);
    } else {
        fhn::NoiseSpec spec = fhn::sample_noise_params(fhn::noise_kind_from_string(a.noise), rng);
        y_obs = fhn::make_observation(theta, spec, sim, rng);
    }

    fhn::Hessian3 hess = fhn::assemble_hessian(theta, y_obs, like, prior, sim);
    fhn::PosteriorCov laplace = fhn::posterior_covariance(hess);

    fhn::Vec3 scale;
    if (a.proposal_from_hessian || a.proposal.empty()) {
        // 2.38/sqrt(d) scaling on the Laplace marginals
        const double c = 2.38 / std::sqrt(3.0);
        for (std::size_t i = 0; i < 3; ++i) scale[i] = c * std::sqrt(laplace.gamma(i, i));
    } else {
        scale = parse_vec3(a.proposal, "--proposal");
    }

    fhn::MhResult res = fhn::mh_sample(theta, y_obs, like, prior, sim, a.n_samples, scale, rng);
    fhn::Mat3 chain_cov = fhn::chain_covariance(res.chain, a.burn_in);
    double rel = fhn::frobenius_norm(chain_cov - laplace.gamma) /
                 fhn::frobenius_norm(laplace.gamma);

    fs::create_directories(a.out);
    {
        std::ofstream os(fs::path(a.out) / "chain.csv", std::ios::trunc);
        os << "theta0,theta1,theta2\n";
        for (const fhn::Vec3& s : res.chain)
            os << fmt(s[0]) << "," << fmt(s[1]) << "," << fmt(s[2]) << "\n";
    }
    {
        std::ofstream os(fs::path(a.out) / "comparison.txt", std::ios::trunc);
        os << "acceptance_rate = " << fmt(res.acceptance_rate) << "\n";
        os << "frobenius_rel_diff = " << fmt(rel) << "\n";
        auto dump = [&](const char* name, const fhn::Mat3& m) {
            os << name << " =";
            for (double e : m.a) os << " " << fmt(e);
            os << "\n";
        };
        dump("laplace_covariance", laplace.gamma);
        dump("chain_covariance", chain_cov);
    }
    write_provenance(a.out, "mcmc-check",
                     {{"theta", a.theta},
                      {"n_samples", std::to_string(a.n_samples)},
                      {"seed", std::to_string(a.seed)},
                      {"clean", a.clean ? "true" : "false"},
                      {"sigma_noise_tau", fmt(a.sigma_noise_tau)}});
    std::printf("acceptance rate %.3f, Frobenius rel diff vs H^-1: %.4f\n", res.acceptance_rate,
                rel);
    return 0;
}

// ------------------------------------------------------------------ export-plots

struct ExportArgs {
    std::string what = "trajectory";
    std::string theta = "0.4,0.4,3.4";
    std::string out;
    // scatter
    std::string model, data, split = "test";
    // landscape
    std::string truth = "0.4,0.4,3.4";
    double theta2 = 3.4;
    std::size_t grid = 50;
    std::string range0 = "-0.2,1.0", range1 = "-0.4,1.2";
    bool clean = true;
    std::string noise = "additive";
    double sigma_noise_tau = 0.1;
    std::uint64_t seed = 0;
};

int run_export(const ExportArgs& a) {
    fhn::SimConfig sim;
    if (a.what == "trajectory") {
        fhn::DynParams theta = fhn::DynParams::from_vec(parse_vec3(a.theta, "--theta"));
        fhn::Trajectory traj = fhn::simulate_fhn(theta, sim);
        std::ofstream os(a.out, std::ios::trunc);
        if (!os) throw fhn::IoError("cannot write " + a.out);
        os << "t,u,v\n";
        for (std::size_t j = 0; j <= sim.n_t; ++j)
            os << fmt(static_cast<double>(j) * sim.h_t()) << "," << fmt(traj.u[j]) << ","
               << fmt(traj.v[j]) << "\n";
    } else if (a.what == "scatter") {
        auto [ds, manifest] = fhn::load_dataset(a.data);
        fhn::ModelFile mf = fhn::load_model(a.model);
        fhn::Model model = mf.instantiate();
        fhn::Split split = a.split == "test"  ? fhn::Split::Test
                           : a.split == "val" ? fhn::Split::Val
                                              : fhn::Split::Train;
        const std::size_t begin = ds.split_begin(split), count = ds.split_count(split);
        std::vector<std::string> names = mf.labels.component_names();
        std::ofstream os(a.out, std::ios::trunc);
        if (!os) throw fhn::IoError("cannot write " + a.out);
        for (std::size_t k = 0; k < names.size(); ++k)
            os << (k ? "," : "") << "truth_" << names[k] << ",pred_" << names[k];
        os << "\n";
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<double> row(ds.feature_row(begin + i),
                                    ds.feature_row(begin + i) + ds.feature_width);
            fhn::Prediction pr = fhn::predict(mf, model, row);
            for (std::size_t k = 0; k < names.size(); ++k)
                os << (k ? "," : "") << fmt(ds.label_row(begin + i)[k]) << ","
                   << fmt(pr.values[k]);
            os << "\n";
        }
    } else if (a.what == "landscape") {
        fhn::PriorConfig prior;
        fhn::LikelihoodConfig like{a.sigma_noise_tau};
        fhn::DynParams truth = fhn::DynParams::from_vec(parse_vec3(a.truth, "--truth"));
        fhn::RngStream rng(a.seed, 78);
        std::vector<double> y_obs;
        if (a.clean) {
            y_obs = fhn::parameter_to_observation(truth, sim);
        } else {
            fhn::NoiseSpec spec =
                fhn::sample_noise_params(fhn::noise_kind_from_string(a.noise), rng);
            y_obs = fhn::make_observation(truth, spec, sim, rng);
        }
        fhn::Vec3 r0 = {0, 0, 0}, r1 = {0, 0, 0};
        {
            auto v0 = parse_vec3(a.range0 + ",0", "--range0");
            auto v1 = parse_vec3(a.range1 + ",0", "--range1");
            r0 = v0;
            r1 = v1;
        }
        std::ofstream os(a.out, std::ios::trunc);
        if (!os) throw fhn::IoError("cannot write " + a.out);
        os << "theta0,theta1,phi\n";
        for (std::size_t i = 0; i < a.grid; ++i) {
            double t0 = r0[0] + (r0[1] - r0[0]) * static_cast<double>(i) /
                                    static_cast<double>(a.grid - 1);
            for (std::size_t j = 0; j < a.grid; ++j) {
                double t1 = r1[0] + (r1[1] - r1[0]) * static_cast<double>(j) /
                                        static_cast<double>(a.grid - 1);
                double phi;
                try {
                    phi = fhn::neg_log_posterior({t0, t1, a.theta2}, y_obs, like, prior, sim);
                } catch (const fhn::NonFiniteError&) {
                    phi = std::nan("");
                }
                os << fmt(t0) << "," << fmt(t1) << "," << fmt(phi) << "\n";
            }
        }
    } else {
        throw fhn::ConfigError("--what must be trajectory, scatter, or landscape");
    }
    write_provenance(a.out, "export-plots", {{"what", a.what}, {"out", a.out}});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FitzHugh-Nagumo inverse-estimation pipeline"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    GenerateArgs g;
    CLI::App* generate = app.add_subcommand("generate", "generate a dataset directory");
    generate->add_option("--n", g.n, "training samples");
    generate->add_option("--n-val", g.n_val, "validation samples (default n/2)");
    generate->add_option("--n-test", g.n_test, "test samples (default n)");
    generate->add_option("--noise", g.noise, "additive|intrinsic|combined");
    generate->add_option("--features", g.features, "ts|fc|tsfc");
    generate->add_option("--labels", g.labels, "blocks: dyn[,noise][,cov]");
    generate->add_option("--seed", g.seed, "rng seed");
    generate->add_option("--out", g.out, "output directory")->required();
    generate->add_option("--threads", g.threads, "worker threads");
    generate->add_option("--shared-pairs", g.shared_pairs, "shared (rho,sigma) pair count");
    generate->add_flag("--fresh-noise", g.fresh_noise, "fresh (rho,sigma) per sample");
    generate->add_option("--sigma-noise-tau", g.sigma_noise_tau, "objective noise scale");
    generate->add_option("--hessian-sigma-noise-tau", g.hessian_sigma_noise_tau,
                         "noise scale for covariance labels");
    generate->add_option("--tau", g.tau, "final time [ms]");
    generate->add_option("--nt", g.n_t, "time steps");
    generate->add_option("--z", g.z, "stimulus");
    generate->add_option("--u0", g.u0, "initial u");
    generate->add_option("--v0", g.v0, "initial v");
    generate->add_option("--prior-mean", g.prior_mean, "a,b,c");
    generate->add_option("--prior-sigma", g.prior_sigma, "a,b,c");
    generate->add_option("--from-manifest", g.from_manifest, "regenerate from a manifest");

    TrainArgs t;
    CLI::App* train = app.add_subcommand("train", "train a network on a dataset");
    train->add_option("--arch", t.arch, "cnn|dnn");
    train->add_option("--layers", t.layers, "conv blocks (cnn) or hidden layers (dnn)");
    train->add_option("--nf", t.nf, "cnn base filter count");
    train->add_option("--nu", t.nu, "dnn units per layer");
    train->add_option("--dropout", t.dropout, "dnn dropout rate");
    train->add_option("--data", t.data, "dataset directory")->required();
    train->add_option("--out", t.out, "model file")->required();
    train->add_option("--history", t.history, "loss history csv");
    train->add_option("--lr", t.lr, "learning rate");
    train->add_option("--batch", t.batch, "batch size");
    train->add_option("--epochs", t.epochs, "epochs");
    train->add_option("--seed", t.seed, "rng seed");
    train->add_option("--threads", t.threads, "worker threads");

    EvaluateArgs e;
    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate predictions on a split");
    evaluate->add_option("--model", e.model, "model file");
    evaluate->add_option("--data", e.data, "dataset directory")->required();
    evaluate->add_option("--out", e.out, "report directory")->required();
    evaluate->add_option("--predictions", e.predictions, "external predictions (f64 rows)");
    evaluate->add_option("--split", e.split, "test|val|train");

    HessianArgs h;
    CLI::App* hessian = app.add_subcommand("hessian", "per-sample Hessians and covariances");
    hessian->add_option("--n", h.n, "sample count");
    hessian->add_option("--noise", h.noise, "additive|intrinsic|combined");
    hessian->add_option("--seed", h.seed, "rng seed");
    hessian->add_option("--out", h.out, "output directory")->required();
    hessian->add_option("--sigma-noise-tau", h.sigma_noise_tau, "misfit noise scale");
    hessian->add_option("--threads", h.threads, "worker threads");

    McmcArgs m;
    CLI::App* mcmc = app.add_subcommand("mcmc-check", "chain vs Laplace covariance");
    mcmc->add_option("--theta", m.theta, "evaluation point a,b,c");
    mcmc->add_option("--n-samples", m.n_samples, "chain length");
    mcmc->add_option("--proposal", m.proposal, "proposal scales a,b,c");
    mcmc->add_flag("--proposal-from-hessian", m.proposal_from_hessian,
                   "scale proposals from the Laplace marginals");
    mcmc->add_option("--burn-in", m.burn_in, "burn-in fraction");
    mcmc->add_option("--seed", m.seed, "rng seed");
    mcmc->add_flag("--clean,!--noisy", m.clean, "noise-free observation");
    mcmc->add_option("--noise", m.noise, "noise kind when --noisy");
    mcmc->add_option("--sigma-noise-tau", m.sigma_noise_tau, "misfit noise scale");
    mcmc->add_option("--out", m.out, "output directory")->required();

    ExportArgs x;
    CLI::App* exp = app.add_subcommand("export-plots", "plot-ready tables");
    exp->add_option("--what", x.what, "trajectory|scatter|landscape");
    exp->add_option("--theta", x.theta, "trajectory parameters a,b,c");
    exp->add_option("--out", x.out, "output csv")->required();
    exp->add_option("--model", x.model, "model file (scatter)");
    exp->add_option("--data", x.data, "dataset directory (scatter)");
    exp->add_option("--split", x.split, "split (scatter)");
    exp->add_option("--truth", x.truth, "landscape truth a,b,c");
    exp->add_option("--theta2", x.theta2, "landscape fixed theta2");
    exp->add_option("--grid", x.grid, "landscape grid resolution");
    exp->add_option("--range0", x.range0, "landscape theta0 range lo,hi");
    exp->add_option("--range1", x.range1, "landscape theta1 range lo,hi");
    exp->add_flag("--clean,!--noisy", x.clean, "noise-free landscape observation");
    exp->add_option("--noise", x.noise, "noise kind when --noisy");
    exp->add_option("--sigma-noise-tau", x.sigma_noise_tau, "misfit noise scale");
    exp->add_option("--seed", x.seed, "rng seed");

    try {
        app.parse(argc, argv);
        if (*generate) return run_generate(g);
        if (*train) return run_train(t);
        if (*evaluate) return run_evaluate(e);
        if (*hessian) return run_hessian(h);
        if (*mcmc) return run_mcmc_check(m);
        if (*exp) return run_export(x);
        return 2;
    } catch (const CLI::ParseError& err) {
        int code = app.exit(err);
        return code == 0 ? 0 : 2;
    } catch (const fhn::ConfigError& err) {
        std::fprintf(stderr, "config error: %s\n", err.what());
        return 2;
    } catch (const fhn::NonFiniteError& err) {
        std::fprintf(stderr, "numeric failure: %s\n", err.what());
        return 3;
    } catch (const fhn::NotSpdError& err) {
        std::fprintf(stderr, "numeric failure: %s\n", err.what());
        return 3;
    } catch (const fhn::BugError& err) {
        std::fprintf(stderr, "numeric failure: %s\n", err.what());
        return 3;
    } catch (const fhn::IoError& err) {
        std::fprintf(stderr, "i/o error: %s\n", err.what());
        return 4;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 1;
    }
}
