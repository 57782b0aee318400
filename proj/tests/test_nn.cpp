#include <catch2/catch.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fhn/nn.hpp"

using namespace fhn;
namespace fs = std::filesystem;

namespace {

double loss_of(const Model& m, const std::vector<std::vector<double>>& batch,
               const std::vector<std::vector<double>>& targets) {
    std::vector<std::vector<double>> preds = forward(m, batch);
    double loss = 0.0;
    const double scale =
        1.0 / (static_cast<double>(batch.size()) * static_cast<double>(preds[0].size()));
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t k = 0; k < preds[b].size(); ++k) {
            double r = preds[b][k] - targets[b][k];
            loss += r * r * scale;
        }
    return loss;
}

} // namespace

TEST_CASE("swish values match the closed form", "[nn]") {
    REQUIRE(swish_scalar(0.0) == 0.0);
    REQUIRE(swish_scalar(1.0) == Approx(0.73105857863).epsilon(1e-10));
    std::vector<double> v = swish({0.0, 1.0, -2.0});
    REQUIRE(v[0] == 0.0);
    REQUIRE(v[1] == Approx(0.73105857863).epsilon(1e-10));
    REQUIRE(v[2] == Approx(-2.0 / (1.0 + std::exp(2.0))).epsilon(1e-12));
}

TEST_CASE("swish derivative matches central finite differences", "[nn]") {
    RngStream rng(91, 0);
    // single Dense(1) + Swish network: dL/dw carries the activation derivative
    ModelSpec spec;
    spec.input_len = 1;
    spec.input_channels = 1;
    spec.output_dim = 1;
    spec.layers = {LayerSpec::dense(1), LayerSpec::swish_act()};
    for (int trial = 0; trial < 10; ++trial) {
        Model m(spec);
        m.weights()[0][0] = rng.uniform(-3.0, 3.0);
        m.biases()[0][0] = 0.0;
        std::vector<std::vector<double>> x{{1.0}}, t{{0.0}};
        BackwardResult br = backward(m, x, t);
        const double eps = 1e-7;
        Model mp = m, mm = m;
        mp.weights()[0][0] += eps;
        mm.weights()[0][0] -= eps;
        double fd = (loss_of(mp, x, t) - loss_of(mm, x, t)) / (2.0 * eps);
        REQUIRE(br.w_grad[0][0] == Approx(fd).epsilon(1e-7));
    }
}

TEST_CASE("parameter counts reproduce the reference architectures", "[nn]") {
    // CNN, 5 conv blocks, n_f = 8, TSFC input (2 channels x 2000), p = 12
    REQUIRE(Model(cnn_spec(5, 8, 2000, 2, 12)).parameter_count() == 38516);
    // DNN, 12 hidden layers of 128 units, TSFC input 4000 flat, p = 11
    REQUIRE(Model(dnn_spec(12, 128, 4000, 11)).parameter_count() == 695179);
    // smallest and largest of the dense size grid (TS input, p = 3)
    REQUIRE(Model(dnn_spec(4, 4, 2000, 3)).parameter_count() == 8079);
    REQUIRE(Model(dnn_spec(24, 256, 2000, 3)).parameter_count() == 2026243);
    // smallest convolutional configuration (TS input, p = 3)
    REQUIRE(Model(cnn_spec(2, 2, 2000, 1, 3)).parameter_count() == 17095);
}

TEST_CASE("CNN length algebra stays positive over 5 blocks on 2000 inputs", "[nn]") {
    Model m(cnn_spec(5, 8, 2000, 1, 3));
    REQUIRE(m.shapes()[m.shapes().size() - 5].size() > 0); // flatten input
}

TEST_CASE("identity linear layer reproduces its input", "[nn]") {
    ModelSpec spec;
    spec.input_len = 4;
    spec.input_channels = 1;
    spec.output_dim = 4;
    spec.layers = {LayerSpec::linear_output(4)};
    Model m(spec);
    for (std::size_t i = 0; i < 4; ++i) m.weights()[0][i * 4 + i] = 1.0;
    std::vector<double> x{0.5, -1.0, 2.0, 3.5};
    REQUIRE(forward(m, {x})[0] == x);
}

TEST_CASE("shape mismatches are rejected", "[nn]") {
    Model m(dnn_spec(1, 4, 8, 2));
    REQUIRE_THROWS_AS(forward(m, {std::vector<double>(7, 0.0)}), ShapeMismatchError);
    ModelSpec bad;
    bad.input_len = 4;
    bad.input_channels = 1;
    bad.output_dim = 3;
    bad.layers = {LayerSpec::linear_output(2)};
    REQUIRE_THROWS_AS(Model(bad), ShapeMismatchError);
}

TEST_CASE("zero weights and zero targets give zero loss and gradients", "[nn]") {
    Model m(dnn_spec(2, 4, 6, 3));
    std::vector<std::vector<double>> x{{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}}, t{{0.0, 0.0, 0.0}};
    BackwardResult br = backward(m, x, t);
    REQUIRE(br.loss == 0.0);
    for (const auto& layer : br.w_grad)
        for (double g : layer) REQUIRE(g == 0.0);
}

TEST_CASE("loss of a perfect predictor is zero", "[nn]") {
    ModelSpec spec;
    spec.input_len = 3;
    spec.input_channels = 1;
    spec.output_dim = 3;
    spec.layers = {LayerSpec::linear_output(3)};
    Model m(spec);
    for (std::size_t i = 0; i < 3; ++i) m.weights()[0][i * 3 + i] = 1.0;
    std::vector<std::vector<double>> x{{1.0, 2.0, 3.0}};
    REQUIRE(backward(m, x, x).loss == 0.0);
}

TEST_CASE("every layer kind passes the finite-difference gradient check", "[nn]") {
    // input 8, conv stack then dense stack; covers Conv1D, Swish, AvgPool1D,
    // Flatten, Dense, Dropout (inactive path), LinearOutput
    ModelSpec spec;
    spec.input_len = 8;
    spec.input_channels = 1;
    spec.output_dim = 2;
    spec.layers = {LayerSpec::conv1d(2),      LayerSpec::swish_act(), LayerSpec::avg_pool(),
                   LayerSpec::flatten(),      LayerSpec::dense(5),    LayerSpec::swish_act(),
                   LayerSpec::dropout(0.0),   LayerSpec::linear_output(2)};
    Model m(spec);
    m.init_weights(17);
    RngStream rng(92, 0);
    std::vector<std::vector<double>> x(3, std::vector<double>(8));
    std::vector<std::vector<double>> t(3, std::vector<double>(2));
    for (auto& row : x)
        for (double& v : row) v = rng.normal();
    for (auto& row : t)
        for (double& v : row) v = rng.normal();

    BackwardResult br = backward(m, x, t);
    double worst = 0.0;
    for (std::size_t l = 0; l < m.weights().size(); ++l) {
        for (std::size_t i = 0; i < m.weights()[l].size(); ++i) {
            Model mp = m, mm = m;
            const double eps = 1e-6;
            mp.weights()[l][i] += eps;
            mm.weights()[l][i] -= eps;
            double fd = (loss_of(mp, x, t) - loss_of(mm, x, t)) / (2.0 * eps);
            double denom = std::max(std::fabs(fd), 1e-6);
            worst = std::max(worst, std::fabs(br.w_grad[l][i] - fd) / denom);
        }
        for (std::size_t i = 0; i < m.biases()[l].size(); ++i) {
            Model mp = m, mm = m;
            const double eps = 1e-6;
            mp.biases()[l][i] += eps;
            mm.biases()[l][i] -= eps;
            double fd = (loss_of(mp, x, t) - loss_of(mm, x, t)) / (2.0 * eps);
            double denom = std::max(std::fabs(fd), 1e-6);
            worst = std::max(worst, std::fabs(br.b_grad[l][i] - fd) / denom);
        }
    }
    INFO("worst relative gradient error " << worst);
    REQUIRE(worst <= 1e-5);
}

TEST_CASE("adam leaves weights alone on zero gradients", "[nn]") {
    Model m(dnn_spec(1, 3, 4, 2));
    m.init_weights(3);
    std::vector<std::vector<double>> before = m.weights();
    AdamState adam(m);
    std::vector<std::vector<double>> zero_w, zero_b;
    for (const auto& w : m.weights()) zero_w.emplace_back(w.size(), 0.0);
    for (const auto& b : m.biases()) zero_b.emplace_back(b.size(), 0.0);
    adam.step(m, zero_w, zero_b, 0.002);
    REQUIRE(m.weights() == before);
}

TEST_CASE("adam step magnitude approaches the learning rate on a constant gradient", "[nn]") {
    ModelSpec spec;
    spec.input_len = 1;
    spec.input_channels = 1;
    spec.output_dim = 1;
    spec.layers = {LayerSpec::linear_output(1)};
    Model m(spec);
    AdamState adam(m);
    std::vector<std::vector<double>> g_w{{0.37}}, g_b{{0.0}};
    const double lr = 0.002;
    double prev = m.weights()[0][0];
    double step = 0.0;
    for (int i = 0; i < 500; ++i) {
        adam.step(m, g_w, g_b, lr);
        step = prev - m.weights()[0][0];
        prev = m.weights()[0][0];
    }
    REQUIRE(step == Approx(lr).epsilon(1e-4));
}

TEST_CASE("training on 32 samples with batch 32 makes one optimizer step per epoch", "[nn]") {
    Dataset ds;
    ds.feature_width = 4;
    ds.label_width = 2;
    ds.n_train = 32;
    RngStream rng(93, 0);
    for (std::size_t i = 0; i < 32; ++i) {
        for (int k = 0; k < 4; ++k) ds.features.push_back(rng.normal());
        for (int k = 0; k < 2; ++k) ds.labels.push_back(rng.normal());
    }
    Model m(dnn_spec(1, 4, 4, 2));
    m.init_weights(0);
    TrainConfig tc;
    tc.epochs = 1;
    TrainHistory hist = train(m, ds, tc);
    REQUIRE(hist.optimizer_steps == 1);
    REQUIRE(hist.train_loss.size() == 1);
}

TEST_CASE("training reduces the loss and is seed-deterministic", "[nn]") {
    RngStream rng(94, 0);
    Dataset ds;
    ds.feature_width = 6;
    ds.label_width = 2;
    ds.n_train = 64;
    ds.n_val = 16;
    for (std::size_t i = 0; i < 80; ++i) {
        std::vector<double> x(6);
        for (double& v : x) v = rng.normal();
        ds.features.insert(ds.features.end(), x.begin(), x.end());
        ds.labels.push_back(0.5 * x[0] - 0.25 * x[3]);
        ds.labels.push_back(x[1] * 0.1 + 0.3);
    }
    for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
        Model m(dnn_spec(2, 16, 6, 2));
        m.init_weights(seed);
        TrainConfig tc;
        tc.epochs = 64;
        tc.seed = seed;
        TrainHistory hist = train(m, ds, tc);
        REQUIRE(hist.train_loss.back() < hist.train_loss.front());
    }
    // identical seeds give identical histories and weights
    Model m1(dnn_spec(2, 16, 6, 2)), m2(dnn_spec(2, 16, 6, 2));
    m1.init_weights(7);
    m2.init_weights(7);
    TrainConfig tc;
    tc.epochs = 8;
    tc.seed = 7;
    TrainHistory h1 = train(m1, ds, tc);
    TrainHistory h2 = train(m2, ds, tc);
    REQUIRE(h1.train_loss == h2.train_loss);
    REQUIRE(m1.weights() == m2.weights());
}

TEST_CASE("training is invariant to the worker-thread count", "[nn]") {
    RngStream rng(95, 0);
    Dataset ds;
    ds.feature_width = 8;
    ds.label_width = 2;
    ds.n_train = 48;
    for (std::size_t i = 0; i < 48; ++i) {
        for (int k = 0; k < 8; ++k) ds.features.push_back(rng.normal());
        ds.labels.push_back(rng.normal());
        ds.labels.push_back(rng.normal());
    }
    Model m1(dnn_spec(2, 8, 8, 2)), m2(dnn_spec(2, 8, 8, 2));
    m1.init_weights(5);
    m2.init_weights(5);
    TrainConfig tc;
    tc.epochs = 6;
    tc.seed = 5;
    tc.threads = 1;
    train(m1, ds, tc);
    tc.threads = 2;
    train(m2, ds, tc);
    REQUIRE(m1.weights() == m2.weights());
    REQUIRE(m1.biases() == m2.biases());
}

TEST_CASE("a tiny network overfits four samples", "[nn]") {
    RngStream rng(96, 0);
    Dataset ds;
    ds.feature_width = 5;
    ds.label_width = 2;
    ds.n_train = 4;
    for (std::size_t i = 0; i < 4; ++i) {
        for (int k = 0; k < 5; ++k) ds.features.push_back(rng.normal());
        ds.labels.push_back(rng.uniform(0.0, 1.0));
        ds.labels.push_back(rng.uniform(0.0, 1.0));
    }
    Model m(dnn_spec(2, 32, 5, 2));
    m.init_weights(1);
    TrainConfig tc;
    tc.epochs = 2000;
    tc.batch_size = 4;
    tc.learning_rate = 0.01;
    train(m, ds, tc);
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> x(ds.feature_row(i), ds.feature_row(i) + 5);
        std::vector<double> pred = forward(m, {x})[0];
        REQUIRE(pred[0] == Approx(ds.label_row(i)[0]).margin(1e-2));
        REQUIRE(pred[1] == Approx(ds.label_row(i)[1]).margin(1e-2));
    }
}

TEST_CASE("model files round-trip byte-identically", "[nn]") {
    ModelFile mf;
    mf.spec = cnn_spec(2, 2, 40, 2, 5);
    Model m(mf.spec);
    m.init_weights(11);
    mf.weights = m.weights();
    mf.biases = m.biases();
    mf.scaler.mean.assign(80, 0.25);
    mf.scaler.stddev.assign(80, 2.0);
    mf.labels = LabelLayout::from_blocks("dyn,noise", NoiseKind::Additive);
    mf.features = FeatureKind::TSFC;
    mf.n_t = 40;
    mf.seed = 11;
    mf.dataset_hash = 0xdeadbeef12345678ULL;

    fs::path p1 = fs::temp_directory_path() / "fhn_model_a.fhn";
    fs::path p2 = fs::temp_directory_path() / "fhn_model_b.fhn";
    save_model(p1, mf);
    ModelFile loaded = load_model(p1);
    REQUIRE(loaded.weights == mf.weights);
    REQUIRE(loaded.biases == mf.biases);
    REQUIRE(loaded.scaler.mean == mf.scaler.mean);
    REQUIRE(loaded.labels.blocks() == mf.labels.blocks());
    REQUIRE(loaded.dataset_hash == mf.dataset_hash);
    save_model(p2, loaded);
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::ostringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    REQUIRE(sa.str() == sb.str());
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("predictions reconstruct SPD covariances and split by layout", "[nn]") {
    LabelLayout layout = LabelLayout::from_blocks("dyn,noise,cov", NoiseKind::Additive);
    REQUIRE(layout.p() == 11);
    ModelFile mf;
    mf.spec = dnn_spec(1, 8, 10, layout.p());
    Model m(mf.spec);
    m.init_weights(21);
    mf.weights = m.weights();
    mf.biases = m.biases();
    mf.scaler.mean.assign(10, 0.0);
    mf.scaler.stddev.assign(10, 1.0);
    mf.labels = layout;
    mf.features = FeatureKind::TS;
    mf.n_t = 10;

    RngStream rng(97, 0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(10);
        for (double& v : x) v = rng.normal();
        Prediction pred = predict(mf, x);
        REQUIRE(pred.values.size() == 11);
        REQUIRE(pred.has_cov);
        EigenSym3 eig = eigen_sym3(pred.gamma_pred);
        REQUIRE(eig.values[0] > 0.0);
    }
}
