// Acceptance run: one PASS/FAIL line per criterion, with the measured numbers
// and runtime. Exit status is non-zero if any gating criterion fails.
//
//   acceptance            all criteria
//   acceptance 3 5        only criteria 3 and 5

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fastbci/cli.hpp"
#include "fastbci/edf.hpp"
#include "fastbci/synthetic.hpp"
#include "grad_check.hpp"

using namespace fastbci;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    enum Status { pass, fail, skip } status = fail;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::size_t worker_count() { return std::max<std::size_t>(2, default_thread_count()); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("fastbci_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.normal(0.0, scale);
    }
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor weighted_sum(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
    using testing::check_gradients;
    double worst = 0.0;
    std::size_t probes = 0;
    std::string worst_case;
    auto record = [&](const std::string& name, const testing::GradCheckResult& r) {
        probes += r.checked;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_case = name;
        }
    };
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng(1000 + static_cast<std::uint64_t>(seed));
        {
            Tensor x = random_tensor({2, 2, 3, 7}, rng), k = random_tensor({3, 2, 2, 4}, rng);
            Tensor r = random_tensor({2, 3, 3, 7}, rng, false);
            record("conv2d", check_gradients([&] { return weighted_sum(conv2d(x, k, Padding::same), r); }, {x, k}));
        }
        {
            Tensor x = random_tensor({2, 3, 4, 6}, rng), kd = random_tensor({6, 1, 4, 1}, rng);
            Tensor r = random_tensor({2, 6, 1, 6}, rng, false);
            record("depthwise_conv2d",
                   check_gradients([&] { return weighted_sum(depthwise_conv2d(x, kd, Padding::valid, 2), r); }, {x, kd}));
            Tensor ks = random_tensor({3, 1, 1, 3}, rng), kp = random_tensor({5, 3, 1, 1}, rng);
            Tensor r2 = random_tensor({2, 5, 4, 6}, rng, false);
            record("separable_conv2d", check_gradients(
                                           [&] { return weighted_sum(separable_conv2d(x, ks, kp, Padding::same), r2); },
                                           {x, ks, kp}));
        }
        {
            Tensor x = random_tensor({2, 2, 3, 9}, rng);
            Tensor r = random_tensor({2, 2, 1, 2}, rng, false);
            record("avg_pool2d", check_gradients([&] { return weighted_sum(avg_pool2d(x, {3, 4}, {1, 4}), r); }, {x}));
            Tensor r2 = random_tensor({2, 2, 3, 9}, rng, false);
            record("elu", check_gradients([&] { return weighted_sum(elu(x), r2); }, {x}));
            Tensor r3 = random_tensor({2, 54}, rng, false);
            record("flatten", check_gradients([&] { return weighted_sum(flatten(x), r3); }, {x}));
            Tensor r4 = random_tensor({6, 18}, rng, false);
            record("reshape", check_gradients([&] { return weighted_sum(reshape(x, {6, 18}), r4); }, {x}));
        }
        {
            Tensor d = random_tensor({3, 5}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
            Tensor r = random_tensor({3, 4}, rng, false);
            record("dense", check_gradients([&] { return weighted_sum(dense(d, w, b), r); }, {d, w, b}));
        }
        {
            Tensor x = random_tensor({3, 2, 3, 4}, rng), g = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 3, 4}, rng);
            Tensor r = random_tensor({3, 2, 3, 4}, rng, false);
            record("layer_norm", check_gradients([&] { return weighted_sum(layer_norm(x, g, b), r); }, {x, g, b}));
        }
        {
            Tensor x = random_tensor({4, 3, 2, 3}, rng), g = random_tensor({3}, rng), b = random_tensor({3}, rng);
            Tensor rm = random_tensor({3}, rng, false), rv = Tensor::full({3}, 1.7);
            Tensor r = random_tensor({4, 3, 2, 3}, rng, false);
            record("batch_norm(train)",
                   check_gradients([&] { return weighted_sum(batch_norm(x, g, b, rm, rv, {.training = true}), r); }, {x, g, b}));
            record("batch_norm(eval)",
                   check_gradients([&] { return weighted_sum(batch_norm(x, g, b, rm, rv, {.training = false}), r); }, {x, g, b}));
        }
        {
            Tensor x = random_tensor({3, 7}, rng);
            Tensor r = random_tensor({3, 7}, rng, false);
            record("dropout", check_gradients(
                                  [&] {
                                      Rng mask(42);
                                      return weighted_sum(dropout(x, 0.3, true, mask), r);
                                  },
                                  {x}));
            Tensor y = random_tensor({3, 7}, rng);
            record("add/mul/square", check_gradients([&] { return weighted_sum(square(add(mul(x, y), x)), r); }, {x, y}));
            record("affine/mean", check_gradients([&] { return mean(affine(mul(x, r), -1.5, 0.25)); }, {x}));
        }
        {
            Tensor z = random_tensor({5, 3}, rng, true, 2.0);
            std::vector<int> labels;
            for (int i = 0; i < 5; ++i) {
                labels.push_back(static_cast<int>(rng.below(3)));
            }
            record("softmax_cross_entropy", check_gradients([&] { return softmax_cross_entropy(z, labels); }, {z}));
        }
        // Whole downsized model, both normalizations, dropout on with a fixed mask.
        for (NormKind kind : {NormKind::layer, NormKind::batch}) {
            ClassifierSpec spec;
            spec.channels = 8;
            spec.time_points = 33;
            spec.norm = kind;
            Rng mrng(900 + static_cast<std::uint64_t>(seed));
            ParamSet p = build_classifier(spec, mrng);
            for (auto& [name, t] : p.params()) {
                if (name.ends_with(".gain") || name.ends_with(".bias")) {
                    for (double& v : t.mutable_data()) {
                        v += mrng.normal(0.0, 0.3);
                    }
                }
            }
            Tensor x = random_tensor({4, 8, 33}, mrng, false);
            const std::vector<int> labels{0, 1, 1, 0};
            std::vector<Tensor> inputs;
            for (auto& [name, t] : p.params()) {
                inputs.push_back(t);
            }
            record("model(" + std::string(to_string(kind)) + ")", check_gradients(
                                                                      [&] {
                                                                          Rng drop(77);
                                                                          return softmax_cross_entropy(
                                                                              forward_logits(spec, p, x, true, drop), labels);
                                                                      },
                                                                      inputs, 1e-5, 64));
        }
    }
    return {worst < 1e-4 ? Outcome::pass : Outcome::fail,
            fmt("max rel error %.2e (worst: %s) over %zu probes, 5 seeds; limit 1e-4", worst, worst_case.c_str(), probes)};
}

// ---------------------------------------------------------------------------
// 2. Architecture

Outcome architecture() {
    const ClassifierSpec spec;
    Rng rng(3);
    ParamSet p = build_classifier(spec, rng);
    Tensor batch = random_tensor({1, 64, 321}, rng, false);
    // Walk the stack op by op and record actual tensor shapes.
    std::vector<Shape> seen;
    Tensor x = reshape(batch, {1, 1, 64, 321});
    x = conv2d(x, p.at("temporal_conv.weight"), Padding::same);
    seen.push_back(x.shape());
    x = layer_norm(x, p.at("norm1.gain"), p.at("norm1.bias"));
    x = depthwise_conv2d(x, p.at("depthwise_conv.weight"), Padding::valid, 2);
    seen.push_back(x.shape());
    x = avg_pool2d(elu(layer_norm(x, p.at("norm2.gain"), p.at("norm2.bias"))), {1, 4}, {1, 4});
    seen.push_back(x.shape());
    x = separable_conv2d(x, p.at("separable_conv.depthwise"), p.at("separable_conv.pointwise"), Padding::same);
    seen.push_back(x.shape());
    x = avg_pool2d(elu(layer_norm(x, p.at("norm3.gain"), p.at("norm3.bias"))), {1, 8}, {1, 8});
    seen.push_back(x.shape());
    x = flatten(x);
    const std::vector<Shape> expected{{1, 8, 64, 321}, {1, 16, 1, 321}, {1, 16, 1, 80}, {1, 16, 1, 80}, {1, 16, 1, 10}};
    const ShapeTrace t = shape_trace(spec);
    const std::vector<Shape> traced{t.temporal, t.depthwise, t.pooled1, t.separable, t.pooled2};
    bool ok = seen == expected && x.shape() == Shape{1, 160} && t.flatten == 160 && t.logits == 2;
    for (std::size_t i = 0; i < traced.size(); ++i) {
        Shape with_batch{1};
        with_batch.insert(with_batch.end(), traced[i].begin(), traced[i].end());
        ok = ok && with_batch == expected[i];
    }
    const Tensor logits = forward_logits(spec, p, batch, false, rng);
    ok = ok && logits.shape() == Shape{1, 2} && p.at("classifier.weight").shape() == Shape{2, 160};
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("(8,64,321) -> (16,1,321) -> (16,1,80) -> (16,1,80) -> (16,1,10) -> %zu -> %zu logits", x.dim(1),
                logits.dim(1))};
}

// ---------------------------------------------------------------------------
// 3. FOMAML oracle

ParamSet vector_params(std::vector<double> v) {
    ParamSet p;
    const std::size_t n = v.size();
    p.add("theta", Tensor({n}, std::move(v), true));
    return p;
}

// sum_j w_j (theta_j - t_j)^2
std::function<Tensor(ParamSet&)> quadratic(std::vector<double> w, std::vector<double> t) {
    return [w, t](ParamSet& p) {
        std::vector<double> neg(t.size());
        std::ranges::transform(t, neg.begin(), [](double v) { return -v; });
        const Tensor tw({w.size()}, w), tn({neg.size()}, neg);
        return sum(mul(tw, square(add(p.at("theta"), tn))));
    };
}

Outcome fomaml_oracle() {
    bool ok = true;
    // Inner loop, scalar: (theta - 5)^2, theta 1, alpha 0.1.
    const ParamSet theta = vector_params({1.0});
    double hand = 1.0;
    std::string inner;
    for (std::size_t steps = 1; steps <= 3; ++steps) {
        hand = hand - 0.1 * (2.0 * (hand - 5.0));
        const double got = inner_adapt(theta, quadratic({1.0}, {5.0}), 0.1, steps).at("theta").data()[0];
        ok = ok && got == hand;
        inner += fmt("%s%.17g", steps == 1 ? "" : ", ", got);
    }
    ok = ok && std::abs(inner_adapt(theta, quadratic({1.0}, {5.0}), 0.1, 1).at("theta").data()[0] - 1.8) < 1e-15;

    // Meta step, plain gradient meta-optimizer, closed form per coordinate.
    struct Task {
        std::vector<double> ws, ts, wq, tq;
    };
    double max_err = 0.0;
    const std::vector<std::vector<Task>> problems{
        {{{1.0}, {5.0}, {0.5}, {4.0}}},
        {{{2.0}, {1.0}, {1.0}, {-1.0}}, {{0.5}, {-3.0}, {3.0}, {2.0}}},
        {{{1.0, 2.0}, {5.0, -1.0}, {0.5, 1.5}, {4.0, 0.5}},
         {{3.0, 0.25}, {-2.0, 3.0}, {2.0, 1.0}, {-1.0, 2.5}},
         {{0.7, 1.1}, {0.3, 0.9}, {1.3, 0.4}, {2.2, -0.6}}},
    };
    for (const auto& tasks : problems) {
        const std::size_t dim = tasks[0].ws.size();
        for (std::size_t steps : {1u, 3u}) {
            const double alpha = 0.05, beta = 0.3;
            std::vector<double> theta0(dim);
            for (std::size_t j = 0; j < dim; ++j) {
                theta0[j] = 0.4 - 1.1 * static_cast<double>(j);
            }
            // phi after n steps of (1 - 2 alpha w) contraction toward t, then
            // theta' = theta - beta * mean_i 2 wq (phi_i - tq).
            std::vector<double> expected = theta0;
            for (const auto& q : tasks) {
                for (std::size_t j = 0; j < dim; ++j) {
                    const double c = std::pow(1.0 - 2.0 * alpha * q.ws[j], static_cast<double>(steps));
                    const double phi = q.ts[j] + c * (theta0[j] - q.ts[j]);
                    expected[j] -= beta * 2.0 * q.wq[j] * (phi - q.tq[j]) / static_cast<double>(tasks.size());
                }
            }
            ParamSet th = vector_params(theta0);
            std::vector<MetaTask> mt;
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                mt.push_back({static_cast<int>(i), quadratic(tasks[i].ws, tasks[i].ts), quadratic(tasks[i].wq, tasks[i].tq)});
            }
            Optimizer gd(OptimizerKind::gradient_descent, beta);
            fomaml_meta_step(th, mt, alpha, steps, gd);
            for (std::size_t j = 0; j < dim; ++j) {
                max_err = std::max(max_err, std::abs(th.at("theta").data()[j] - expected[j]));
            }
        }
    }
    ok = ok && max_err < 1e-9;
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("inner_adapt theta=1, alpha=0.1 -> %s (bit-equal to hand iteration); meta-step max abs error %.2e "
                "(limit 1e-9)",
                inner.c_str(), max_err)};
}

// ---------------------------------------------------------------------------
// 4. Filter

// Steady-state gain of a sinusoid through the filter, in dB, from RMS ratios
// away from the zero-padded edges.
double sinusoid_gain_db(const FirFilter& f, double hz) {
    RawRecording r;
    r.sampling_rate = 160.0;
    r.samples = 4800;
    r.channel_labels = {"Cz"};
    r.signal.resize(r.samples);
    for (std::size_t i = 0; i < r.samples; ++i) {
        r.signal[i] = std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / 160.0 + 0.3);
    }
    const RawRecording out = filter_apply(r, f);
    double in = 0.0, o = 0.0;
    for (std::size_t i = 800; i < 4000; ++i) {
        in += r.signal[i] * r.signal[i];
        o += out.signal[i] * out.signal[i];
    }
    return 10.0 * std::log10(o / in);
}

Outcome filter_conformance() {
    const FirFilter stop = design_fir(FilterMode::band_stop, 7, 30, 160, 2);
    const FirFilter pass = design_fir(FilterMode::band_pass, 7, 30, 160, 2);
    const double s15 = sinusoid_gain_db(stop, 15), s2 = sinusoid_gain_db(stop, 2), s45 = sinusoid_gain_db(stop, 45);
    const double p15 = sinusoid_gain_db(pass, 15), p2 = sinusoid_gain_db(pass, 2), p45 = sinusoid_gain_db(pass, 45);
    // The analytic response must agree with the measured one.
    double disagreement = 0.0;
    for (auto [f, hz, measured] : {std::tuple{&stop, 2.0, s2}, {&stop, 45.0, s45}, {&pass, 15.0, p15}}) {
        disagreement = std::max(disagreement, std::abs(magnitude_db(f->taps, hz, 160) - measured));
    }
    const bool ok = s15 <= -30 && std::abs(s2) <= 1 && std::abs(s45) <= 1 && p15 >= -1 && p15 <= 1 && p2 <= -30 &&
                    p45 <= -30 && disagreement < 0.05;
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("band-stop: 15 Hz %.1f dB, 2 Hz %+.3f dB, 45 Hz %+.3f dB; band-pass: 15 Hz %+.3f dB, 2 Hz %.1f dB, "
                "45 Hz %.1f dB (%zu Hamming taps)",
                s15, s2, s45, p15, p2, p45, stop.taps.size())};
}

// ---------------------------------------------------------------------------
// 5. Synthetic domain shift

// Per-filter variance of the first normalization layer's input on `trials`,
// divided by the running variance the batch-norm model carries.
std::vector<double> norm1_variance_ratio(const ClassifierSpec& spec, const ParamSet& params,
                                         const std::vector<const Trial*>& trials) {
    const LabeledBatch b = make_batch(trials, spec.channels, spec.time_points);
    const std::size_t B = b.size();
    const Tensor y = conv2d(reshape(b.inputs, {B, 1, spec.channels, spec.time_points}),
                            params.at("temporal_conv.weight"), Padding::same);
    const std::size_t F = y.dim(1), inner = y.dim(2) * y.dim(3);
    std::vector<double> ratio(F);
    for (std::size_t f = 0; f < F; ++f) {
        double s = 0.0, ss = 0.0;
        for (std::size_t n = 0; n < B; ++n) {
            for (std::size_t i = 0; i < inner; ++i) {
                const double v = y.data()[(n * F + f) * inner + i];
                s += v;
                ss += v * v;
            }
        }
        const double count = static_cast<double>(B * inner);
        const double var = ss / count - (s / count) * (s / count);
        ratio[f] = var / params.at("norm1.running_var").data()[f];
    }
    return ratio;
}

Outcome domain_shift_study() {
    const SyntheticConfig cfg = domain_shift_config(7);
    const TrialStore store = synthetic_cohort(cfg);
    const ActivityData data = store.activity(1);
    const std::size_t threads = default_thread_count();
    double it10[2] = {0, 0}, it0[2] = {0, 0};
    double test_ratio_max = 0.0, train_ratio_min = std::numeric_limits<double>::infinity();
    for (NormKind kind : {NormKind::batch, NormKind::layer}) {
        ClassifierSpec spec;
        spec.channels = cfg.channels;
        spec.time_points = cfg.time_points;
        spec.norm = kind;
        TransferConfig tc;
        tc.batch_size = 32;
        tc.max_epochs = 15;
        PretrainOptions po;
        po.seed = 11;
        po.threads = threads;
        const PretrainResult res = transfer_pretrain(spec, data, cfg.train_subjects, cfg.validation_subjects, tc, po);
        const FinetuneSpec ft;  // Adam 0.001, 10 steps, 10 + 11 per class
        const AdaptationReport rep =
            evaluate_fast_adaptability(spec, res.params, data, cfg.test_subjects, ft, {50, 5, threads});
        const int k = kind == NormKind::batch ? 0 : 1;
        it0[k] = rep.mean_test.front();
        it10[k] = rep.mean_test.back();
        if (kind == NormKind::batch) {
            for (int s : cfg.test_subjects) {
                std::vector<const Trial*> trials;
                for (const auto& t : data.subject(s).trials) {
                    trials.push_back(&t);
                }
                for (double r : norm1_variance_ratio(spec, res.params, trials)) {
                    test_ratio_max = std::max(test_ratio_max, r);
                }
            }
            for (int s : cfg.train_subjects) {
                std::vector<const Trial*> trials;
                for (const auto& t : data.subject(s).trials) {
                    trials.push_back(&t);
                }
                for (double r : norm1_variance_ratio(spec, res.params, trials)) {
                    train_ratio_min = std::min(train_ratio_min, r);
                }
            }
        }
    }
    const double gap = it10[1] - it10[0];
    const bool ok = gap >= 0.05 && it10[1] >= 0.85 && test_ratio_max < 0.1;
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("iteration 10 test acc: layer %.1f%%, batch %.1f%% (gap %.1f points, need >= 5; layer needs >= 85%%); "
                "iteration 0: layer %.1f%%, batch %.1f%%; test-subject batch variance / running variance <= %.4f "
                "(training subjects >= %.2f)",
                100 * it10[1], 100 * it10[0], 100 * gap, 100 * it0[1], 100 * it0[0], test_ratio_max, train_ratio_min)};
}

// ---------------------------------------------------------------------------
// 6. Protocol invariants

int run_cli_process(const std::vector<std::string>& args, const fs::path& log) {
    std::string cmd = "'" FASTBCI_CLI_PATH "'";
    for (const auto& a : args) {
        cmd += " '" + a + "'";
    }
    cmd += " >>'" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome protocol_invariants() {
    const fs::path dir = scratch("protocol");
    SyntheticConfig c;
    c.train_subjects = {1, 2, 3, 4, 5, 6};
    c.validation_subjects = {88, 89};
    c.test_subjects = {99, 100, 101};
    c.time_points = 33;
    c.trials_per_class = 22;
    c.noise_sd = 0.3;
    c.seed = 21;
    write_archive(dir / "epochs", synthetic_cohort(c));
    std::ofstream(dir / "config.json") << R"({"pretrain": {"transfer": {"max_epochs": 3}}})";
    const fs::path log = dir / "cli.log";
    const std::string model = (dir / "model.fabm").string();
    std::string problems;
    if (run_cli_process({"pretrain", "--strategy", "transfer", "--activity", "1", "--norm", "layer", "--data",
                         (dir / "epochs").string(), "--config", (dir / "config.json").string(), "--out", model},
                        log) != 0) {
        return {Outcome::fail, "pretrain failed, see " + log.string()};
    }
    const std::string model_bytes = slurp(model);
    const std::string n = std::to_string(worker_count());
    auto adapt_args = [&](const std::string& out, const std::string& threads) {
        return std::vector<std::string>{"adapt", "--model", model, "--subjects", "99-101", "--steps", "10", "--runs",
                                        "100", "--seed", "1234", "--data", (dir / "epochs").string(), "--out", out,
                                        "--threads", threads};
    };
    const auto a = (dir / "serial_a.csv").string(), b = (dir / "serial_b.csv").string(),
               p = (dir / "parallel.csv").string();
    const bool ran = run_cli_process(adapt_args(a, "1"), log) == 0 && run_cli_process(adapt_args(b, "1"), log) == 0 &&
                     run_cli_process(adapt_args(p, n), log) == 0;
    if (!ran) {
        return {Outcome::fail, "adapt failed, see " + log.string()};
    }
    const bool two_runs = slurp(a) == slurp(b) && slurp(a + ".meta.json") == slurp(b + ".meta.json");
    const bool threads_same = slurp(a) == slurp(p) && slurp(a + ".meta.json") == slurp(p + ".meta.json");
    const auto series = read_report_csv(a);
    const bool length_ok = series.size() == 1 && series[0].points() == 11;
    const bool model_same = slurp(model) == model_bytes;

    // In-process: the library call leaves the pretrained parameters untouched.
    Model m = load_model(model);
    const ParamSet before = m.params.clone();
    const Manifest manifest = read_manifest(dir / "epochs");
    const ActivityData target = read_activity(dir / "epochs", manifest, 1);
    const std::vector<int> subjects{99, 100, 101};
    for (NormKind kind : {NormKind::layer, NormKind::batch}) {
        ClassifierSpec spec = m.spec;
        spec.norm = kind;
        Rng init(5);
        const ParamSet params = kind == m.spec.norm ? m.params.clone() : build_classifier(spec, init);
        const ParamSet snapshot = params.clone();
        const auto rep = evaluate_fast_adaptability(spec, params, target, subjects, FinetuneSpec{}, {20, 9, 3});
        if (!params.identical_to(snapshot) || rep.points() != 11) {
            problems += " in-process evaluation changed parameters or curve length (" + std::string(to_string(kind)) + ");";
        }
    }
    const bool params_same = m.params.identical_to(before);
    const bool ok = two_runs && threads_same && length_ok && model_same && params_same && problems.empty();
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("curve length %zu; report identical across two executions: %s, --threads 1 vs %s: %s; model file "
                "unchanged: %s; in-memory parameters unchanged: %s%s",
                series.empty() ? 0 : series[0].points(), two_runs ? "yes" : "NO", n.c_str(),
                threads_same ? "yes" : "NO", model_same ? "yes" : "NO", params_same && problems.empty() ? "yes" : "NO",
                problems.c_str())};
}

// ---------------------------------------------------------------------------
// 7. EDF and archive round trip

Outcome edf_round_trip() {
    // Reference values come from an independent EDF reader run on the fixture.
    const RawRecording r = parse_edf(fs::path(FASTBCI_FIXTURE_DIR) / "tiny_fixture.edf");
    const std::vector<double> c3{0, 1, -1, 100, -100, 2047, -2048, 7, 3, 3, 3, -3, -3, -3, 12, -12};
    const std::vector<double> c4{0, 2047, 2048, 2049, 4095, 2058, 2038, 2053, 2048, 2048, 2048, 2048, 2049, 2049, 2049, 2049};
    bool samples_ok = r.samples == 16 && r.channels() == 2 && r.sampling_rate == 8.0;
    for (std::size_t i = 0; samples_ok && i < 16; ++i) {
        samples_ok = r.at(0, i) == c3[i] && r.at(1, i) == c4[i];
    }
    const bool annotations_ok = r.annotations.size() == 3 && r.annotations[0].text == "T0" &&
                                r.annotations[1].text == "T1" && r.annotations[1].onset == 0.25 &&
                                r.annotations[2].text == "T2" && r.annotations[2].onset == 1.5 &&
                                r.annotations[2].duration == 0.25;

    // Archive: awkward doubles included (signed zero, subnormal, extremes).
    const fs::path dir = scratch("archive");
    TrialStore store;
    store.info.channels = 3;
    store.info.time_points = 5;
    store.info.config_hash = "0123456789abcdef";
    Rng rng(17);
    const double awkward[] = {-0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
                              -std::numeric_limits<double>::min(), 1.0 / 3.0};
    for (int subject : {1, 50, 99}) {
        for (int activity : {1, 4}) {
            SubjectDataset ds;
            ds.subject = subject;
            ds.activity = activity;
            for (int i = 0; i < 6; ++i) {
                Trial t;
                t.label = i % 2;
                t.subject = subject;
                t.activity = activity;
                for (std::size_t k = 0; k < 15; ++k) {
                    t.data.push_back(k < 5 ? awkward[k] : rng.normal(0.0, 1e-5));
                }
                ds.trials.push_back(std::move(t));
            }
            store.add(std::move(ds));
        }
    }
    write_archive(dir, store);
    const TrialStore back = read_archive(dir);
    bool archive_ok = back.datasets.size() == store.datasets.size() && back.info.config_hash == store.info.config_hash;
    for (const auto& [key, ds] : store.datasets) {
        if (!archive_ok) {
            break;
        }
        const auto& other = back.datasets.at(key);
        archive_ok = other.trials.size() == ds.trials.size();
        for (std::size_t i = 0; archive_ok && i < ds.trials.size(); ++i) {
            archive_ok = other.trials[i].label == ds.trials[i].label &&
                         std::memcmp(other.trials[i].data.data(), ds.trials[i].data.data(), 15 * sizeof(double)) == 0;
        }
    }
    const bool ok = samples_ok && annotations_ok && archive_ok;
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("fixture samples exact: %s, annotations: %s; archive of %zu datasets bit-exact: %s",
                samples_ok ? "yes" : "NO", annotations_ok ? "yes" : "NO", store.datasets.size(),
                archive_ok ? "yes" : "NO")};
}

// ---------------------------------------------------------------------------
// 8. Optional reproduction on the real dataset

Outcome real_data_reproduction() {
    const char* root = std::getenv("FASTBCI_DATA_DIR");
    const char* enabled = std::getenv("FASTBCI_EXTENDED");
    if (!root || !enabled || std::string(enabled) != "1" || !fs::exists(fs::path(root) / "epochs" / "manifest.json")) {
        return {Outcome::skip,
                "optional, non-gating: needs a preprocessed archive under $FASTBCI_DATA_DIR/epochs and "
                "FASTBCI_EXTENDED=1"};
    }
    const fs::path out = scratch("extended");
    const std::string model = (out / "a2_transfer.fabm").string();
    const std::string report = (out / "a2_transfer.csv").string();
    std::ostringstream sink;
    if (run_command({"pretrain", "--strategy", "transfer", "--activity", "2", "--norm", "layer", "--out", model}, sink,
                    std::cerr) != 0 ||
        run_command({"adapt", "--model", model, "--subjects", "99-109", "--steps", "10", "--runs", "100", "--out", report},
                    sink, std::cerr) != 0) {
        return {Outcome::skip, "extended run failed; see stderr (non-gating)"};
    }
    const auto s = read_report_csv(report)[0];
    const double before = 100 * s.mean_test.front(), after = 100 * s.mean_test.back();
    const bool within = std::abs(before - 85.91) <= 5 && std::abs(after - 86.28) <= 5;
    return {Outcome::skip, fmt("activity 2 transfer: before %.2f (published 85.91), after %.2f (published 86.28); "
                               "within 5 points: %s (reported, non-gating)",
                               before, after, within ? "yes" : "no")};
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "Gradient suite", 120, gradient_suite},
        {2, "Architecture conformance", 1, architecture},
        {3, "FOMAML oracle", 1, fomaml_oracle},
        {4, "Filter conformance", 1, filter_conformance},
        {5, "Synthetic domain-shift study", 900, domain_shift_study},
        {6, "Protocol invariants", 300, protocol_invariants},
        {7, "EDF and archive round trip", 1, edf_round_trip},
        {8, "Published-number reproduction", std::numeric_limits<double>::infinity(), real_data_reproduction},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        only.insert(std::atoi(argv[i]));
    }
    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.contains(c.id)) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {c.id == 8 ? Outcome::skip : Outcome::fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.status == Outcome::pass && secs >= c.limit_seconds) {
            o.status = Outcome::fail;
            o.detail += fmt(" [runtime %.1f s exceeds %.0f s]", secs, c.limit_seconds);
        }
        const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::fail ? "FAIL" : "SKIP";
        const std::string limit = std::isfinite(c.limit_seconds) ? fmt(" / limit %.0f s", c.limit_seconds) : "";
        std::printf("%s [%d] %s: %s (%.2f s%s)\n", tag, c.id, c.name, o.detail.c_str(), secs, limit.c_str());
        std::fflush(stdout);
        failures += o.status == Outcome::fail ? 1 : 0;
    }
    return failures == 0 ? 0 : 1;
}
