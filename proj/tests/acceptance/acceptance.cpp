// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <functional>
#include <future>
#include <map>
#include <sstream>

#include "fake_backend.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "service_fixture.hpp"
#include "xdx/cascade.hpp"
#include "xdx/data.hpp"
#include "xdx/explain.hpp"
#include "xdx/metrics.hpp"
#include "xdx/optim.hpp"
#include "xdx/synthetic.hpp"
#include "xdx/train.hpp"

using namespace xdx;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Checks {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok && first_failure_.empty()) first_failure_ = what;
        pass_ = pass_ && ok;
    }
    Outcome done(std::string detail) const {
        return {pass_, pass_ ? std::move(detail) : first_failure_ + " (" + detail + ")"};
    }

private:
    bool pass_ = true;
    std::string first_failure_;
};

std::string fmt(const char* format, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------

// conv2d -> relu -> global average pool -> sigmoid -> BCE, with the sigmoid
// fused into the logit form of the loss.
Outcome gradient_fidelity() {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 gen(1001);
    double worst = 0;
    const int cases = 150;
    for (int c = 0; c < cases; ++c) {
        const std::size_t n = 1 + gen() % 3, cin = 1 + gen() % 3, cout = 1 + gen() % 4;
        const std::size_t k = 1 + 2 * (gen() % 2), stride = 1 + gen() % 2, hw = 3 + gen() % 5;
        const std::size_t pad = gen() % (k / 2 + 1);
        Tensor x = testing::normal_tensor({n, cin, hw, hw}, gen);
        Tensor w = testing::normal_tensor({cout, cin, k, k}, gen);
        Tensor b = testing::normal_tensor({cout}, gen);
        std::vector<real> y(n * cout);
        for (auto& v : y) v = static_cast<real>(gen() % 2);
        const Tensor targets({n, cout}, y);
        auto loss = [&] { return bce_loss(global_avg_pool(relu(conv2d(x, w, b, stride, pad))), targets); };
        worst = std::max(worst, testing::gradient_check(loss, {x, w, b}));
    }
    const double elapsed = seconds_since(start);
    Checks checks;
    checks.expect(worst <= 1e-4, "max relative error above 1e-4");
    checks.expect(elapsed < 60, "runtime over 1 minute");
    return checks.done(fmt("%d cases, max rel err %.2e, %.1fs", cases, worst, elapsed));
}

double scalar_trajectories(OptimizerKind kind, std::uint64_t seed, int problems, int steps, bool& branch_ok) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    double worst = 0;
    for (int p = 0; p < problems; ++p) {
        OptimizerConfig cfg;
        cfg.kind = kind;
        cfg.lr = std::pow(10.0, -1 - 3 * unit(gen));
        cfg.weight_decay = unit(gen) < 0.5 ? 0.0 : 1e-3 * unit(gen);
        const double curvature = 0.1 + 2 * unit(gen), target = normal(gen);
        OptimizerState state(cfg, {1});
        testing::ScalarOptimizerOracle oracle{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay,
                                              kind == OptimizerKind::radam};
        real w = static_cast<real>(normal(gen));
        oracle.w = w;
        for (int t = 1; t <= steps; ++t) {
            const double g = curvature * (oracle.w - target) + 0.1 * normal(gen);
            const real gr = static_cast<real>(g);
            const std::span<real> ps[] = {std::span<real>(&w, 1)};
            const std::span<const real> gs[] = {std::span<const real>(&gr, 1)};
            if (kind == OptimizerKind::adam)
                adam_step(state, ps, gs);
            else
                radam_step(state, ps, gs);
            oracle.step(g);
            if (kind == OptimizerKind::radam) branch_ok = branch_ok && (oracle.last_step_adaptive == (t > 4));
            worst = std::max(worst, testing::relative_error(w, oracle.w));
        }
    }
    return worst;
}

Outcome optimizer_oracles() {
    bool branch_ok = true;
    const double adam = scalar_trajectories(OptimizerKind::adam, 2001, 1000, 50, branch_ok);
    const double radam = scalar_trajectories(OptimizerKind::radam, 2002, 1000, 50, branch_ok);
    const double rho1 = radam_rho(0.999, 1);
    Checks checks;
    checks.expect(adam <= 1e-12, "Adam differs from its oracle");
    checks.expect(radam <= 1e-12, "RAdam differs from its oracle");
    checks.expect(std::abs(rho1 - 1.0) <= 1e-9, "rho_1 is not 1");
    for (std::uint64_t t = 1; t <= 4; ++t) checks.expect(radam_rho(0.999, t) <= 4, "rho_t > 4 for some t <= 4");
    checks.expect(radam_rho(0.999, 5) > 4, "rho_5 <= 4");
    checks.expect(branch_ok, "momentum-only branch not taken exactly for t <= 4");
    return checks.done(fmt("1000x50 each; max rel err adam %.1e radam %.1e; rho_1=%.12f rho_4=%.4f rho_5=%.4f", adam,
                           radam, rho1, radam_rho(0.999, 4), radam_rho(0.999, 5)));
}

Outcome scheduler() {
    Checks checks;
    OptimizerConfig cfg;
    OptimizerState state(cfg, {});
    PlateauScheduler sched;
    std::string fired;
    for (double m : {1.0, 0.9, 0.95, 0.95, 0.95, 0.95}) fired += sched.step(m, state) ? '1' : '0';
    checks.expect(fired == "000001", "reduction pattern " + fired);
    checks.expect(std::abs(state.config.lr - 1e-4) <= 1e-18, "lr after reduction is not 1e-4");

    std::mt19937_64 gen(3001);
    std::uniform_real_distribution<double> unit;
    int traces = 0;
    for (; traces < 1000; ++traces) {
        OptimizerState s(cfg, {});
        PlateauScheduler p;
        p.patience = static_cast<int>(gen() % 6);
        p.min_lr = unit(gen) < 0.3 ? 1e-6 : 0.0;
        double prev = s.config.lr, level = 1.0;
        for (int e = 0; e < 60; ++e) {
            level = unit(gen) < 0.5 ? level * (0.9 + 0.2 * unit(gen)) : level;
            p.step(level, s);
            checks.expect(s.config.lr <= prev, "lr increased on a fuzzed trace");
            prev = s.config.lr;
        }
    }
    return checks.done("hand trace reduces on call 6 only (lr 1e-3 -> 1e-4); " + std::to_string(traces) +
                       " fuzzed traces non-increasing");
}

Outcome table2() {
    const auto cm = confusion_matrix_from_counts({"xray", "other"}, {{4712, 5}, {72, 4928}});
    const double acc = accuracy(cm);
    Checks checks;
    checks.expect(std::abs(acc - 0.99208) <= 1e-5, "accuracy off");
    return checks.done(fmt("counts 4712/5/72/4928 give accuracy %.5f", acc));
}

Outcome end_to_end() {
    const double e2e = end_to_end_accuracy(0.987, 0.976, 0.947);
    Checks checks;
    checks.expect(std::abs(e2e - 0.9123) <= 5e-4, "product off");
    checks.expect(std::round(e2e * 100) / 100 == 0.91, "does not round to 0.91");
    return checks.done(fmt("0.987*0.976*0.947 = %.5f", e2e));
}

Outcome auc_exactness() {
    std::mt19937_64 gen(4001);
    Checks checks;
    int instances = 0, with_ties = 0;
    for (; instances < 2000; ++instances) {
        const std::size_t n = 2 + gen() % 49;
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        const std::uint64_t levels = instances % 2 == 0 ? 2 + gen() % 6 : (1ull << 53);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(gen() % levels) / static_cast<double>(levels);
            labels[i] = static_cast<int>(gen() % 2);
        }
        labels[0] = 1;
        labels[1] = 0;
        std::vector<double> sorted(scores);
        std::sort(sorted.begin(), sorted.end());
        with_ties += std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
        checks.expect(roc_curve(scores, labels).auc == testing::mann_whitney_auc(scores, labels),
                      "AUC differs from Mann-Whitney");
    }
    checks.expect(with_ties > 0, "no tied instances generated");
    return checks.done(std::to_string(instances) + " instances (n <= 50, " + std::to_string(with_ties) +
                       " with ties), exact equality");
}

Outcome desk_training() {
    const auto start = std::chrono::steady_clock::now();
    testing::TempDir dir("desk");
    CorpusOptions opts;
    opts.per_type = 20;
    opts.seed = 5;
    const Manifest corpus = write_synthetic_corpus(dir.path().string(), opts);
    const StageDataset train = load_stage_dataset(corpus.records, dir.path().string(), 2, 32);

    Checks checks;
    std::string detail = std::to_string(train.size()) + " images, RAdam batch 4;";
    for (double lr : {1e-3, 1e-4}) {
        RunConfig config = RunConfig::defaults(2);
        config.network = NetworkSpec::toy(head_for_stage(2));
        config.optimizer = OptimizerConfig::radam_defaults();
        config.optimizer.lr = lr;
        config.epochs = 200;
        config.batch_size = 4;
        config.seed = 11;
        config.scheduler.patience = std::numeric_limits<int>::max();
        config.stop_at_train_accuracy = 0.95;
        const TrainResult result = train_network(config, train, nullptr);
        const double acc = result.history.back().train_accuracy;
        checks.expect(acc >= 0.95, fmt("lr %.0e ends at train accuracy %.3f", lr, acc));
        detail += fmt(" lr %.0e: %.3f at epoch %zu;", lr, acc, result.history.size());
    }
    const double elapsed = seconds_since(start);
    checks.expect(train.size() >= 60, "corpus smaller than 60 images");
    checks.expect(elapsed < 300, "runtime over 5 minutes");
    return checks.done(detail + fmt(" %.1fs", elapsed));
}

Outcome grad_cam_checks() {
    Checks checks;
    std::mt19937_64 gen(5001);
    const HeadSpec heads[] = {HeadSpec::softmax(3), HeadSpec::binary(), HeadSpec::multilabel(14)};
    int cases = 0;
    for (; cases < 600; ++cases) {
        const HeadSpec head = heads[cases % 3];
        const Network net = build_network(NetworkSpec::toy(head), gen());
        const Tensor x = scale(testing::normal_tensor({1, 32, 32}, gen, false), static_cast<real>(1 + gen() % 4));
        const Heatmap h = grad_cam(net, x, gen() % head.logits());
        bool any = false;
        for (double v : h.values) {
            checks.expect(v >= 0 && v <= 1, "heatmap value outside [0,1]");
            any = any || v > 0;
        }
        checks.expect(any == (h.raw_max > 0), "raw_max disagrees with the map");
        checks.expect(h.values.size() == 16, "toy heatmap is not 4x4");
    }

    Network flat = build_network(NetworkSpec::toy(HeadSpec::softmax(3)), 7);
    for (auto& [name, t] : flat.named_tensors())
        if (name == "classifier.weight")
            for (auto& v : t.mutable_data()) v = 0;
    const Heatmap zero = grad_cam(flat, testing::normal_tensor({1, 32, 32}, gen, false), 0);
    checks.expect(zero.raw_max == 0 && std::all_of(zero.values.begin(), zero.values.end(), [](double v) { return v == 0; }),
                  "zero-gradient case is not the zero map");

    // alpha = (0.25, 0.2); 0.25*[1,2,3,-4] + 0.2*[0,0,2,0] = [0.25,0.5,1.15,-1] -> ReLU -> /1.15.
    const Heatmap hand = combine_activations(Tensor({2, 2, 2}, {1, 2, 3, -4, 0, 0, 2, 0}),
                                             Tensor({2, 2, 2}, {0.5, 0.5, 0.5, -0.5, 0.2, 0.2, 0.2, 0.2}));
    const double expected[] = {0.25 / 1.15, 0.5 / 1.15, 1.0, 0.0};
    double hand_err = 0;
    for (std::size_t i = 0; i < 4; ++i) hand_err = std::max(hand_err, std::abs(hand.values[i] - expected[i]));
    checks.expect(hand_err <= 1e-12, "2x2 hand oracle mismatch");

    const auto start = std::chrono::steady_clock::now();
    const Network dense = build_network(NetworkSpec::densenet121(HeadSpec::multilabel(14)), 8);
    const Heatmap big = grad_cam(dense, testing::normal_tensor({1, 224, 224}, gen, false), 1);
    checks.expect(big.width == 7 && big.height == 7, "densenet121 heatmap is not 7x7");
    return checks.done(fmt("%d random cases in [0,1]; zero case all-zero; 2x2 oracle err %.1e; densenet121 at 224 -> "
                           "%zux%zu (%.1fs)",
                           cases, hand_err, big.width, big.height, seconds_since(start)));
}

Outcome cascade_routing() {
    Checks checks;
    std::mt19937_64 gen(6001);
    std::uniform_real_distribution<double> unit;
    const Image image{8, 8, 1, std::vector<std::uint8_t>(64, 50)};
    int trials = 0, rejected = 0, non_chest = 0, chest = 0;
    for (; trials < 20000; ++trials) {
        testing::FakeBackend backend;
        CascadeConfig config;
        config.stage1_threshold = 0.01 + 0.98 * unit(gen);
        config.stage3_threshold = 0.01 + 0.98 * unit(gen);
        config.explain = static_cast<ExplainMode>(gen() % 3);
        backend.p_xray = trials % 7 == 0 ? config.stage1_threshold : unit(gen);
        double total = 0;
        for (auto& p : backend.types) total += (p = unit(gen) * unit(gen));
        for (auto& p : backend.types) p /= total;
        for (auto& p : backend.conditions) p = gen() % 10 == 0 ? config.stage3_threshold : unit(gen);
        const auto r = run_cascade(image, backend, config);
        const std::string violation = check_report(r, config);
        checks.expect(violation.empty(), "invariant violated: " + violation);
        if (!r.stage1.is_xray) {
            ++rejected;
            checks.expect(!r.stage2 && !r.stage3 && !r.explanations, "non-X-ray went past stage 1");
        } else if (r.stage2->type != XrayType::Chest) {
            ++non_chest;
            checks.expect(!r.stage3 && !r.explanations, "non-chest type reached stage 3");
        } else {
            ++chest;
        }
    }

    // The same invariants with real toy networks behind the backend.
    int network_cases = 0;
    for (; network_cases < 40; ++network_cases) {
        NetworkBackend backend(build_network(NetworkSpec::toy(HeadSpec::binary()), gen()),
                               build_network(NetworkSpec::toy(HeadSpec::softmax(14)), gen()));
        backend.register_abnormality_model(XrayType::Chest, build_network(NetworkSpec::toy(HeadSpec::multilabel(14)), gen()));
        Image img{32, 32, 1, std::vector<std::uint8_t>(1024)};
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen());
        CascadeConfig config;
        config.stage1_threshold = 0.01 + 0.98 * unit(gen);
        config.explain = ExplainMode::positives;
        checks.expect(check_report(run_cascade(img, backend, config), config).empty(),
                      "network-backed report violates the invariants");
    }
    checks.expect(rejected > 0 && non_chest > 0 && chest > 0, "fuzz did not reach every route");
    return checks.done(fmt("%d fuzzed reports (%d stop at stage 1, %d non-chest, %d chest) + %d network-backed, all valid",
                           trials, rejected, non_chest, chest, network_cases));
}

Outcome formats() {
    Checks checks;
    testing::TempDir dir("formats");

    // Weight files.
    const auto spec = NetworkSpec::toy(HeadSpec::softmax(3));
    const Network fresh = build_network(spec, 21);
    save_weights(fresh, dir.file("fresh.xdxw"));
    Network loaded = build_network(spec, 22);
    load_weights(loaded, dir.file("fresh.xdxw"));
    const auto a = fresh.named_tensors(), b = loaded.named_tensors();
    bool exact = a.size() == b.size();
    for (std::size_t i = 0; exact && i < a.size(); ++i)
        exact = a[i].first == b[i].first &&
                std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin());
    checks.expect(exact, "weight round trip not bit-exact");
    Network trained = build_network(spec, 23);
    std::mt19937_64 gen(7001);
    trained.forward(testing::normal_tensor({2, 1, 32, 32}, gen, false), Mode::train);
    save_weights(trained, dir.file("t1.xdxw"));
    Network reloaded = build_network(spec, 24);
    load_weights(reloaded, dir.file("t1.xdxw"));
    save_weights(reloaded, dir.file("t2.xdxw"));
    checks.expect(weight_checksum(dir.file("t1.xdxw")) == weight_checksum(dir.file("t2.xdxw")),
                  "save/load/save not byte-identical");

    // Split sizes and stratification.
    int manifests = 0;
    for (std::size_t n = 3; n <= 400; ++n, ++manifests) {
        Manifest m;
        for (std::size_t i = 0; i < n; ++i) {
            SampleRecord r;
            r.path = std::to_string(i);
            if (gen() % 4 != 0) {
                r.stage1 = Stage1Label::xray;
                r.stage2 = static_cast<XrayType>(gen() % 5);
            }
            m.records.push_back(r);
        }
        const Manifest s = split_dataset(m, gen());
        const std::size_t train = s.in_split(Split::train).size(), val = s.in_split(Split::val).size();
        checks.expect(train == n * 7 / 10 && val == n * 2 / 10 && train + val + s.in_split(Split::test).size() == n,
                      "split sizes off at n=" + std::to_string(n));
        std::map<int, std::array<double, 4>> cells;
        for (const auto& r : s.records) {
            auto& row = cells[r.stage2 ? static_cast<int>(*r.stage2) : -1];
            row[static_cast<std::size_t>(*r.split)] += 1;
            row[3] += 1;
        }
        // Shares are measured against the realized global proportions n_split / n.
        const double share[] = {static_cast<double>(train) / n, static_cast<double>(val) / n,
                                static_cast<double>(n - train - val) / n};
        for (const auto& [cls, row] : cells)
            for (std::size_t k = 0; k < 3; ++k)
                checks.expect(std::abs(row[k] - share[k] * row[3]) < 1 + 1e-9,
                              "stratification off by more than one sample at n=" + std::to_string(n));
    }

    // Service determinism, including the densenet121 heatmap size through the API.
    auto config = testing::write_chest_models(dir.path().string(), NetworkSpec::densenet121(HeadSpec::multilabel(14)));
    testing::RunningService service(config);
    Image img{300, 260, 1, std::vector<std::uint8_t>(300 * 260)};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen());
    const auto bytes = encode_pgm(img);
    const std::string body(bytes.begin(), bytes.end());
    std::vector<std::future<std::string>> replies;
    for (int i = 0; i < 3; ++i)
        replies.push_back(std::async(std::launch::async, [&] {
            auto res = service.client().Post("/v1/predict?explain=Cardiomegaly", body, "image/x-portable-graymap");
            return res && res->status == 200 ? res->body : std::string("error");
        }));
    std::vector<std::string> bodies;
    for (auto& f : replies) bodies.push_back(f.get());
    checks.expect(bodies[0] != "error", "predict failed");
    checks.expect(std::all_of(bodies.begin(), bodies.end(), [&](const std::string& s) { return s == bodies[0]; }),
                  "responses differ for identical bytes");
    std::size_t heat = 0;
    if (bodies[0] != "error") heat = nlohmann::json::parse(bodies[0])["explanations"]["Cardiomegaly"]["width"];
    checks.expect(heat == 7, "service heatmap is not 7x7");
    return checks.done(fmt("weights bit-exact and re-save identical; %d split sizes exact and stratified; 3 concurrent "
                           "predicts identical (%zu bytes, %zux%zu heatmap)",
                           manifests, bodies[0].size(), heat, heat));
}

}  // namespace

int main() {
    configure_logging();
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"gradient fidelity", gradient_fidelity},
        {"optimizer oracles", optimizer_oracles},
        {"scheduler", scheduler},
        {"confusion-matrix arithmetic", table2},
        {"end-to-end composition", end_to_end},
        {"AUC exactness", auc_exactness},
        {"desk-scale training", desk_training},
        {"Grad-CAM", grad_cam_checks},
        {"cascade routing", cascade_routing},
        {"formats", formats},
    };
    int failures = 0;
    for (const auto& [name, run] : criteria) {
        Outcome outcome;
        try {
            outcome = run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("threw: ") + e.what()};
        }
        failures += outcome.pass ? 0 : 1;
        std::printf("%s  %s: %s\n", outcome.pass ? "PASS" : "FAIL", name, outcome.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
