// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 only if
// all pass. Details go to stdout after each verdict line.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "fph/data_io.hpp"
#include "fph/gradcheck_suite.hpp"
#include "fph/model.hpp"
#include "fph/retrieval.hpp"
#include "fph/training.hpp"
#include "support/checks.hpp"

using namespace fph;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

void report(int id, const char* name, const Verdict& v) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << "\n";
    if (!v.detail.empty()) std::cout << "    " << v.detail << "\n";
    std::cout.flush();
}

std::string join(const checks::Failures& f, std::size_t limit = 5) {
    std::string s;
    for (std::size_t i = 0; i < f.size() && i < limit; ++i) s += (i ? "; " : "") + f[i];
    if (f.size() > limit) s += "; ... (" + std::to_string(f.size()) + " total)";
    return s;
}

// Byte contents of every regular file below dir, keyed by relative path.
std::map<std::string, std::vector<char>> snapshot(const fs::path& dir) {
    std::map<std::string, std::vector<char>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
    return out;
}

// ---------------------------------------------------------------------------

struct GradRun {
    std::vector<GradCheckResult> results;
    double seconds = 0;
};

GradRun run_gradients() {
    auto t0 = Clock::now();
    const auto ops = gradcheck_ops();
    GradRun r{run_gradcheck_suite(ops), 0};
    r.seconds = seconds_since(t0);
    return r;
}

Verdict judge_gradients(const GradRun& r) {
    Verdict v{true, ""};
    std::ostringstream d;
    double worst = 0;
    std::string worst_op;
    for (const auto& res : r.results) {
        if (!res.passed()) {
            v.pass = false;
            d << res.op << " max error " << res.max_error << "; ";
        }
        if (res.max_error >= worst) worst = res.max_error, worst_op = res.op;
    }
    if (r.results.size() != gradcheck_ops().size()) v.pass = false;
    if (r.seconds >= 120.0) v.pass = false;
    d << r.results.size() << " ops x 10 seeds, worst " << std::scientific << std::setprecision(2) << worst << " ("
      << worst_op << "), " << std::fixed << std::setprecision(1) << r.seconds << " s";
    v.detail = d.str();
    return v;
}

// ---------------------------------------------------------------------------

struct SeedRun {
    std::uint64_t seed = 0;
    double map_consensus = 0, map_vertical = 0;
    double seconds = 0;
    double final_loss = 0;
    fs::path dir;
};

/// The synthetic protocol: 2 groups x 4 classes x 40 images at 64 px, desk
/// backbone, q = 16, desk training defaults.
TrainConfig protocol_train_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    return cfg;
}

SeedRun run_protocol(std::uint64_t seed, const fs::path& dir) {
    SeedRun r;
    r.seed = seed;
    r.dir = dir;
    fs::remove_all(dir);
    auto t0 = Clock::now();

    SyntheticSpec spec;
    spec.groups = 2;
    spec.classes_per_group = 4;
    spec.images_per_class = 40;
    spec.image_size = 64;
    spec.seed = seed;
    auto manifest = gen_synthetic(spec, dir / "data");
    auto train_set = load_images(manifest, manifest.filter(Split::train), 64);
    auto query_set = load_images(manifest, manifest.filter(Split::query), 64);

    HashingNetwork net(desk_stage_spec(), 64, HashConfig{16}, seed);
    auto result = train(train_set, net, protocol_train_config(seed));
    r.final_loss = result.trace.back().loss_combined;
    save_checkpoint(net.parameters(), dir / "checkpoint.fph");

    auto encode = [&](const LabeledImages& data, CodeSource src) {
        NoGradScope no_grad;
        BinaryCodeSet set(net.q());
        for (std::size_t i = 0; i < data.size(); ++i) set.push_back(net.encode(data.images[i], src), data.labels[i]);
        return set;
    };
    for (auto src : {CodeSource::consensus, CodeSource::vertical}) {
        const std::string tag = src == CodeSource::consensus ? "consensus" : "vertical";
        auto db = encode(train_set, src);
        auto queries = encode(query_set, src);
        save_codes(db, dir / ("db_" + tag + ".codes"));
        save_codes(queries, dir / ("query_" + tag + ".codes"));
        (src == CodeSource::consensus ? r.map_consensus : r.map_vertical) = mean_average_precision(queries, db);
    }
    r.seconds = seconds_since(t0);
    return r;
}

} // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "fph_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    bool all = true;
    auto record = [&](int id, const char* name, const Verdict& v) {
        report(id, name, v);
        all = all && v.pass;
    };

    // 1
    auto grads = run_gradients();
    record(1, "gradient suite", judge_gradients(grads));

    // 2
    auto t0 = Clock::now();
    auto dims = checks::dimension_chain(false);
    std::ostringstream d2;
    d2 << "q in {16, 32, 48, 64}, desk and paper shapes, " << std::fixed << std::setprecision(2) << seconds_since(t0)
       << " s" << (dims.empty() ? "" : "; " + join(dims));
    record(2, "dimension chain", {dims.empty(), d2.str()});

    // 3
    t0 = Clock::now();
    auto metrics = checks::metric_oracle(100, 20240);
    std::ostringstream d3;
    d3 << "100 instances, " << std::fixed << std::setprecision(2) << seconds_since(t0) << " s"
       << (metrics.empty() ? "" : "; " + join(metrics));
    record(3, "metric oracle", {metrics.empty(), d3.str()});

    // 4
    t0 = Clock::now();
    auto persist = checks::persistence(work / "persist_a");
    std::ostringstream d4;
    d4 << std::fixed << std::setprecision(2) << seconds_since(t0) << " s"
       << (persist.empty() ? "" : "; " + join(persist));
    record(4, "persistence", {persist.empty(), d4.str()});

    // 5 and 6
    std::vector<SeedRun> runs;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        runs.push_back(run_protocol(seed, work / ("run_a_" + std::to_string(seed))));
        const auto& r = runs.back();
        std::cout << "    seed " << seed << ": consensus MAP " << std::fixed << std::setprecision(4) << r.map_consensus
                  << ", vertical MAP " << r.map_vertical << ", final loss " << r.final_loss << ", "
                  << std::setprecision(0) << r.seconds << " s\n";
        std::cout.flush();
    }
    std::vector<double> first3, cons, vert;
    double seconds3 = 0, seconds5 = 0;
    for (const auto& r : runs) {
        if (r.seed <= 3) first3.push_back(r.map_consensus), seconds3 += r.seconds;
        cons.push_back(r.map_consensus);
        vert.push_back(r.map_vertical);
        seconds5 += r.seconds;
    }
    const double m5 = median(first3);
    std::ostringstream d5;
    d5 << "median consensus MAP over seeds 1-3 = " << std::fixed << std::setprecision(4) << m5
       << " (threshold 0.80), " << std::setprecision(0) << seconds3 << " s";
    record(5, "end-to-end synthetic retrieval", {m5 >= 0.80 && seconds3 < 20 * 60, d5.str()});

    const double mc = median(cons), mv = median(vert);
    std::ostringstream d6;
    d6 << "median MAP over 5 seeds: consensus " << std::fixed << std::setprecision(4) << mc << ", vertical " << mv
       << ", gap " << std::showpos << mc - mv << std::noshowpos << " (must be >= -0.01), " << std::setprecision(0)
       << seconds5 << " s";
    record(6, "consensus vs vertical ablation", {mc >= mv - 0.01 && seconds5 < 60 * 60, d6.str()});

    // 7: everything again under the same seeds
    checks::Failures diff;
    auto grads_b = run_gradients();
    for (std::size_t i = 0; i < grads.results.size() && i < grads_b.results.size(); ++i) {
        const auto &a = grads.results[i], &b = grads_b.results[i];
        if (std::bit_cast<std::uint64_t>(a.max_error) != std::bit_cast<std::uint64_t>(b.max_error) ||
            a.rejected != b.rejected) {
            diff.push_back("gradcheck " + a.op + " differs");
        }
    }
    if (checks::dimension_chain(false) != dims) diff.push_back("dimension chain report differs");
    if (checks::metric_oracle(100, 20240) != metrics) diff.push_back("metric oracle report differs");
    checks::persistence(work / "persist_b");
    if (snapshot(work / "persist_a") != snapshot(work / "persist_b")) diff.push_back("persistence files differ");
    std::size_t compared = 0;
    for (const auto& a : runs) {
        auto b = run_protocol(a.seed, work / ("run_b_" + std::to_string(a.seed)));
        auto sa = snapshot(a.dir), sb = snapshot(b.dir);
        compared += sa.size();
        if (sa != sb) diff.push_back("seed " + std::to_string(a.seed) + ": artifacts differ");
        if (std::bit_cast<std::uint64_t>(a.map_consensus) != std::bit_cast<std::uint64_t>(b.map_consensus) ||
            std::bit_cast<std::uint64_t>(a.map_vertical) != std::bit_cast<std::uint64_t>(b.map_vertical)) {
            diff.push_back("seed " + std::to_string(a.seed) + ": MAP differs");
        }
    }
    std::ostringstream d7;
    d7 << "criteria 1-6 rerun; " << compared << " files compared byte for byte (images, checkpoints, code files)"
       << (diff.empty() ? "" : "; " + join(diff));
    record(7, "determinism", {diff.empty(), d7.str()});

    fs::remove_all(work);
    return all ? EXIT_SUCCESS : EXIT_FAILURE;
}
