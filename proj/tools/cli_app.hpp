#pragma once

// Subcommands of the fph tool. run_cli returns the process exit code:
// 0 ok, 1 verification failure, 2 bad input, 3 numeric failure.

#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fph/config.hpp"
#include "fph/data_io.hpp"
#include "fph/gradcheck_suite.hpp"
#include "fph/model.hpp"
#include "fph/retrieval.hpp"
#include "fph/training.hpp"

namespace fph::cli {

enum ExitCode : int { ok = 0, verification_failed = 1, bad_input = 2, numeric_failure = 3 };

inline const char* kCheckpointName = "checkpoint.fph";
inline const char* kLossTraceName = "loss_trace.csv";

struct GenDataOptions {
    SyntheticSpec spec;
    std::string out;
};

struct TrainOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool verbose = false;
};

struct EncodeOptions {
    std::string config;
    std::string checkpoint; // defaults to <output_dir>/checkpoint.fph
    std::string manifest;   // defaults to the config's dataset
    std::string split = "all";
    std::string source;     // defaults to the config's code_source
    std::string out;
};

struct EvalOptions {
    std::string queries;
    std::string db;
    std::string out;
    std::size_t radius = 3;
    bool exclude_empty = false;
};

struct QueryOptions {
    std::string queries;
    std::string db;
    std::size_t index = 0;
    std::size_t k = 10;
};

struct GradcheckOptions {
    std::vector<std::string> ops{"all"};
    std::size_t seeds = 10;
};

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& out) {
    auto m = gen_synthetic(o.spec, o.out);
    out << "wrote " << m.entries.size() << " images (" << m.filter(Split::train).size() << " train, "
        << m.filter(Split::query).size() << " query) to " << o.out << "\n";
    return ok;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
    auto cfg = load_run_config(o.config);
    if (o.seed) cfg.train.seed = *o.seed;
    cfg.validate();
    auto data = load_dataset(cfg.dataset, cfg.input_size, Split::train);
    if (data.size() == 0) throw ConfigError("dataset: no train entries in '" + cfg.dataset.string() + "'");
    if (data.class_count() < 2) throw ConfigError("dataset: training needs at least two classes");

    auto net = cfg.build_network();
    auto result = train(data, net, cfg.train, o.verbose ? &out : nullptr);

    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec || !fs::is_directory(cfg.output_dir)) {
        throw IoError("cannot create directory '" + cfg.output_dir.string() + "'");
    }
    save_checkpoint(net.parameters(), cfg.output_dir / kCheckpointName);
    write_file(cfg.output_dir / kLossTraceName, loss_trace_csv(result.trace));
    const auto& last = result.trace.back();
    out << "trained " << result.iterations << " iterations; final combined loss " << format_real(last.loss_combined)
        << "\n";
    if (result.skipped_batches) out << "skipped " << result.skipped_batches << " batches without a valid triplet\n";
    out << "checkpoint: " << (cfg.output_dir / kCheckpointName).string() << "\n";
    return ok;
}

/// Loads a checkpoint into a network built from cfg; rejects q mismatches.
inline HashingNetwork load_network(const RunConfig& cfg, const fs::path& checkpoint) {
    auto stored = load_checkpoint(checkpoint);
    for (const auto& p : stored) {
        if (p.name == "head.s4.bias" && p.tensor.size() != cfg.q) {
            throw ConfigError("q mismatch: checkpoint has q=" + std::to_string(p.tensor.size()) + ", config has q=" +
                              std::to_string(cfg.q));
        }
    }
    auto net = cfg.build_network();
    auto params = net.parameters();
    assign_parameters(params, stored);
    return net;
}

inline BinaryCodeSet encode_images(const HashingNetwork& net, const LabeledImages& data, CodeSource source) {
    NoGradScope no_grad;
    BinaryCodeSet codes(net.q());
    for (std::size_t i = 0; i < data.size(); ++i) codes.push_back(net.encode(data.images[i], source), data.labels[i]);
    return codes;
}

inline int cmd_encode(const EncodeOptions& o, std::ostream& out) {
    auto cfg = load_run_config(o.config);
    cfg.validate(false);
    const fs::path checkpoint = o.checkpoint.empty() ? cfg.output_dir / kCheckpointName : fs::path(o.checkpoint);
    const fs::path manifest_path = o.manifest.empty() ? cfg.dataset : fs::path(o.manifest);
    const CodeSource source = o.source.empty() ? cfg.code_source : parse_code_source(o.source);

    auto net = load_network(cfg, checkpoint);
    auto manifest = read_manifest(manifest_path);
    std::vector<ManifestEntry> entries;
    if (o.split == "all") {
        entries = manifest.entries;
    } else if (o.split == "train") {
        entries = manifest.filter(Split::train);
    } else if (o.split == "query") {
        entries = manifest.filter(Split::query);
    } else {
        throw ConfigError("--split: expected train, query or all, got '" + o.split + "'");
    }
    auto data = load_images(manifest, entries, cfg.input_size);
    auto codes = encode_images(net, data, source);
    save_codes(codes, o.out);
    out << "encoded " << codes.count() << " images (" << cfg.q << " bits, "
        << (source == CodeSource::consensus ? "consensus" : "vertical") << ") to " << o.out << "\n";
    return ok;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
    auto queries = load_codes(o.queries);
    auto db = load_codes(o.db);
    if (queries.q() != db.q()) {
        throw ConfigError("q mismatch: queries have " + std::to_string(queries.q()) + " bits, database has " +
                          std::to_string(db.q()));
    }
    if (queries.empty() || db.empty()) throw ConfigError("eval needs at least one query and one database item");
    if (o.radius > db.q()) throw ConfigError("--radius exceeds the code length");
    auto report = evaluate(queries, db, o.radius, {},
                           o.exclude_empty ? EmptyRetrieval::exclude : EmptyRetrieval::count_zero);
    write_metric_report(report, o.out);
    out << "MAP " << format_real(report.map) << "\n";
    out << "precision@r" << report.radius << " " << format_real(report.precision_at_radius) << "\n";
    return ok;
}

inline int cmd_query(const QueryOptions& o, std::ostream& out) {
    auto queries = load_codes(o.queries);
    auto db = load_codes(o.db);
    if (queries.q() != db.q()) throw ConfigError("q mismatch between query and database code files");
    if (o.index >= queries.count()) {
        throw ConfigError("--index " + std::to_string(o.index) + " out of range (" +
                          std::to_string(queries.count()) + " queries)");
    }
    if (db.empty()) throw ConfigError("database is empty");
    auto ranked = rank_database(queries.words(o.index), db, o.index);
    const auto label = queries.label(o.index);
    out << "query " << o.index << " label " << label << "\n";
    out << "rank,db_index,distance,label,relevant\n";
    const std::size_t k = std::min(o.k, ranked.items.size());
    for (std::size_t r = 0; r < k; ++r) {
        const auto& item = ranked.items[r];
        out << r + 1 << "," << item.index << "," << item.distance << "," << db.label(item.index) << ","
            << (db.label(item.index) == label ? 1 : 0) << "\n";
    }
    return ok;
}

inline int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
    std::vector<std::string> ops;
    for (const auto& op : o.ops) {
        if (op == "all") {
            for (auto& name : gradcheck_ops()) ops.push_back(name);
        } else {
            ops.push_back(op);
        }
    }
    GradCheckOptions opts;
    opts.seeds = o.seeds;
    for (const auto& op : ops) run_gradcheck(op, GradCheckOptions{.seeds = 0}); // validates names up front

    std::vector<std::string> failed;
    out << "op,max_rel_error,seeds,rejected,status\n";
    for (const auto& op : ops) {
        auto r = run_gradcheck(op, opts);
        out << r.op << "," << std::scientific << std::setprecision(3) << r.max_error << std::defaultfloat << ","
            << r.seeds << "," << r.rejected << "," << (r.passed() ? "pass" : "FAIL") << "\n";
        if (!r.passed()) failed.push_back(r.op);
    }
    if (!failed.empty()) {
        out << "failed:";
        for (const auto& f : failed) out << " " << f;
        out << "\n";
        return verification_failed;
    }
    return ok;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Pyramid deep hashing: data generation, training, encoding and retrieval evaluation", "fph"};
    app.require_subcommand(1);

    GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic fine-grained dataset (PPM + manifest.csv)");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--groups", gen.spec.groups, "Coarse groups")->capture_default_str();
    gen_cmd->add_option("--classes-per-group", gen.spec.classes_per_group, "Classes per group")->capture_default_str();
    gen_cmd->add_option("--images-per-class", gen.spec.images_per_class, "Images per class")->capture_default_str();
    gen_cmd->add_option("--image-size", gen.spec.image_size, "Image side in pixels")->capture_default_str();
    gen_cmd->add_option("--detail-size", gen.spec.detail_size, "Glyph side in pixels")->capture_default_str();
    gen_cmd->add_option("--position-jitter", gen.spec.position_jitter, "Glyph offset amplitude (pixels)")
        ->capture_default_str();
    gen_cmd->add_option("--brightness-jitter", gen.spec.brightness_jitter, "Relative image gain amplitude")
        ->capture_default_str();
    gen_cmd->add_option("--pixel-noise", gen.spec.pixel_noise, "Per-pixel noise amplitude")->capture_default_str();
    gen_cmd->add_option("--group-contrast", gen.spec.group_contrast, "Spread of group styles in [0, 1]")
        ->capture_default_str();
    gen_cmd->add_option("--query-fraction", gen.spec.query_fraction, "Fraction of each class held out as queries")
        ->capture_default_str();
    gen_cmd->add_option("--seed", gen.spec.seed, "Random seed")->capture_default_str();

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train on the train split; writes checkpoint.fph and loss_trace.csv");
    train_cmd->add_option("--config", tr.config, "Run configuration (JSON)")->required();
    train_cmd->add_option("--seed", tr.seed, "Override the config seed");
    train_cmd->add_flag("--verbose", tr.verbose, "Report skipped batches");

    EncodeOptions enc;
    auto* encode_cmd = app.add_subcommand("encode", "Binarize images of a manifest into a code file");
    encode_cmd->add_option("--config", enc.config, "Run configuration (JSON)")->required();
    encode_cmd->add_option("--checkpoint", enc.checkpoint, "Checkpoint (default: <output_dir>/checkpoint.fph)");
    encode_cmd->add_option("--manifest", enc.manifest, "Manifest (default: the config dataset)");
    encode_cmd->add_option("--split", enc.split, "train, query or all")
        ->check(CLI::IsMember({"train", "query", "all"}))
        ->capture_default_str();
    encode_cmd->add_option("--source", enc.source, "consensus or vertical (default: the config code_source)")
        ->check(CLI::IsMember({"consensus", "vertical"}));
    encode_cmd->add_option("--out", enc.out, "Output code file")->required();

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "Write map.csv, pr_curve.csv, topn.csv and radius.csv");
    eval_cmd->add_option("--queries", ev.queries, "Query code file")->required();
    eval_cmd->add_option("--db", ev.db, "Database code file")->required();
    eval_cmd->add_option("--out", ev.out, "Output directory")->required();
    eval_cmd->add_option("--radius", ev.radius, "Hamming radius for precision")->capture_default_str();
    eval_cmd->add_flag("--exclude-empty", ev.exclude_empty,
                       "Leave queries with an empty radius retrieval out of the average instead of counting 0");

    QueryOptions qo;
    auto* query_cmd = app.add_subcommand("query", "Print the top-k database neighbours of one query code");
    query_cmd->add_option("--queries", qo.queries, "Query code file")->required();
    query_cmd->add_option("--db", qo.db, "Database code file")->required();
    query_cmd->add_option("--index", qo.index, "Query index")->capture_default_str();
    query_cmd->add_option("--k", qo.k, "Neighbours to list")->capture_default_str();

    GradcheckOptions gc;
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    gradcheck_cmd->add_option("--ops", gc.ops, "'all' or a comma-separated list of ops")
        ->delimiter(',')
        ->capture_default_str();
    gradcheck_cmd->add_option("--seeds", gc.seeds, "Random instances per op")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : bad_input;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen, out);
        if (*train_cmd) return cmd_train(tr, out);
        if (*encode_cmd) return cmd_encode(enc, out);
        if (*eval_cmd) return cmd_eval(ev, out);
        if (*query_cmd) return cmd_query(qo, out);
        if (*gradcheck_cmd) return cmd_gradcheck(gc, out);
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return numeric_failure;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return bad_input;
    }
    return bad_input;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    std::vector<const char*> argv{"fph"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace fph::cli
