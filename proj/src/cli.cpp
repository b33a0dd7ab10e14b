#include "dub3d/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "dub3d/checkpoint.hpp"
#include "dub3d/clip_io.hpp"
#include "dub3d/config.hpp"
#include "dub3d/error.hpp"
#include "dub3d/flow.hpp"
#include "dub3d/metrics.hpp"
#include "dub3d/run_log.hpp"
#include "dub3d/stats.hpp"
#include "dub3d/synth.hpp"
#include "dub3d/train.hpp"

namespace dub3d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    // shared
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    // eval
    std::string ckpt, manifest, split;
    std::string stats_split;  // eval's split carries a default, stats' does not
    // metrics
    std::string preds;
    std::int64_t repeats = 10;
    bool per_model = false;
    bool exhaustive = false;
    // flow
    std::string input;
    std::int64_t interval = 8;
    std::int64_t frames = 0;
    // synth
    std::string spec, preset;
    // stats / manifest
    std::string path;
};

std::string fmt(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

void print_report(std::ostream& out, const std::string& prefix, const EvalReport& r) {
    out << prefix << "accuracy " << fmt(r.accuracy_mean) << " ± " << fmt(r.accuracy_std) << "  f1 " << fmt(r.f1_mean)
        << " ± " << fmt(r.f1_std) << "  (repeats " << r.repeats << ", " << r.per_class << " per class)\n";
}

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

fs::path sibling_log(const std::string& out_file) { return fs::path(out_file + ".log.jsonl"); }

int cmd_train(const Options& o, std::ostream& out) {
    if (o.config.empty()) throw ConfigError("config", "train requires --config <file>");
    RunConfig cfg = load_run_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (cfg.output_dir.empty()) throw ConfigError("output_dir", "set output_dir in the config or pass --out");
    if (cfg.manifest.empty()) throw ConfigError("manifest", "no manifest path given");
    RunLog log(fs::path(cfg.output_dir) / "run_log.jsonl");
    log.config(run_config_to_json(cfg), cfg.seed);
    TrainOptions opts;
    opts.log = &log;
    opts.on_step = [&](const StepRecord& s) {
        out << "step " << s.step << " epoch " << s.epoch << " lr " << s.lr << " loss " << fmt(s.loss) << '\n';
    };
    const TrainResult r = train(cfg, opts);
    out << "trained " << r.steps.size() << " steps on " << r.train_clips << " clips; final epoch accuracy "
        << fmt(r.epoch_accuracy.empty() ? 0.0 : r.epoch_accuracy.back()) << "\ncheckpoint " << r.checkpoint.string()
        << '\n';
    log.event("done", {{"steps", r.steps.size()}});
    return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    if (o.ckpt.empty()) throw ConfigError("ckpt", "eval requires --ckpt <file>");
    if (o.manifest.empty()) throw ConfigError("manifest", "eval requires --manifest <file>");
    if (o.out.empty()) throw ConfigError("out", "eval requires --out <preds.jsonl>");
    if (!is_known_split(o.split)) throw ConfigError("split", "unknown split '" + o.split + "'");
    std::optional<std::string> expected;
    std::optional<RunConfig> requested;
    if (!o.config.empty()) {
        requested = load_run_config(o.config);
        expected = model_name(requested->model);
    }
    LoadedModel loaded = load_model(o.ckpt, expected);
    RunConfig cfg = loaded.config;
    if (requested) {
        cfg.preprocess = requested->preprocess;
        cfg.flow = requested->flow;
        cfg.decoder = requested->decoder;
        cfg.flow_cache = requested->flow_cache;
    }
    if (o.seed) cfg.seed = *o.seed;
    RunLog log(sibling_log(o.out));
    json resolved = run_config_to_json(cfg);
    resolved["eval"] = {{"ckpt", o.ckpt}, {"manifest", o.manifest}, {"split", o.split}, {"out", o.out}};
    log.config(resolved, cfg.seed);
    const Manifest manifest = load_manifest(o.manifest);
    const fs::path root = fs::path(o.manifest).has_parent_path() ? fs::path(o.manifest).parent_path() : fs::path(".");
    const PredictionSet preds = predict(*loaded.model, cfg, manifest, root, o.split);
    write_predictions(preds, o.out);
    log.event("predictions", {{"count", preds.size()}, {"path", o.out}});
    out << "wrote " << preds.size() << " predictions to " << o.out << '\n';
    return kExitOk;
}

int cmd_metrics(const Options& o, std::ostream& out) {
    if (o.preds.empty()) throw ConfigError("preds", "metrics requires --preds <file>");
    if (o.repeats < 1) throw ConfigError("repeats", "must be positive");
    const PredictionSet preds = read_predictions(o.preds);
    const std::uint64_t seed = o.seed.value_or(0);
    const EvalReport r = o.exhaustive ? balanced_metrics_exhaustive(preds) : balanced_metrics(preds, o.repeats, seed);
    print_report(out, "overall: ", r);
    if (o.per_model) {
        if (o.manifest.empty()) throw ConfigError("manifest", "--per-model requires --manifest <file>");
        for (const auto& row : per_generator_breakdown(preds, load_manifest(o.manifest), o.repeats, seed)) {
            if (row.report) {
                print_report(out, row.model + ": ", *row.report);
            } else {
                out << row.model << ": warning: " << row.warning << '\n';
            }
        }
    }
    return kExitOk;
}

int cmd_flow(const Options& o, std::ostream& out) {
    if (o.input.empty()) throw ConfigError("input", "flow requires --input <clip>");
    if (o.out.empty()) throw ConfigError("out", "flow requires --out <file>");
    const RunConfig cfg = config_or_default(o.config);
    RunLog log(sibling_log(o.out));
    json resolved = run_config_to_json(cfg);
    resolved["flow_job"] = {{"input", o.input}, {"interval", o.interval}, {"frames", o.frames}, {"out", o.out}};
    log.config(resolved, o.seed.value_or(cfg.seed));
    IngestOptions ingest;
    ingest.decoder = cfg.decoder;
    ingest.on_command = [&](const std::string& cmd) { log.event("decoder", {{"command", cmd}}); };
    const RawClip raw = ingest_external(o.input, ingest);
    const std::int64_t n = o.frames > 0 ? o.frames : raw.frames;
    if (o.interval < 1) throw ConfigError("interval", "must be positive");
    if (n <= o.interval) {
        throw ConfigError("interval", "K=" + std::to_string(o.interval) + " needs more than " + std::to_string(n) +
                                          " frames");
    }
    const auto idx = sample_frames(raw.frames, raw.fps, n, cfg.preprocess.target_fps, Mode::Eval);
    const Tensor clip = preprocess_frames(raw, idx, cfg.preprocess, false);
    const FlowField field = extract_flow_sequence(clip, o.interval, cfg.flow);
    CheckpointHeader header{"flow", "", 0, {{"interval", o.interval}, {"frames", n}, {"input", o.input},
                                            {"flow", run_config_to_json(cfg)["flow"]}}};
    save_checkpoint(o.out, header, {{"flow", field.flows}});
    log.event("flow", {{"fields", field.length()}, {"shape", field.flows.shape()}});
    out << "wrote " << field.length() << " flow fields " << shape_str(field.flows.shape()) << " to " << o.out << '\n';
    return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw ConfigError("out", "synth requires --out <dir>");
    SynthSpec spec;
    if (!o.spec.empty()) {
        std::ifstream in(o.spec);
        if (!in) throw ConfigError("spec", "cannot open " + o.spec);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& err) {
            throw ConfigError("spec", std::string("invalid JSON (") + err.what() + ")");
        }
        spec = synth_spec_from_json(j);
    } else if (!o.preset.empty()) {
        spec = synth_spec_for_generator(o.preset);
    }
    const std::uint64_t seed = o.seed.value_or(0);
    fs::create_directories(o.out);
    RunLog log(fs::path(o.out) / "run_log.jsonl");
    log.config(synth_spec_to_json(spec), seed);
    const Manifest m = synth_dataset(spec, seed, o.out);
    log.event("synth", {{"entries", m.size()}});
    out << "wrote " << m.size() << " clips and " << (fs::path(o.out) / "manifest.jsonl").string() << '\n';
    return kExitOk;
}

int cmd_stats(const Options& o, std::ostream& out) {
    if (o.manifest.empty()) throw ConfigError("manifest", "stats requires --manifest <file>");
    if (o.out.empty()) throw ConfigError("out", "stats requires --out <dir>");
    if (!o.stats_split.empty() && !is_known_split(o.stats_split)) {
        throw ConfigError("split", "unknown split '" + o.stats_split + "'");
    }
    Manifest m = load_manifest(o.manifest);
    if (!o.stats_split.empty()) m = filter_split(m, o.stats_split);
    fs::create_directories(o.out);
    RunLog log(fs::path(o.out) / "run_log.jsonl");
    log.config({{"manifest", o.manifest}, {"split", o.stats_split}, {"out", o.out}}, o.seed.value_or(0));
    const CompositionSummary summary = composition_summary(m);
    const std::vector<DistributionReport> reports = {resolution_histogram(m), fps_histogram(m), frame_count_histogram(m)};
    const RenderedFiles files = render_report(reports, summary, o.out);
    for (const auto& w : files.warnings) log.event("warning", {{"message", w}});
    out << composition_csv(summary);
    out << "wrote " << files.csv.size() << " csv and " << files.images.size() << " images to " << o.out << '\n';
    return kExitOk;
}

int cmd_manifest_validate(const Options& o, std::ostream& out) {
    const Manifest m = load_manifest(o.path);
    out << "ok: " << m.size() << " entries, " << clip_total(m) << " clips\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"DuB3D: dual-branch 3D transformer for generated-video detection", "dub3d"};
    app.require_subcommand(1);
    Options o;
    auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Seed for every RNG stream"); };

    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    train_cmd->add_option("--config", o.config, "Run config JSON");
    train_cmd->add_option("--out", o.out, "Output dir (overrides output_dir)");
    add_seed(train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "Predict one split with a checkpoint");
    eval_cmd->add_option("--ckpt", o.ckpt, "Checkpoint file");
    eval_cmd->add_option("--manifest", o.manifest, "Manifest JSONL");
    eval_cmd->add_option("--split", o.split, "Split name")->default_val("in_domain_test");
    eval_cmd->add_option("--out", o.out, "Predictions JSONL");
    eval_cmd->add_option("--config", o.config, "Run config; its model must match the checkpoint");
    add_seed(eval_cmd);

    auto* metrics_cmd = app.add_subcommand("metrics", "Balanced accuracy/F1 from predictions");
    metrics_cmd->add_option("--preds", o.preds, "Predictions JSONL");
    metrics_cmd->add_option("--repeats", o.repeats, "Balanced resampling repeats")->default_val(10);
    metrics_cmd->add_flag("--per-model", o.per_model, "Per-generator breakdown (needs --manifest)");
    metrics_cmd->add_flag("--exhaustive", o.exhaustive, "Enumerate every majority subset");
    metrics_cmd->add_option("--manifest", o.manifest, "Manifest JSONL");
    add_seed(metrics_cmd);

    auto* flow_cmd = app.add_subcommand("flow", "Extract an interval-K flow sequence from a clip");
    flow_cmd->add_option("--input", o.input, "Clip: RAWV file, frame dir, or container");
    flow_cmd->add_option("--interval", o.interval, "Frame interval K")->default_val(8);
    flow_cmd->add_option("--frames", o.frames, "Frames to use (default: all)");
    flow_cmd->add_option("--out", o.out, "Output flow file");
    flow_cmd->add_option("--config", o.config, "Run config (preprocess and flow sections)");
    add_seed(flow_cmd);

    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic motion dataset");
    synth_cmd->add_option("--spec", o.spec, "Synth spec JSON");
    synth_cmd->add_option("--preset", o.preset, "Generator preset name");
    synth_cmd->add_option("--out", o.out, "Output dir");
    add_seed(synth_cmd);

    auto* stats_cmd = app.add_subcommand("stats", "Composition and distribution reports");
    stats_cmd->add_option("--manifest", o.manifest, "Manifest JSONL");
    stats_cmd->add_option("--split", o.stats_split, "Restrict to one split");
    stats_cmd->add_option("--out", o.out, "Output dir");
    add_seed(stats_cmd);

    auto* manifest_cmd = app.add_subcommand("manifest", "Manifest utilities");
    manifest_cmd->require_subcommand(1);
    auto* validate_cmd = manifest_cmd->add_subcommand("validate", "Check a manifest file");
    validate_cmd->add_option("path", o.path, "Manifest JSONL")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "dub3d: error[usage]: " << e.what() << '\n' << app.help();
        return kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(o, out);
        if (*eval_cmd) return cmd_eval(o, out);
        if (*metrics_cmd) return cmd_metrics(o, out);
        if (*flow_cmd) return cmd_flow(o, out);
        if (*synth_cmd) return cmd_synth(o, out);
        if (*stats_cmd) return cmd_stats(o, out);
        if (*validate_cmd) return cmd_manifest_validate(o, out);
        err << "dub3d: error[usage]: no subcommand\n" << app.help();
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "dub3d: error[config]: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        err << "dub3d: error[data]: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "dub3d: error[internal]: " << e.what() << '\n';
        return kExitInternal;
    }
}

}  // namespace dub3d
