#include "tgtn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "tgtn/error.hpp"
#include "tgtn/graph.hpp"
#include "tgtn/metrics.hpp"
#include "tgtn/model.hpp"
#include "tgtn/stream.hpp"
#include "tgtn/train.hpp"
#include "tgtn/txgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace tgtn::cli {

json apply_overrides(json config, const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw Error("--set expects key=value, got '" + a + "'");
        const std::string path = a.substr(0, eq);
        const std::string text = a.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::exception&) {
            value = text;
        }
        json* node = &config;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!node->is_object() || !node->contains(key)) throw Error("--set: unknown configuration key '" + path + "'");
            node = &(*node)[key];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        *node = std::move(value);
    }
    return config;
}

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(path + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

// Rejects keys that the defaults do not know about, so typos fail loudly.
void check_known_keys(const json& defaults, const json& given, const std::string& where) {
    if (!given.is_object() || !defaults.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        if (!defaults.contains(key)) throw UsageError("unknown configuration key '" + where + key + "'");
        check_known_keys(defaults.at(key), value, where + key + ".");
    }
}

// Like merge_patch, but null is a value rather than a deletion.
void overlay(json& base, const json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (const auto& [key, value] : patch.items()) {
        if (base.contains(key)) overlay(base[key], value);
        else base[key] = value;
    }
}

std::string utc_stamp(std::chrono::system_clock::time_point t, const char* fmt) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, fmt, &tm);
    return buf;
}

// Options shared by every command.
struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string runs_root = "runs";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "JSON configuration file (a manifest.json is accepted too)");
    cmd->add_option("--set", c.sets, "Override a configuration value: dotted.key=value (repeatable)");
    cmd->add_option("--seed", c.seed, "Override every seed in the configuration");
    cmd->add_option("--out", c.out_dir, "Output directory (default: <runs-root>/<command>-<time>-s<seed>)");
    cmd->add_option("--runs-root", c.runs_root, "Parent of auto-named run directories");
}

// defaults <- config file <- --set overrides.
json resolve(const json& defaults, const Common& c) {
    json cfg = defaults;
    if (!c.config_path.empty()) {
        json file = read_json_file(c.config_path);
        if (file.is_object() && file.contains("command") && file.contains("config")) file = file.at("config");
        check_known_keys(defaults, file, "");
        overlay(cfg, file);
    }
    try {
        return apply_overrides(std::move(cfg), c.sets);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

class Run {
public:
    Run(std::string command, const Common& common, const std::vector<std::string>& argv)
        : command_(std::move(command)), common_(common), argv_(argv), started_(std::chrono::system_clock::now()) {}

    // Creates the output directory once the seed is known.
    const fs::path& open(std::uint64_t seed) {
        seed_ = seed;
        if (!common_.out_dir.empty()) {
            dir_ = common_.out_dir;
        } else {
            const std::string base =
                command_ + "-" + utc_stamp(started_, "%Y%m%dT%H%M%SZ") + "-s" + std::to_string(seed);
            dir_ = fs::path(common_.runs_root) / base;
            for (int n = 2; fs::exists(dir_); ++n) dir_ = fs::path(common_.runs_root) / (base + "-" + std::to_string(n));
        }
        fs::create_directories(dir_);
        return dir_;
    }

    void input(const std::string& name, const std::string& path) { inputs_[name] = path; }
    void config(json resolved) { config_ = std::move(resolved); }

    fs::path output(const std::string& name) {
        outputs_.push_back(name);
        return dir_ / name;
    }

    void finish() {
        ordered_json m;
        m["command"] = command_;
        m["tool_version"] = std::string("tgtn ") + kVersion;
        m["seed"] = seed_;
        m["config"] = config_;
        m["inputs"] = inputs_;
        m["outputs"] = outputs_;
        m["argv"] = argv_;
        m["started_at"] = utc_stamp(started_, "%Y-%m-%dT%H:%M:%SZ");
        m["finished_at"] = utc_stamp(std::chrono::system_clock::now(), "%Y-%m-%dT%H:%M:%SZ");
        write_json(dir_ / "manifest.json", m);
    }

    const fs::path& dir() const { return dir_; }

private:
    std::string command_;
    Common common_;
    std::vector<std::string> argv_;
    std::chrono::system_clock::time_point started_;
    fs::path dir_;
    std::uint64_t seed_ = 0;
    ordered_json inputs_ = ordered_json::object();
    json config_;
    std::vector<std::string> outputs_;
};

// ---- gen ----------------------------------------------------------------

void cmd_gen(const Common& c, const std::vector<std::string>& argv, std::ostream& out) {
    json cfg = resolve(json(GenConfig{}), c);
    if (c.seed) cfg["seed"] = *c.seed;
    const auto gc = cfg.get<GenConfig>();
    validate(gc);
    Run run("gen", c, argv);
    run.open(gc.seed);
    run.config(json(gc));
    const auto ds = generate(gc);
    save_dataset(ds, run.output("dataset.jsonl"));
    run.finish();
    out << "wrote " << ds.size() << " transactions (" << count_label(ds, Label::fraud) << " fraud) to "
        << (run.dir() / "dataset.jsonl").string() << "\n";
}

// ---- train --------------------------------------------------------------

json train_defaults() {
    return json{{"model", TgtnConfig{}},    {"train", TrainConfig{}},   {"edge_rule", EdgeRule{}},
                {"encoder", EncoderConfig{}}, {"keep_ratio", 3.0},      {"train_before_ts", nullptr},
                {"cv_folds", 5}};
}

void cmd_train(const Common& c, const std::string& data, const std::string& grid_path,
               const std::vector<std::string>& argv, std::ostream& out) {
    json cfg = resolve(train_defaults(), c);
    if (c.seed) cfg["train"]["seed"] = *c.seed;
    auto model = cfg.at("model").get<TgtnConfig>();
    auto tc = cfg.at("train").get<TrainConfig>();
    const auto rule = cfg.at("edge_rule").get<EdgeRule>();
    const auto enc = cfg.at("encoder").get<EncoderConfig>();
    validate(model);
    validate(tc);
    validate(rule);
    validate(enc);
    const double keep_ratio = cfg.at("keep_ratio").get<double>();
    const int folds = cfg.at("cv_folds").get<int>();

    auto ds = load_dataset(data);
    if (!cfg.at("train_before_ts").is_null()) ds = temporal_split(ds, cfg.at("train_before_ts").get<std::int64_t>()).first;
    if (keep_ratio > 0.0) ds = negative_sample(ds, keep_ratio, tc.seed);

    Run run("train", c, argv);
    run.open(tc.seed);
    run.input("data", data);

    if (!grid_path.empty()) {
        run.input("grid", grid_path);
        const json grid_json = read_json_file(grid_path);
        if (!grid_json.is_array() || grid_json.empty()) throw Error(grid_path + ": grid must be a non-empty array");
        std::vector<GridEntry> grid;
        json resolved_grid = json::array();
        for (const auto& patch : grid_json) {
            json entry = {{"model", cfg.at("model")}, {"train", cfg.at("train")}};
            check_known_keys(entry, patch, "grid.");
            overlay(entry, patch);
            if (c.seed) entry["train"]["seed"] = *c.seed;
            GridEntry g{entry.at("model").get<TgtnConfig>(), entry.at("train").get<TrainConfig>()};
            validate(g.model);
            validate(g.train);
            resolved_grid.push_back(entry);
            grid.push_back(g);
        }
        cfg["grid"] = resolved_grid;
        const auto cv = kfold_cv(ds, folds, grid, rule, enc);
        write_json(run.output("cv_report.json"), to_json(cv));
        model = cv.selected_entry.model;
        tc = cv.selected_entry.train;
        out << "cross-validation selected grid entry " << cv.selected << " (mean AP "
            << cv.entries[cv.selected].mean_ap << ")\n";
    }
    run.config(cfg);

    const auto graph = build_graph(ds.transactions, rule, enc);
    const auto result = train(graph, tc, model);
    save_checkpoint(run.output("checkpoint.json"), result.params, rule, enc);
    write_text(run.output("history.csv"), history_csv(result.history));
    ordered_json summary;
    summary["best_epoch"] = result.best_epoch;
    summary["epochs_run"] = result.history.size();
    summary["pos_weight"] = result.pos_weight;
    summary["n_fit"] = result.n_fit;
    summary["n_val"] = result.n_val;
    summary["model"] = json(model);
    summary["train"] = json(tc);
    write_json(run.output("train_summary.json"), summary);
    run.finish();
    out << "trained on " << graph.size() << " nodes; best epoch " << result.best_epoch << " of "
        << result.history.size() << "; outputs in " << run.dir().string() << "\n";
}

// ---- eval ---------------------------------------------------------------

void cmd_eval(const Common& c, const std::string& ckpt_path, const std::string& data,
              const std::vector<std::string>& argv, std::ostream& out) {
    const json defaults = {{"threshold", 0.5}, {"from_ts", nullptr}, {"name", "TGTN"}};
    json cfg = resolve(defaults, c);
    const double threshold = cfg.at("threshold").get<double>();
    const auto ckpt = load_checkpoint(ckpt_path);
    const auto ds = load_dataset(data);

    const auto graph = build_graph(ds.transactions, ckpt.rule, ckpt.encoder);
    const auto probs = forward(graph, ckpt.params);
    std::optional<std::int64_t> from;
    if (!cfg.at("from_ts").is_null()) from = cfg.at("from_ts").get<std::int64_t>();

    std::vector<ScoredTx> scored;
    std::vector<double> scores;
    std::vector<int> labels;
    std::ostringstream csv;
    csv << "tx_id,ts,score,label\n";
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const auto& tx = graph.transaction(i);
        if (from && tx.timestamp < *from) continue;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", probs[i]);
        csv << tx.tx_id << ',' << tx.timestamp << ',' << buf << ',' << to_string(tx.label) << '\n';
        if (tx.label == Label::unknown) continue;
        const int y = tx.label == Label::fraud ? 1 : 0;
        scored.push_back({tx.timestamp, probs[i], y});
        scores.push_back(probs[i]);
        labels.push_back(y);
    }
    evaluate(scores, labels, threshold);  // single-class data fails here
    const auto report = monthly_report(scored, threshold);

    Run run("eval", c, argv);
    run.open(ckpt.params.seed);
    run.input("checkpoint", ckpt_path);
    run.input("data", data);
    run.config(cfg);
    write_json(run.output("metrics.json"), to_json(report));
    const auto table = render_table({{cfg.at("name").get<std::string>(), report}});
    write_text(run.output("metrics.txt"), table);
    write_text(run.output("scores.csv"), csv.str());
    run.finish();
    out << table;
}

// ---- ablate -------------------------------------------------------------

void cmd_ablate(const Common& c, const std::string& data, const std::vector<std::string>& argv, std::ostream& out) {
    const json defaults = {{"gen", GenConfig{}}, {"ablation", AblationConfig{}}};
    json cfg = resolve(defaults, c);
    if (c.seed) {
        cfg["gen"]["seed"] = *c.seed;
        cfg["ablation"]["train"]["seed"] = *c.seed;
    }
    const auto ac = cfg.at("ablation").get<AblationConfig>();
    Run run("ablate", c, argv);
    run.open(ac.train.seed);

    Dataset ds;
    if (data.empty()) {
        const auto gc = cfg.at("gen").get<GenConfig>();
        validate(gc);
        ds = generate(gc);
        save_dataset(ds, run.output("dataset.jsonl"));
    } else {
        cfg.erase("gen");
        run.input("data", data);
        ds = load_dataset(data);
    }
    run.config(cfg);
    const auto result = run_ablation(ds, ac);
    write_json(run.output("ablation.json"), to_json(result));
    const auto table = render_table(result);
    write_text(run.output("ablation.txt"), table);
    run.finish();
    out << table;
}

// ---- stream -------------------------------------------------------------

void cmd_stream(const Common& c, const std::string& ckpt_path, const std::string& data,
                const std::vector<std::string>& argv, std::ostream& out) {
    const json defaults = {{"window", WindowConfig{}}, {"rules", RuleEngine{}}, {"consistency_check", true}};
    json cfg = resolve(defaults, c);
    const auto window = cfg.at("window").get<WindowConfig>();
    const auto rules = cfg.at("rules").get<RuleEngine>();
    const auto ckpt = load_checkpoint(ckpt_path);
    validate(window, ckpt.rule);
    const auto ds = load_dataset(data, ReadOrder::file);

    Run run("stream", c, argv);
    run.open(ckpt.params.seed);
    run.input("checkpoint", ckpt_path);
    run.input("data", data);
    run.config(cfg);

    const auto result = replay(ds, ckpt.params, ckpt.rule, ckpt.encoder, window, rules);
    write_text(run.output("stream.jsonl"), records_jsonl(result.records));
    ordered_json stats;
    stats["stats"] = to_json(result.stats);
    if (cfg.at("consistency_check").get<bool>()) {
        const double diff = consistency_check(ds, ckpt.params, ckpt.rule, ckpt.encoder, window, rules);
        stats["consistency_max_abs_diff"] = diff;
    }
    write_json(run.output("stream_stats.json"), stats);
    run.finish();
    out << stats.dump(2) << "\n";
}

// ---- report -------------------------------------------------------------

std::string render_report(const json& j, const std::string& name) {
    if (j.contains("models")) {
        std::vector<std::pair<std::string, MetricsReport>> rows;
        for (const auto& m : j.at("models")) rows.emplace_back(m.at("name").get<std::string>(), metrics_report_from_json(m.at("report")));
        return render_table(rows);
    }
    if (j.contains("overall") && j.contains("months")) return render_table({{name, metrics_report_from_json(j)}});
    if (j.contains("entries") && j.contains("k")) {
        std::ostringstream os;
        os << "k = " << j.at("k").get<int>() << ", selected entry " << j.at("selected").get<std::size_t>() << "\n";
        os << "entry  mean AP   std AP    mean AUC  std AUC\n";
        std::size_t i = 0;
        for (const auto& e : j.at("entries")) {
            auto cell = [](const json& v) {
                char buf[32];
                if (v.is_null()) return std::string("      -  ");
                std::snprintf(buf, sizeof buf, "%9.4f", v.get<double>());
                return std::string(buf);
            };
            char idx[16];
            std::snprintf(idx, sizeof idx, "%5zu", i++);
            os << idx << cell(e.at("mean_ap")) << " " << cell(e.at("std_ap")) << " " << cell(e.at("mean_auc")) << " "
               << cell(e.at("std_auc")) << "\n";
        }
        return os.str();
    }
    throw Error(name + ": not a metrics, ablation or cross-validation report");
}

void cmd_report(const Common& c, const std::vector<std::string>& inputs, const std::vector<std::string>& argv,
                std::ostream& out) {
    json cfg = resolve(json::object(), c);
    std::string text;
    for (const auto& path : inputs) {
        const json j = read_json_file(path);
        text += "== " + fs::path(path).filename().string() + "\n" + render_report(j, fs::path(path).stem().string()) + "\n";
    }
    Run run("report", c, argv);
    run.open(c.seed.value_or(0));
    for (std::size_t i = 0; i < inputs.size(); ++i) run.input("report" + std::to_string(i), inputs[i]);
    run.config(cfg);
    write_text(run.output("report.txt"), text);
    run.finish();
    out << text;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transaction-graph fraud detection toolkit", "tgtn"};
    app.set_version_flag("--version", std::string("tgtn ") + kVersion);
    app.require_subcommand(1, 1);

    Common common;
    std::string data, checkpoint, grid;
    std::vector<std::string> inputs;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic transaction dataset (JSONL)");
    add_common(gen, common);

    auto* tr = app.add_subcommand("train", "Train a model on a dataset; optional k-fold grid search");
    add_common(tr, common);
    tr->add_option("--data", data, "Dataset JSONL")->required();
    tr->add_option("--grid", grid, "JSON array of {model, train} overrides to cross-validate");

    auto* ev = app.add_subcommand("eval", "Score a dataset with a checkpoint; month-wise AP / AUC");
    add_common(ev, common);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
    ev->add_option("--data", data, "Dataset JSONL")->required();

    auto* ab = app.add_subcommand("ablate", "Compare TGTN, TGTN-noPE, TGTN-noAT and RFM-logistic");
    add_common(ab, common);
    ab->add_option("--data", data, "Dataset JSONL (default: generate from the 'gen' config section)");

    auto* st = app.add_subcommand("stream", "Replay a dataset through the rule engine and a sliding-window graph");
    add_common(st, common);
    st->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
    st->add_option("--data", data, "Dataset JSONL, replayed in file order")->required();

    auto* rep = app.add_subcommand("report", "Render stored JSON reports as text tables");
    add_common(rep, common);
    rep->add_option("inputs", inputs, "Report JSON files")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << "tgtn " << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (gen->parsed()) cmd_gen(common, args, out);
        else if (tr->parsed()) cmd_train(common, data, grid, args, out);
        else if (ev->parsed()) cmd_eval(common, checkpoint, data, args, out);
        else if (ab->parsed()) cmd_ablate(common, data, args, out);
        else if (st->parsed()) cmd_stream(common, checkpoint, data, args, out);
        else if (rep->parsed()) cmd_report(common, inputs, args, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace tgtn::cli
