#include "geaudit/analytics.hpp"
#include "geaudit/classifier.hpp"
#include "geaudit/common.hpp"
#include "geaudit/pipeline.hpp"
#include "geaudit/serve.hpp"
#include "geaudit/store.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace geaudit;
using Json = nlohmann::json;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

serve::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

void print_stage(const pipeline::StageResult& r) {
    if (r.noop) {
        fmt::print("{}: inputs unchanged, nothing to do\n", r.stage);
        return;
    }
    fmt::print("{}: {} ledger entries appended, {} items already done\n", r.stage, r.appended, r.skipped);
    for (const auto& n : r.notes) fmt::print(stderr, "  {}\n", n);
}

int report_pending(const std::vector<std::string>& hosts) {
    fmt::print(stderr, "{} host(s) pending adjudication:\n", hosts.size());
    for (const auto& h : hosts) fmt::print(stderr, "  {}\n", h);
    fmt::print(stderr, "resolve them with `geaudit adjudicate` or pass --allow-pending\n");
    return kExitDomain;
}

std::vector<std::filesystem::path> expand_fixtures(const std::vector<std::string>& args) {
    std::vector<std::filesystem::path> out;
    for (const auto& a : args) {
        const std::filesystem::path p(a);
        if (!std::filesystem::is_directory(p)) {
            out.push_back(p);
            continue;
        }
        std::vector<std::filesystem::path> found;
        for (const auto& e : std::filesystem::directory_iterator(p)) {
            if (e.path().extension() != ".jsonl") continue;
            std::ifstream in(e.path());
            std::string first;
            std::getline(in, first);
            if (first.find("\"geaudit-fixture\"") != std::string::npos) found.push_back(e.path());
        }
        std::sort(found.begin(), found.end());
        if (found.empty()) throw NotFoundError("no fixture files in " + p.string());
        out.insert(out.end(), found.begin(), found.end());
    }
    return out;
}

int adjudicate_interactive(store::Store& store, const std::string& run, const std::string& adjudicator) {
    const auto pending = pipeline::load_queue(store, run)->pending();
    if (pending.empty()) {
        fmt::print("queue is empty\n");
        return 0;
    }
    std::string labels;
    for (auto c : classifier::all_categories()) labels += (labels.empty() ? "" : "/") + std::string(classifier::to_string(c));
    std::size_t index = 0;
    for (const auto& item : pending) {
        ++index;
        fmt::print("\n[{}/{}] {}  ({})\n", index, pending.size(), item.host, item.reason);
        fmt::print("url: {}\n", item.url);
        for (const auto& v : item.votes) {
            fmt::print("  {}: {}{}\n", v.judge, v.category ? std::string(classifier::to_string(*v.category)) : "-",
                       v.failure.empty() ? "" : " (" + v.failure + ")");
        }
        if (!item.whois_excerpt.empty()) fmt::print("whois:\n{}\n", item.whois_excerpt);
        while (true) {
            fmt::print("label [{}], s to skip, q to quit: ", labels);
            std::fflush(stdout);
            std::string line;
            if (!std::getline(std::cin, line)) {
                fmt::print("\n");
                goto done;
            }
            const auto t = std::string(text::trim(line));
            if (t == "q") goto done;
            if (t == "s") break;
            const auto cat = classifier::parse_label(t);
            if (!cat) {
                fmt::print("not a label: {}\n", t);
                continue;
            }
            try {
                pipeline::apply_decisions(store, run, {{item.host, *cat, adjudicator, now_iso8601()}}, "interactive");
                fmt::print("{} -> {}\n", item.host, classifier::to_string(*cat));
            } catch (const ConflictError& e) {
                fmt::print("{}\n", e.what());
            }
            break;
        }
    }
done:
    const auto left = pipeline::load_queue(store, run)->pending();
    if (!left.empty()) {
        std::vector<std::string> hosts;
        for (const auto& i : left) hosts.push_back(i.host);
        return report_pending(hosts);
    }
    fmt::print("queue drained\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"geaudit: audit sources cited by generative search engines"};
    app.require_subcommand(1);
    std::string store_dir = std::getenv("GEAUDIT_STORE") ? std::getenv("GEAUDIT_STORE") : "geaudit-store";
    bool verbose = false;
    app.add_option("--store", store_dir, "Run store directory (env GEAUDIT_STORE)");
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    std::string study, run, out, fixture_record, decisions_file, adjudicator = "operator", host = "127.0.0.1";
    std::vector<std::string> fixtures;
    bool allow_pending = false, no_csv = false, no_svg = false, finalize = false;
    std::uint64_t seed = 0;
    int port = 8787;

    auto* init = app.add_subcommand("init", "Create a run for a study file");
    init->add_option("--study", study, "Study JSON")->required()->check(CLI::ExistingFile);
    init->add_option("--run", run, "Run id (generated when omitted)");

    auto* render = app.add_subcommand("render-questions", "Render the question corpus as JSONL");
    render->add_option("--study", study, "Study JSON")->required()->check(CLI::ExistingFile);
    render->add_option("--out", out, "Output file (stdout when omitted)");

    auto* collect = app.add_subcommand("collect", "Ask the providers (network)");
    collect->add_option("--run", run)->required();
    collect->add_option("--record", fixture_record, "Also write exchanges to this fixture file");

    auto* replay = app.add_subcommand("replay", "Load recorded exchanges (no network)");
    replay->add_option("--run", run, "Run id; created from --study when missing");
    replay->add_option("--study", study, "Study JSON, for a new run")->check(CLI::ExistingFile);
    replay->add_option("--fixtures", fixtures, "Fixture files or directories")->required();

    auto* classify = app.add_subcommand("classify", "Classify cited publishers");
    classify->add_option("--run", run)->required();
    classify->add_flag("--allow-pending", allow_pending, "Exit 0 even if hosts await adjudication");

    auto* adjudicate = app.add_subcommand("adjudicate", "Resolve queued hosts (terminal loop or decisions file)");
    adjudicate->add_option("--run", run)->required();
    adjudicate->add_option("--decisions", decisions_file, "JSONL decisions file")->check(CLI::ExistingFile);
    adjudicate->add_option("--adjudicator", adjudicator, "Name recorded with interactive decisions");

    auto* reflect = app.add_subcommand("reflect", "Fetch cited pages and score reflection");
    reflect->add_option("--run", run)->required();

    auto* webstruct = app.add_subcommand("webstruct", "Compare cited and uncited page structure");
    webstruct->add_option("--run", run)->required();
    auto* seed_opt = webstruct->add_option("--seed", seed, "Downsampling seed (default: study seed)");

    auto* analyze = app.add_subcommand("analyze", "Build the report and record its digest");
    analyze->add_option("--run", run)->required();
    analyze->add_flag("--allow-pending", allow_pending, "Exclude unresolved hosts instead of refusing");
    analyze->add_flag("--finalize", finalize, "Close the run to further writes");

    auto* report = app.add_subcommand("report", "Write report.json, CSV tables and SVG charts");
    report->add_option("--run", run)->required();
    report->add_option("--out", out, "Output directory")->required();
    report->add_flag("--allow-pending", allow_pending, "Exclude unresolved hosts instead of refusing");
    report->add_flag("--no-csv", no_csv);
    report->add_flag("--no-svg", no_svg);

    auto* serve_cmd = app.add_subcommand("serve", "Serve the JSON API for the review UI");
    serve_cmd->add_option("--host", host);
    serve_cmd->add_option("--port", port);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

    try {
        store::Store store(store_dir);
        if (*init) {
            const auto info = pipeline::init_run(store, study, run.empty() ? std::nullopt : std::optional(run));
            fmt::print("{}\n", info.id);
            return 0;
        }
        if (*render) {
            const auto s = pipeline::load_study(study);
            std::string body;
            std::map<std::string, std::size_t> per_country;
            for (const auto& q : s.questions()) {
                body += Json{{"id", q.id}, {"template", q.template_id}, {"party", q.party_id}, {"language", q.language},
                             {"text", q.rendered_text}}.dump() + "\n";
                ++per_country[s.manifest.find(q.party_id)->country];
            }
            if (out.empty()) std::cout << body;
            else write_file_atomic(out, body);
            for (const auto& [c, n] : per_country) fmt::print(stderr, "{}: {} questions\n", c, n);
            return 0;
        }
        if (*collect) {
            pipeline::Services services;
            const auto r = pipeline::collect(store, run, services,
                                             fixture_record.empty() ? std::nullopt : std::optional<std::filesystem::path>(fixture_record));
            print_stage(r);
            return r.notes.empty() ? 0 : kExitDomain;
        }
        if (*replay) {
            if (run.empty() || !store.has_run(run)) {
                // A fixture directory may carry its own study.
                for (const auto& f : fixtures)
                    if (study.empty() && std::filesystem::is_regular_file(std::filesystem::path(f) / "study.json"))
                        study = (std::filesystem::path(f) / "study.json").string();
                if (study.empty()) throw ConfigError("replay: --study is required to create a run");
                run = pipeline::init_run(store, study, run.empty() ? std::nullopt : std::optional(run)).id;
                fmt::print("run {}\n", run);
            }
            print_stage(pipeline::replay_fixtures(store, run, expand_fixtures(fixtures)));
            return 0;
        }
        if (*classify) {
            pipeline::Services services;
            const auto r = pipeline::classify(store, run, services);
            print_stage(r.stage);
            if (!r.pending_hosts.empty()) {
                if (allow_pending) {
                    fmt::print(stderr, "{} host(s) pending adjudication (allowed)\n", r.pending_hosts.size());
                    return 0;
                }
                return report_pending(r.pending_hosts);
            }
            return 0;
        }
        if (*adjudicate) {
            if (decisions_file.empty()) return adjudicate_interactive(store, run, adjudicator);
            const auto decisions = classifier::read_decisions(decisions_file);
            const auto source = "file:" + std::filesystem::path(decisions_file).filename().string() + " sha256:" +
                                sha256_hex(read_file(decisions_file));
            const auto applied = pipeline::apply_decisions(store, run, decisions, source);
            fmt::print("adjudicate: {} decision(s) applied, {} already recorded\n", applied.size(),
                       decisions.size() - applied.size());
            const auto left = pipeline::load_queue(store, run)->pending();
            if (!left.empty()) {
                std::vector<std::string> hosts;
                for (const auto& i : left) hosts.push_back(i.host);
                return report_pending(hosts);
            }
            return 0;
        }
        if (*reflect) {
            pipeline::Services services;
            print_stage(pipeline::reflect(store, run, services));
            return 0;
        }
        if (*webstruct) {
            pipeline::Services services;
            print_stage(pipeline::webstruct(store, run, services, seed_opt->count() ? std::optional(seed) : std::nullopt));
            return 0;
        }
        if (*analyze) {
            const auto r = pipeline::analyze(store, run, allow_pending);
            fmt::print("analyze: {} citations, {} answers, {} pending host(s) excluded\n", r.at("citations").size(),
                       r.at("provenance").at("answers").get<std::size_t>(), r.at("pending_hosts").size());
            if (finalize) store.open_writer(run)->finalize();
            return 0;
        }
        if (*report) {
            const auto r = pipeline::current_report(store, run, allow_pending);
            analytics::EmitOptions opts;
            opts.csv = !no_csv;
            opts.svg = !no_svg;
            for (const auto& p : analytics::emit_report(r, out, opts)) fmt::print("{}\n", p.string());
            return 0;
        }
        if (*serve_cmd) {
            serve::Server server(store, {host, port});
            const int bound = server.bind();
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            fmt::print("serving {} on http://{}:{}{}\n", store_dir, host, bound, serve::kApiPrefix);
            std::fflush(stdout);
            server.listen();
            g_server = nullptr;
            return 0;
        }
    } catch (const PendingError& e) {
        return report_pending(e.hosts());
    } catch (const ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitDomain;
    }
    return kExitUsage;
}
