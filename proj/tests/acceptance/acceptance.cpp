// Prints one PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include "classifier_rig.hpp"
#include "golden.hpp"
#include "oracles.hpp"
#include "synth.hpp"
#include "testutil.hpp"

#include "geaudit/analytics.hpp"
#include "geaudit/common.hpp"
#include "geaudit/corpus.hpp"
#include "geaudit/harvest.hpp"
#include "geaudit/pipeline.hpp"
#include "geaudit/reflection.hpp"
#include "geaudit/stattests.hpp"

#include <fmt/core.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace geaudit;
using Json = nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    std::vector<std::string> problems;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (problems.size() < 5) problems.push_back(what);
        }
    }
};

Outcome golden_reproduction() {
    Outcome o;
    const auto study = pipeline::load_study(testutil::golden_fixture_dir() / "study.json");
    // Every collaborator is a recording or local; nothing can reach the network.
    o.require(study.whois.value("kind", "") == "replay", "whois is not replayed");
    o.require(study.harvest.value("kind", "") == "replay", "pages are not replayed");
    o.require(study.embedding.value("kind", "") == "pseudo", "embedding is not the pseudo backend");
    for (const auto& j : study.judges) o.require(j.kind == "replay", "judge " + j.id + " is not replayed");

    testutil::TempDir tmp;
    store::Store store(tmp / "store");
    const auto start = std::chrono::steady_clock::now();
    const auto report = testutil::golden_full(store, "golden");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto got = analytics::dump_report(report);
    const auto want = read_file(testutil::golden_report_path());
    o.require(got == want, fmt::format("report differs from tests/golden/report.json ({} vs {} bytes)", got.size(), want.size()));
    o.require(secs < 120.0, fmt::format("took {:.1f}s", secs));

    // Recorded exchanges include the one deliberately malformed answer.
    std::set<std::string> parties, providers;
    std::map<std::string, std::set<int>> repeats;
    for (const auto& e : store.scan("golden", {"exchange"})) {
        const auto x = ge::exchange_from_json(e.payload.at("exchange"));
        parties.insert(x.party_id);
        providers.insert(x.provider);
        repeats[x.provider + "/" + x.question_id].insert(x.repeat_index);
    }
    std::size_t min_repeats = repeats.empty() ? 0 : 99;
    for (const auto& [k, v] : repeats) min_repeats = std::min(min_repeats, v.size());
    o.require(parties.size() >= 2 && providers.size() >= 2, "fewer than 2 parties x 2 providers");
    o.require(min_repeats >= 5, fmt::format("a question has only {} repeats", min_repeats));
    o.detail = fmt::format("{} bytes identical; {} parties x {} providers x {} repeats; {:.2f}s, offline", got.size(),
                           parties.size(), providers.size(), min_repeats, secs);
    return o;
}

Outcome mw_oracle() {
    Outcome o;
    std::mt19937_64 rng(500);
    double worst = 0;
    for (int t = 0; t < 500; ++t) {
        const auto [a, b] = oracles::random_tie_free_pair(rng, 2, 7);
        const auto r = stats::mann_whitney_u(stats::Sample("a", a), stats::Sample("b", b));
        const double diff = std::abs(r.p_value - oracles::mw_exact_p_bruteforce(a, b));
        worst = std::max(worst, diff);
        o.require(r.method == stats::Method::MwExact, "exact method not used");
        o.require(r.statistic == oracles::u_by_pair_counting(a, b), "U differs from pair counting");
        o.require(diff <= 1e-9, fmt::format("p differs by {:.3g}", diff));
    }
    std::uniform_int_distribution<int> size(1, 40), val(0, 6);
    for (int t = 0; t < 10000; ++t) {
        std::vector<double> a(size(rng)), b(size(rng));
        for (auto& x : a) x = val(rng);
        for (auto& x : b) x = val(rng);
        const double ua = stats::mann_whitney_u(stats::Sample("a", a), stats::Sample("b", b)).statistic;
        const double ub = stats::mann_whitney_u(stats::Sample("b", b), stats::Sample("a", a)).statistic;
        o.require(ua + ub == static_cast<double>(a.size() * b.size()), "U_a + U_b != n1*n2");
    }
    o.detail = fmt::format("500 exact p within {:.2g}; U_a+U_b=n1n2 on 10000 tied pairs", worst);
    return o;
}

Outcome ks_oracle() {
    Outcome o;
    std::mt19937_64 rng(501);
    std::uniform_int_distribution<int> size(1, 30), val(-6, 6);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> a(size(rng)), b(size(rng));
        for (auto& x : a) x = val(rng) + (t % 2 ? 0.25 * val(rng) : 0.0);
        for (auto& x : b) x = val(rng);
        const auto r = stats::ks_two_sample(stats::Sample("a", a), stats::Sample("b", b));
        o.require(r.statistic == oracles::ks_d_bruteforce(a, b), "D differs from brute force");
        o.require(r.statistic >= 0.0 && r.statistic <= 1.0, "D outside [0,1]");
        o.require(r.p_value >= 0.0 && r.p_value <= 1.0, "p outside [0,1]");
        const auto same = stats::ks_two_sample(stats::Sample("a", a), stats::Sample("a2", a));
        o.require(same.statistic == 0.0 && same.p_value == 1.0, "identical samples: D != 0 or p != 1");
    }
    o.detail = "500 pairs: D exact, in [0,1]; identical samples D=0 p=1";
    return o;
}

reflection::EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g;
    std::vector<double> v(dim);
    for (auto& x : v) x = g(rng);
    return reflection::EmbeddingVector::normalized(v);
}

Outcome sim_max_oracle() {
    Outcome o;
    std::mt19937_64 rng(502);
    std::uniform_int_distribution<int> na(1, 20), nc(1, 200);
    std::size_t largest = 0;
    for (int t = 0; t < 200; ++t) {
        std::vector<reflection::EmbeddingVector> A(na(rng)), C(nc(rng));
        for (auto& x : A) x = random_unit(rng, 16);
        for (auto& x : C) x = random_unit(rng, 16);
        largest = std::max(largest, A.size() * C.size());
        std::vector<std::vector<double>> ra, rc;
        for (auto& x : A) ra.push_back(x.values());
        for (auto& x : C) rc.push_back(x.values());
        const auto r = reflection::sim_max(A, C);
        const auto want = oracles::matrix_max(ra, rc);
        o.require(r.sim_max == want.value, "sim_max differs from the matrix maximum");
        o.require(r.answer_index == want.row && r.citation_index == want.col, "argmax differs");
        C.push_back(random_unit(rng, 16));
        o.require(reflection::sim_max(A, C).sim_max >= r.sim_max, "not monotone under append");
    }
    o.detail = fmt::format("200 corpora exact (largest matrix {} pairs); monotone under append", largest);
    return o;
}

Outcome band_partition() {
    Outcome o;
    using reflection::Band;
    std::mt19937_64 rng(503);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> scores{-1.0, 1.0, 0.8, 0.9, std::nextafter(0.8, 1.0), std::nextafter(0.9, 1.0)};
    while (scores.size() < 10000) scores.push_back(u(rng));
    std::map<Band, std::size_t> tally;
    for (double s : scores) {
        const int members = (s <= 0.8) + (s > 0.8 && s <= 0.9) + (s > 0.9);
        o.require(members == 1, fmt::format("{} in {} bands", s, members));
        const Band want = s <= 0.8 ? Band::Low : s <= 0.9 ? Band::Mid : Band::High;
        o.require(reflection::band(s) == want, fmt::format("band({}) wrong", s));
        ++tally[reflection::band(s)];
    }
    o.require(reflection::band(0.8) == Band::Low, "band(0.8) != Low");
    o.require(reflection::band(0.9) == Band::Mid, "band(0.9) != Mid");
    o.require(reflection::band(0.900001) == Band::High, "band(0.900001) != High");
    o.detail = fmt::format("{} scores: low {}, mid {}, high {}; 0.8->low 0.9->mid 0.900001->high", scores.size(),
                           tally[Band::Low], tally[Band::Mid], tally[Band::High]);
    return o;
}

Outcome aggregation_conservation() {
    Outcome o;
    std::mt19937_64 rng(504);
    std::size_t citations = 0;
    for (int run = 0; run < 100; ++run) {
        const auto facts = synth::random_facts(rng);
        citations += facts.size();
        for (const auto& v : synth::conservation_violations(facts)) o.require(false, fmt::format("run {}: {}", run, v));
    }
    o.detail = fmt::format("100 randomized runs, {} citations recounted", citations);
    return o;
}

Outcome html_features() {
    Outcome o;
    const auto dir = testutil::source_dir() / "tests" / "fixtures" / "html";
    const auto expected = Json::parse(read_file(dir / "expected.json"));
    o.require(expected.size() == 12, "expected 12 crafted pages");
    for (const auto& [name, want] : expected.items()) {
        const auto f = harvest::extract_features(read_file(dir / name));
        o.require(f.link_count == want.at("link_count").get<std::size_t>() &&
                      f.ul_count == want.at("ul_count").get<std::size_t>() &&
                      f.heading_count == want.at("heading_count").get<std::size_t>() &&
                      f.text_length == want.at("text_length").get<std::size_t>(),
                  name + ": counts differ");
    }
    std::size_t snapshots = 0;
    for (const auto& file : {testutil::golden_fixture_dir() / "pages.jsonl",
                             testutil::source_dir() / "fixtures" / "demo" / "pages.jsonl"}) {
        std::ifstream in(file);
        std::string line;
        while (std::getline(in, line)) {
            const auto j = Json::parse(line);
            if (j.value("status", "") != "ok") continue;
            ++snapshots;
            const auto f = harvest::extract_features(j.at("html").get<std::string>());
            // Density is the correctly rounded quotient, so the product recovers
            // the length up to floating-point rounding (1800 / 7 * 7 is not 1800).
            const double h = static_cast<double>(std::max<std::size_t>(1, f.heading_count));
            const double len = static_cast<double>(f.text_length);
            o.require(f.text_density == len / h, j.at("url").get<std::string>() + ": density is not length / headings");
            o.require(std::abs(f.text_density * h - len) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, len),
                      j.at("url").get<std::string>() + ": density identity");
        }
    }
    o.detail = fmt::format("{} crafted pages exact; density identity on {} snapshots", expected.size(), snapshots);
    return o;
}

Outcome classifier_precedence() {
    Outcome o;
    const auto tally = rig::precedence_scenarios(505, 1000);
    for (const auto& v : tally.violations) o.require(false, v);
    o.require(tally.manifest_hits > 0 && tally.queued > 0 && tally.consensus > 0, "a branch was never exercised");
    o.detail = fmt::format("1000 scenarios: {} manifest hits (0 judge calls), {} queued, {} consensus", tally.manifest_hits,
                           tally.queued, tally.consensus);
    return o;
}

Outcome answer_statistics() {
    Outcome o;
    testutil::TempDir tmp;
    store::Store store(tmp / "store");
    const auto report = testutil::golden_full(store, "golden");
    for (const auto& m : testutil::answer_stats_mismatches(store, "golden", report)) o.require(false, m);

    // Three answers: (citations, sentences) = (4, 8), (2, 9), (3, 4).
    std::vector<analytics::AnswerFact> micro;
    const std::array<std::array<std::size_t, 3>, 3> rows = {{{4, 3, 8}, {2, 2, 9}, {3, 2, 4}}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        analytics::AnswerFact a;
        a.answer_id = fmt::format("openai/q{}/0", i);
        a.country = "us";
        a.party_id = "dp";
        a.provider = "openai";
        a.citations_total = rows[i][0];
        a.citations_unique = rows[i][1];
        a.sentences = rows[i][2];
        micro.push_back(a);
    }
    const auto s = analytics::answer_statistics(micro);
    // By hand: mean sentences 21/3 = 7, mean citations 9/3 = 3, 7/3 = 2.33 -> 2.3.
    const bool micro_ok = s.size() == 1 && s[0].sent_per_cit && fmt::format("{:.1f}", *s[0].sent_per_cit) == "2.3";
    o.require(micro_ok, "micro-fixture Sent./Cit. != 2.3");
    o.detail = fmt::format("{} golden groups recounted exactly; micro-fixture Sent./Cit. = {}", report.at("answer_stats").size(),
                           micro_ok ? "2.3" : "wrong");
    return o;
}

Outcome corpus_shape() {
    Outcome o;
    const auto manifest = corpus::load_manifest_file(testutil::source_dir() / "data" / "manifest.json");
    const auto templates = corpus::load_templates(testutil::source_dir() / "data" / "templates.json");
    corpus::StudyConfig jp{{"jp"}, {}, {"openai"}, 5, {{"jp", "ja"}, {"us", "en"}}};
    corpus::StudyConfig us{{"us"}, {}, {"openai"}, 5, {{"jp", "ja"}, {"us", "en"}}};
    const auto njp = corpus::render_questions(templates, manifest.parties, jp).size();
    const auto nus = corpus::render_questions(templates, manifest.parties, us).size();
    o.require(templates.size() == 20, "expected 20 templates");
    o.require(njp == 180, fmt::format("jp: {} questions", njp));
    o.require(nus == 100, fmt::format("us: {} questions", nus));
    o.detail = fmt::format("{} templates -> jp {} / us {} questions", templates.size(), njp, nus);
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"golden fixture reproduction", golden_reproduction},
        {"Mann-Whitney U oracle", mw_oracle},
        {"Kolmogorov-Smirnov oracle", ks_oracle},
        {"sim_max oracle", sim_max_oracle},
        {"band partition", band_partition},
        {"aggregation conservation", aggregation_conservation},
        {"HTML feature fixtures", html_features},
        {"classifier precedence", classifier_precedence},
        {"answer statistics", answer_statistics},
        {"corpus shape", corpus_shape},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o.pass = false;
            o.problems.push_back(std::string("threw: ") + e.what());
        }
        fmt::print("{} {}: {}\n", o.pass ? "PASS" : "FAIL", name, o.detail);
        for (const auto& p : o.problems) fmt::print("    {}\n", p);
        failures += !o.pass;
    }
    std::fflush(stdout);
    return failures;
}
