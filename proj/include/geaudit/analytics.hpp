#pragma once

#include "geaudit/classifier.hpp"
#include "geaudit/harvest.hpp"
#include "geaudit/reflection.hpp"
#include "geaudit/stattests.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace geaudit::analytics {

using Json = nlohmann::json;
using classifier::Barrier;
using reflection::Band;

inline constexpr int kReportVersion = 1;
inline constexpr const char* kAllParties = "all";

/// One citation occurrence in one answer.
struct CitationFact {
    std::string answer_id;  // "<provider>/<question>/<repeat>"
    std::string country;
    std::string party_id;
    std::string provider;
    std::size_t position = 0;  // index within the answer's citation list
    std::string url;
    std::string host;
    std::optional<classifier::PublisherVerdict> verdict;  // absent while pending
    std::optional<reflection::CitationReflection> reflection;
    std::string reflection_unavailable;  // reason when reflection is absent
    std::string answer_sentence;         // argmax pair, for drill-down
    std::string citation_sentence;
};

struct AnswerFact {
    std::string answer_id;
    std::string country;
    std::string party_id;
    std::string provider;
    std::size_t sentences = 0;
    std::size_t citations_total = 0;
    std::size_t citations_unique = 0;  // distinct canonical URLs
};

/// Per-class occurrence counts in fixed Barrier order.
using ClassCounts = std::array<std::size_t, 5>;

std::size_t index_of(Barrier b);

struct ProportionTable {
    std::string country;
    std::string provider;
    std::string party_id;  // kAllParties for the rollup
    std::size_t total = 0;
    std::size_t excluded_pending = 0;
    ClassCounts counts{};
    std::optional<std::array<double, 5>> proportions;  // absent when total == 0
    std::map<std::string, std::size_t> category_counts;  // manifest origins as "primary"/"opponent"
    std::size_t unique_hosts = 0;
    ClassCounts unique_host_counts{};
};

/// Occurrence-counted proportions per (country, provider, party) plus an
/// "all" rollup per (country, provider). Citations without a verdict are
/// counted as excluded_pending.
std::vector<ProportionTable> category_proportions(const std::vector<CitationFact>& citations);

struct BandRow {
    Band band = Band::Low;
    std::size_t total = 0;
    ClassCounts counts{};
    std::optional<std::array<double, 5>> proportions;  // within-band; absent when total == 0
    double width = 0.0;                                 // share of included citations in this band
};

struct BandMatrix {
    std::string country;
    std::string provider;
    std::size_t included = 0;
    std::size_t excluded_unavailable = 0;
    std::size_t excluded_pending = 0;
    std::array<BandRow, 3> rows;
};

/// Per (country, provider). Throws ValidationError listing gaps when a
/// classified citation has neither a reflection nor an unavailable reason.
std::vector<BandMatrix> coverage_bands(const std::vector<CitationFact>& citations);

inline const std::array<const char*, 4> kMetrics = {"link_count", "text_density", "text_length", "ul_count"};

double metric_value(const harvest::StructFeatures& f, std::string_view metric);

struct MetricTests {
    std::string metric;
    stats::TestResult mw;
    stats::TestResult ks;
};

struct WebstructResult {
    std::string country;
    std::string provider;
    bool skipped = false;
    std::string reason;
    std::uint64_t seed = 0;
    std::size_t n_cited = 0;
    std::size_t n_sources = 0;
    std::size_t n_balanced = 0;
    std::vector<MetricTests> metrics;
};

/// Cited pool C against visited-but-uncited pool S. The larger pool is
/// downsampled once (over page indices) to the smaller size, so every
/// metric compares the same pages.
WebstructResult webstruct_analysis(const std::vector<harvest::StructFeatures>& cited,
                                   const std::vector<harvest::StructFeatures>& sources, std::uint64_t seed);

struct Summary {
    double mean = 0.0;
    double median = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
};

Summary summarize(std::vector<double> values);

struct AnswerStats {
    std::string country;
    std::string party_id;
    std::string provider;
    std::size_t answers = 0;
    Summary total;
    Summary unique;
    Summary sentences;
    std::optional<double> sent_per_cit;                 // mean sentences / mean total citations
    std::optional<double> sent_per_cit_mean_of_ratios;  // over answers with citations
};

std::vector<AnswerStats> answer_statistics(const std::vector<AnswerFact>& answers);

/// Rounds to `decimals` places, half away from zero.
double round_to(double x, int decimals);

/// Rounds proportions to 3 decimals so that the rounded values still sum
/// to exactly 1 (largest remainder, ties to the earlier class).
std::array<double, 5> round_proportions(const std::array<double, 5>& p);

/// "mean (median) ± std" with one decimal.
std::string format_summary(const Summary& s);

struct ReportInputs {
    std::string run_id;
    Json provenance = Json::object();
    std::vector<CitationFact> citations;
    std::vector<AnswerFact> answers;
    std::vector<WebstructResult> webstruct;
};

/// Machine-readable report. Deterministic: sorted keys, fixed rounding,
/// no timestamps. Throws PendingError unless `allow_pending`.
Json build_report(const ReportInputs& in, bool allow_pending = false);

struct EmitOptions {
    bool json = true;
    bool csv = true;
    bool svg = true;
};

/// Writes report.json, CSV tables and SVG charts into `dir`. Returns written paths.
std::vector<std::filesystem::path> emit_report(const Json& report, const std::filesystem::path& dir,
                                               const EmitOptions& options = {});

/// Canonical serialization used for report.json.
std::string dump_report(const Json& report);

std::string stacked_bars_svg(const Json& report, const std::string& country);
std::string mosaic_svg(const Json& report, const std::string& country, const std::string& provider);

}  // namespace geaudit::analytics
