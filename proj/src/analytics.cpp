#include "geaudit/analytics.hpp"

#include "geaudit/common.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

namespace geaudit::analytics {

namespace {

constexpr std::array<Barrier, 5> kClasses = {Barrier::Primary, Barrier::Opponent, Barrier::Low, Barrier::Medium,
                                             Barrier::High};
constexpr std::array<Band, 3> kBands = {Band::Low, Band::Mid, Band::High};

std::string category_key(const classifier::PublisherVerdict& v) {
    if (v.origin == classifier::Origin::ManifestPrimary) return "primary";
    if (v.origin == classifier::Origin::ManifestOpponent) return "opponent";
    return std::string(classifier::to_string(v.category));
}

std::array<double, 5> shares(const ClassCounts& c, std::size_t total) {
    std::array<double, 5> p{};
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(c[i]) / static_cast<double>(total);
    return p;
}

Json counts_json(const ClassCounts& c) {
    Json j = Json::object();
    for (std::size_t i = 0; i < kClasses.size(); ++i) j[std::string(classifier::to_string(kClasses[i]))] = c[i];
    return j;
}

Json shares_json(const std::optional<std::array<double, 5>>& p) {
    if (!p) return nullptr;
    const auto r = round_proportions(*p);
    Json j = Json::object();
    for (std::size_t i = 0; i < kClasses.size(); ++i) j[std::string(classifier::to_string(kClasses[i]))] = r[i];
    return j;
}

}  // namespace

std::size_t index_of(Barrier b) {
    for (std::size_t i = 0; i < kClasses.size(); ++i)
        if (kClasses[i] == b) return i;
    return 0;
}

// ---------------------------------------------------------------------------
// Proportions

std::vector<ProportionTable> category_proportions(const std::vector<CitationFact>& citations) {
    using Key = std::tuple<std::string, std::string, std::string>;  // country, provider, party
    std::map<Key, ProportionTable> tables;
    std::map<Key, std::array<std::set<std::string>, 5>> hosts_by_class;
    std::map<Key, std::set<std::string>> hosts;

    for (const auto& c : citations) {
        for (const auto& party : {c.party_id, std::string(kAllParties)}) {
            const Key key{c.country, c.provider, party};
            auto& t = tables[key];
            t.country = c.country;
            t.provider = c.provider;
            t.party_id = party;
            if (!c.verdict) {
                ++t.excluded_pending;
                continue;
            }
            const auto k = index_of(classifier::to_barrier(*c.verdict));
            ++t.total;
            ++t.counts[k];
            ++t.category_counts[category_key(*c.verdict)];
            hosts_by_class[key][k].insert(c.host);
            hosts[key].insert(c.host);
        }
    }

    std::vector<ProportionTable> out;
    for (auto& [key, t] : tables) {
        if (t.total > 0) t.proportions = shares(t.counts, t.total);
        t.unique_hosts = hosts[key].size();
        for (std::size_t k = 0; k < 5; ++k) t.unique_host_counts[k] = hosts_by_class[key][k].size();
        out.push_back(std::move(t));
    }
    // The rollup sorts after the parties of its (country, provider).
    std::stable_sort(out.begin(), out.end(), [](const ProportionTable& a, const ProportionTable& b) {
        const bool ra = a.party_id == kAllParties, rb = b.party_id == kAllParties;
        return std::tie(a.country, a.provider, ra, a.party_id) < std::tie(b.country, b.provider, rb, b.party_id);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Bands

std::vector<BandMatrix> coverage_bands(const std::vector<CitationFact>& citations) {
    std::map<std::pair<std::string, std::string>, BandMatrix> by;
    std::vector<std::string> gaps;
    for (const auto& c : citations) {
        auto& m = by[{c.country, c.provider}];
        m.country = c.country;
        m.provider = c.provider;
        if (!c.verdict) {
            ++m.excluded_pending;
            continue;
        }
        if (!c.reflection) {
            if (c.reflection_unavailable.empty()) {
                gaps.push_back(c.answer_id + "#" + std::to_string(c.position) + " " + c.url);
                continue;
            }
            ++m.excluded_unavailable;
            continue;
        }
        const auto b = static_cast<std::size_t>(reflection::band(c.reflection->sim_max));
        auto& row = m.rows[b];
        ++row.total;
        ++row.counts[index_of(classifier::to_barrier(*c.verdict))];
        ++m.included;
    }
    if (!gaps.empty()) {
        std::sort(gaps.begin(), gaps.end());
        throw ValidationError("reflections missing for " + std::to_string(gaps.size()) +
                              " classified citations: " + text::join(gaps, ", "));
    }
    std::vector<BandMatrix> out;
    for (auto& [key, m] : by) {
        for (std::size_t b = 0; b < 3; ++b) {
            auto& row = m.rows[b];
            row.band = kBands[b];
            if (row.total > 0) row.proportions = shares(row.counts, row.total);
            row.width = m.included ? static_cast<double>(row.total) / static_cast<double>(m.included) : 0.0;
        }
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Web structure

double metric_value(const harvest::StructFeatures& f, std::string_view metric) {
    if (metric == "link_count") return static_cast<double>(f.link_count);
    if (metric == "text_density") return f.text_density;
    if (metric == "text_length") return static_cast<double>(f.text_length);
    if (metric == "ul_count") return static_cast<double>(f.ul_count);
    throw ValidationError("unknown metric: " + std::string(metric));
}

WebstructResult webstruct_analysis(const std::vector<harvest::StructFeatures>& cited,
                                   const std::vector<harvest::StructFeatures>& sources, std::uint64_t seed) {
    WebstructResult r;
    r.seed = seed;
    r.n_cited = cited.size();
    r.n_sources = sources.size();
    if (cited.empty() || sources.empty()) {
        r.skipped = true;
        r.reason = cited.empty() ? "no cited pages with features" : "no uncited visited pages with features";
        return r;
    }
    const bool cited_larger = cited.size() > sources.size();
    const auto& larger = cited_larger ? cited : sources;
    const auto n = std::min(cited.size(), sources.size());
    r.n_balanced = n;

    // Downsample page indices, then read every metric off the same pages.
    std::vector<double> idx(larger.size());
    std::iota(idx.begin(), idx.end(), 0.0);
    const auto kept = stats::balance_downsample(stats::Sample("pages", idx), n, seed).values();
    std::vector<const harvest::StructFeatures*> big;
    for (double i : kept) big.push_back(&larger[static_cast<std::size_t>(i)]);

    for (const char* metric : kMetrics) {
        std::vector<double> a, b;
        for (const auto* f : big) (cited_larger ? a : b).push_back(metric_value(*f, metric));
        for (const auto& f : cited_larger ? sources : cited) (cited_larger ? b : a).push_back(metric_value(f, metric));
        const stats::Sample sc("cited", a), ss("sources", b);
        r.metrics.push_back({metric, stats::mann_whitney_u(sc, ss), stats::ks_two_sample(sc, ss)});
    }
    return r;
}

// ---------------------------------------------------------------------------
// Answer statistics

Summary summarize(std::vector<double> v) {
    Summary s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    const auto m = v.size() / 2;
    s.median = v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2.0;
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / (n - 1.0));
    }
    return s;
}

std::vector<AnswerStats> answer_statistics(const std::vector<AnswerFact>& answers) {
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<const AnswerFact*>> groups;
    for (const auto& a : answers) groups[{a.country, a.party_id, a.provider}].push_back(&a);
    std::vector<AnswerStats> out;
    for (const auto& [key, list] : groups) {
        AnswerStats s;
        std::tie(s.country, s.party_id, s.provider) = key;
        s.answers = list.size();
        std::vector<double> total, unique, sentences, ratios;
        for (const auto* a : list) {
            if (a->citations_unique > a->citations_total)
                throw ValidationError("answer " + a->answer_id + " has more unique than total citations");
            total.push_back(static_cast<double>(a->citations_total));
            unique.push_back(static_cast<double>(a->citations_unique));
            sentences.push_back(static_cast<double>(a->sentences));
            if (a->citations_total > 0)
                ratios.push_back(static_cast<double>(a->sentences) / static_cast<double>(a->citations_total));
        }
        s.total = summarize(total);
        s.unique = summarize(unique);
        s.sentences = summarize(sentences);
        if (s.total.mean > 0) s.sent_per_cit = s.sentences.mean / s.total.mean;
        if (!ratios.empty()) s.sent_per_cit_mean_of_ratios = summarize(ratios).mean;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Formatting

double round_to(double x, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double r = std::round(x * scale) / scale;
    return r == 0.0 ? 0.0 : r;  // no "-0.0" in reports
}

std::array<double, 5> round_proportions(const std::array<double, 5>& p) {
    std::array<long, 5> units{};
    std::array<double, 5> rem{};
    long sum = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        const double scaled = p[i] * 1000.0;
        units[i] = static_cast<long>(std::floor(scaled + 1e-9));
        rem[i] = scaled - static_cast<double>(units[i]);
        sum += units[i];
    }
    std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
    for (std::size_t k = 0; sum < 1000 && k < 5; ++k, ++sum) ++units[order[k]];
    std::array<double, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) out[i] = static_cast<double>(units[i]) / 1000.0;
    return out;
}

std::string format_summary(const Summary& s) {
    return fmt::format("{:.1f} ({:.1f}) ± {:.1f}", round_to(s.mean, 1), round_to(s.median, 1), round_to(s.std, 1));
}

// ---------------------------------------------------------------------------
// Report

namespace {

Json test_json(const stats::TestResult& t) {
    return Json{{"statistic", round_to(t.statistic, 6)},
                {"p_value", round_to(t.p_value, 6)},
                {"method", std::string(stats::to_string(t.method))},
                {"n1", t.n1},
                {"n2", t.n2},
                {"degenerate", t.degenerate},
                {"stars", stats::significance_stars(t.p_value)}};
}

Json summary_json(const Summary& s) {
    return Json{{"mean", round_to(s.mean, 1)}, {"median", round_to(s.median, 1)}, {"std", round_to(s.std, 1)}};
}

Json optional_num(const std::optional<double>& v, int decimals) {
    return v ? Json(round_to(*v, decimals)) : Json(nullptr);
}

}  // namespace

Json build_report(const ReportInputs& in, bool allow_pending) {
    std::set<std::string> pending;
    for (const auto& c : in.citations)
        if (!c.verdict) pending.insert(c.host);
    if (!pending.empty() && !allow_pending) throw PendingError({pending.begin(), pending.end()});

    Json report = Json::object();
    report["format"] = "geaudit-report";
    report["version"] = kReportVersion;
    report["run"] = in.run_id;
    report["provenance"] = in.provenance;
    report["pending_hosts"] = std::vector<std::string>(pending.begin(), pending.end());
    report["classes"] = Json::array();
    for (auto b : kClasses) report["classes"].push_back(std::string(classifier::to_string(b)));

    // Proportions
    const auto tables = category_proportions(in.citations);
    Json props = Json::array();
    for (const auto& t : tables) {
        Json cats = Json::object();
        for (const auto& [k, v] : t.category_counts) cats[k] = v;
        props.push_back(Json{{"country", t.country},
                             {"provider", t.provider},
                             {"party", t.party_id},
                             {"total", t.total},
                             {"excluded_pending", t.excluded_pending},
                             {"counts", counts_json(t.counts)},
                             {"proportions", shares_json(t.proportions)},
                             {"categories", cats},
                             {"unique_hosts", t.unique_hosts},
                             {"unique_host_counts", counts_json(t.unique_host_counts)}});
    }
    report["proportions"] = props;

    // Bands
    const auto matrices = coverage_bands(in.citations);
    Json bands = Json::array();
    for (const auto& m : matrices) {
        Json rows = Json::array();
        for (const auto& r : m.rows) {
            rows.push_back(Json{{"band", std::string(reflection::to_string(r.band))},
                                {"total", r.total},
                                {"width", round_to(r.width, 3)},
                                {"counts", counts_json(r.counts)},
                                {"proportions", shares_json(r.proportions)}});
        }
        bands.push_back(Json{{"country", m.country},
                             {"provider", m.provider},
                             {"included", m.included},
                             {"excluded_unavailable", m.excluded_unavailable},
                             {"excluded_pending", m.excluded_pending},
                             {"bands", rows}});
    }
    report["bands"] = bands;

    // Web structure
    Json ws = Json::array();
    auto webstruct = in.webstruct;
    std::sort(webstruct.begin(), webstruct.end(), [](const auto& a, const auto& b) {
        return std::tie(a.country, a.provider) < std::tie(b.country, b.provider);
    });
    for (const auto& w : webstruct) {
        Json metrics = Json::array();
        for (const auto& m : w.metrics) metrics.push_back(Json{{"metric", m.metric}, {"mw", test_json(m.mw)}, {"ks", test_json(m.ks)}});
        ws.push_back(Json{{"country", w.country},
                          {"provider", w.provider},
                          {"status", w.skipped ? "skipped" : "ok"},
                          {"reason", w.reason},
                          {"seed", w.seed},
                          {"n_cited", w.n_cited},
                          {"n_sources", w.n_sources},
                          {"n_balanced", w.n_balanced},
                          {"alternative", "two-sided"},
                          {"metrics", metrics}});
    }
    report["webstruct"] = ws;

    // Answer statistics
    Json as = Json::array();
    for (const auto& s : answer_statistics(in.answers)) {
        as.push_back(Json{{"country", s.country},
                          {"party", s.party_id},
                          {"provider", s.provider},
                          {"answers", s.answers},
                          {"total", summary_json(s.total)},
                          {"unique", summary_json(s.unique)},
                          {"sentences", summary_json(s.sentences)},
                          {"sent_per_cit", optional_num(s.sent_per_cit, 1)},
                          {"sent_per_cit_mean_of_ratios", optional_num(s.sent_per_cit_mean_of_ratios, 1)},
                          {"display",
                           Json{{"total", format_summary(s.total)},
                                {"unique", format_summary(s.unique)},
                                {"sentences", format_summary(s.sentences)},
                                {"sent_per_cit", s.sent_per_cit ? fmt::format("{:.1f}", round_to(*s.sent_per_cit, 1)) : "-"}}}});
    }
    report["answer_stats"] = as;

    // Drill-down
    auto cites = in.citations;
    std::sort(cites.begin(), cites.end(), [](const CitationFact& a, const CitationFact& b) {
        return std::tie(a.country, a.provider, a.party_id, a.answer_id, a.position) <
               std::tie(b.country, b.provider, b.party_id, b.answer_id, b.position);
    });
    Json drill = Json::array();
    for (const auto& c : cites) {
        Json j{{"answer_id", c.answer_id}, {"country", c.country}, {"party", c.party_id}, {"provider", c.provider},
               {"position", c.position},   {"url", c.url},         {"host", c.host}};
        if (c.verdict) {
            j["class"] = std::string(classifier::to_string(classifier::to_barrier(*c.verdict)));
            j["category"] = std::string(classifier::to_string(c.verdict->category));
            j["origin"] = std::string(classifier::to_string(c.verdict->origin));
        } else {
            j["class"] = nullptr;
            j["category"] = nullptr;
            j["origin"] = nullptr;
        }
        if (c.reflection) {
            j["sim_max"] = round_to(c.reflection->sim_max, 6);
            j["band"] = std::string(reflection::to_string(c.reflection->band));
            j["answer_index"] = c.reflection->answer_index;
            j["citation_index"] = c.reflection->citation_index;
            j["cross_language"] = c.reflection->cross_language;
            j["answer_sentence"] = c.answer_sentence;
            j["citation_sentence"] = c.citation_sentence;
        } else {
            j["sim_max"] = nullptr;
            j["band"] = nullptr;
            j["unavailable"] = c.reflection_unavailable;
        }
        drill.push_back(std::move(j));
    }
    report["citations"] = drill;

    // Chart data: what the SVGs and the review UI both draw.
    Json stacked = Json::array();
    for (const auto& t : tables) {
        Json segs = Json::array();
        const auto rounded = t.proportions ? round_proportions(*t.proportions) : std::array<double, 5>{};
        double y = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            segs.push_back(Json{{"class", std::string(classifier::to_string(kClasses[i]))},
                                {"count", t.counts[i]},
                                {"proportion", rounded[i]},
                                {"offset", round_to(y, 3)}});
            y += rounded[i];
        }
        stacked.push_back(Json{{"country", t.country}, {"party", t.party_id}, {"provider", t.provider},
                               {"total", t.total}, {"segments", segs}});
    }
    Json mosaic = Json::array();
    for (const auto& m : matrices) {
        Json cols = Json::array();
        double x = 0.0;
        for (const auto& r : m.rows) {
            Json segs = Json::array();
            const auto rounded = r.proportions ? round_proportions(*r.proportions) : std::array<double, 5>{};
            double y = 0.0;
            for (std::size_t i = 0; i < 5; ++i) {
                segs.push_back(Json{{"class", std::string(classifier::to_string(kClasses[i]))},
                                    {"count", r.counts[i]},
                                    {"proportion", rounded[i]},
                                    {"offset", round_to(y, 3)}});
                y += rounded[i];
            }
            cols.push_back(Json{{"band", std::string(reflection::to_string(r.band))},
                                {"total", r.total},
                                {"width", round_to(r.width, 3)},
                                {"offset", round_to(x, 3)},
                                {"segments", segs}});
            x += r.width;
        }
        mosaic.push_back(Json{{"country", m.country}, {"provider", m.provider}, {"included", m.included}, {"columns", cols}});
    }
    report["chart_data"] = Json{{"stacked_bars", stacked}, {"mosaic", mosaic}};
    return report;
}

std::string dump_report(const Json& report) { return report.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Files

namespace {

const char* class_color(const std::string& cls) {
    if (cls == "primary") return "#1f77b4";
    if (cls == "opponent") return "#d62728";
    if (cls == "low") return "#ff7f0e";
    if (cls == "medium") return "#bcbd22";
    return "#2ca02c";
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string num(const Json& v, int decimals) {
    if (v.is_null()) return "";
    return fmt::format("{:.{}f}", v.get<double>(), decimals);
}

std::string legend(double x, double y) {
    std::string out;
    for (const char* cls : {"primary", "opponent", "low", "medium", "high"}) {
        out += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"10\" height=\"10\" fill=\"{}\"/>"
                           "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\">{}</text>\n",
                           x, y, class_color(cls), x + 14, y + 9, cls);
        x += 80;
    }
    return out;
}

}  // namespace

std::string stacked_bars_svg(const Json& report, const std::string& country) {
    std::vector<const Json*> bars;
    for (const auto& b : report.at("chart_data").at("stacked_bars"))
        if (b.at("country") == country) bars.push_back(&b);
    // Parties in report order, providers adjacent within each party group.
    std::vector<std::string> parties;
    for (const auto* b : bars) {
        const auto p = b->at("party").get<std::string>();
        if (std::find(parties.begin(), parties.end(), p) == parties.end()) parties.push_back(p);
    }
    std::stable_sort(parties.begin(), parties.end(), [](const std::string& a, const std::string& b) {
        return (a == kAllParties) < (b == kAllParties);
    });
    const double bar_w = 18, gap = 4, group_gap = 22, top = 40, height = 240, left = 40;
    std::string body;
    double x = left;
    for (const auto& party : parties) {
        const double gx = x;
        for (const auto* b : bars) {
            if (b->at("party") != party) continue;
            for (const auto& s : b->at("segments")) {
                const double h = s.at("proportion").get<double>() * height;
                if (h <= 0) continue;
                const double y = top + height - (s.at("offset").get<double>() * height) - h;
                body += fmt::format("<rect x=\"{:.1f}\" y=\"{:.2f}\" width=\"{:.1f}\" height=\"{:.2f}\" fill=\"{}\">"
                                    "<title>{} {} {}: {} ({:.3f})</title></rect>\n",
                                    x, y, bar_w, h, class_color(s.at("class").get<std::string>()), xml_escape(party),
                                    xml_escape(b->at("provider").get<std::string>()), s.at("class").get<std::string>(),
                                    s.at("count").get<std::size_t>(), s.at("proportion").get<double>());
            }
            body += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"9\" text-anchor=\"middle\">{}</text>\n",
                                x + bar_w / 2, top + height + 12, b->at("total").get<std::size_t>());
            x += bar_w + gap;
        }
        body += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                            (gx + x - gap) / 2, top + height + 28, xml_escape(party));
        x += group_gap;
    }
    const double width = std::max(x + left, 440.0);
    return fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n"
                       "<text x=\"{:.0f}\" y=\"20\" font-size=\"14\">Citation sources by party ({})</text>\n{}{}</svg>\n",
                       width, top + height + 60, width, top + height + 60, left, xml_escape(country), body,
                       legend(left, top + height + 40));
}

std::string mosaic_svg(const Json& report, const std::string& country, const std::string& provider) {
    const double left = 40, top = 40, w = 360, h = 240;
    std::string body;
    for (const auto& m : report.at("chart_data").at("mosaic")) {
        if (m.at("country") != country || m.at("provider") != provider) continue;
        for (const auto& col : m.at("columns")) {
            const double cw = col.at("width").get<double>() * w;
            const double cx = left + col.at("offset").get<double>() * w;
            if (cw > 0) {
                for (const auto& s : col.at("segments")) {
                    const double sh = s.at("proportion").get<double>() * h;
                    if (sh <= 0) continue;
                    const double sy = top + h - s.at("offset").get<double>() * h - sh;
                    body += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" "
                                        "stroke=\"#ffffff\"><title>{} {}: {}</title></rect>\n",
                                        cx, sy, cw, sh, class_color(s.at("class").get<std::string>()),
                                        col.at("band").get<std::string>(), s.at("class").get<std::string>(),
                                        s.at("count").get<std::size_t>());
                }
            }
            body += fmt::format("<text x=\"{:.2f}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"middle\">{} ({})</text>\n",
                                cx + cw / 2, top + h + 14, col.at("band").get<std::string>(),
                                col.at("total").get<std::size_t>());
        }
    }
    return fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n"
                       "<text x=\"{:.0f}\" y=\"20\" font-size=\"14\">Citation coverage by similarity ({}, {})</text>\n{}{}</svg>\n",
                       left * 2 + w, top + h + 60, left * 2 + w, top + h + 60, left, xml_escape(country),
                       xml_escape(provider), body, legend(left, top + h + 36));
}

std::vector<std::filesystem::path> emit_report(const Json& report, const std::filesystem::path& dir,
                                               const EmitOptions& options) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create report directory " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    auto put = [&](const std::string& name, const std::string& data) {
        const auto p = dir / name;
        write_file_atomic(p, data);
        written.push_back(p);
    };
    if (options.json) put("report.json", dump_report(report));

    if (options.csv) {
        std::string csv = "country,provider,party,total,excluded_pending";
        for (const char* c : {"primary", "opponent", "low", "medium", "high"}) csv += fmt::format(",{}_count", c);
        for (const char* c : {"primary", "opponent", "low", "medium", "high"}) csv += fmt::format(",{}_prop", c);
        csv += "\n";
        for (const auto& t : report.at("proportions")) {
            csv += fmt::format("{},{},{},{},{}", csv_field(t.at("country")), csv_field(t.at("provider")),
                               csv_field(t.at("party")), t.at("total").get<std::size_t>(),
                               t.at("excluded_pending").get<std::size_t>());
            for (const char* c : {"primary", "opponent", "low", "medium", "high"})
                csv += fmt::format(",{}", t.at("counts").at(c).get<std::size_t>());
            for (const char* c : {"primary", "opponent", "low", "medium", "high"})
                csv += "," + (t.at("proportions").is_null() ? std::string() : num(t.at("proportions").at(c), 3));
            csv += "\n";
        }
        put("proportions.csv", csv);

        csv = "country,provider,band,total,width";
        for (const char* c : {"primary", "opponent", "low", "medium", "high"}) csv += fmt::format(",{}_count", c);
        for (const char* c : {"primary", "opponent", "low", "medium", "high"}) csv += fmt::format(",{}_prop", c);
        csv += ",excluded_unavailable,excluded_pending\n";
        for (const auto& m : report.at("bands")) {
            for (const auto& r : m.at("bands")) {
                csv += fmt::format("{},{},{},{},{}", csv_field(m.at("country")), csv_field(m.at("provider")),
                                   r.at("band").get<std::string>(), r.at("total").get<std::size_t>(), num(r.at("width"), 3));
                for (const char* c : {"primary", "opponent", "low", "medium", "high"})
                    csv += fmt::format(",{}", r.at("counts").at(c).get<std::size_t>());
                for (const char* c : {"primary", "opponent", "low", "medium", "high"})
                    csv += "," + (r.at("proportions").is_null() ? std::string() : num(r.at("proportions").at(c), 3));
                csv += fmt::format(",{},{}\n", m.at("excluded_unavailable").get<std::size_t>(),
                                   m.at("excluded_pending").get<std::size_t>());
            }
        }
        put("bands.csv", csv);

        csv = "country,provider,metric,n_cited,n_sources,n_balanced,seed,mw_u,mw_p,mw_method,mw_stars,ks_d,ks_p,ks_stars\n";
        for (const auto& w : report.at("webstruct")) {
            for (const auto& m : w.at("metrics")) {
                csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(w.at("country")),
                                   csv_field(w.at("provider")), m.at("metric").get<std::string>(),
                                   w.at("n_cited").get<std::size_t>(), w.at("n_sources").get<std::size_t>(),
                                   w.at("n_balanced").get<std::size_t>(), w.at("seed").get<std::uint64_t>(),
                                   num(m.at("mw").at("statistic"), 6), num(m.at("mw").at("p_value"), 6),
                                   m.at("mw").at("method").get<std::string>(), m.at("mw").at("stars").get<std::string>(),
                                   num(m.at("ks").at("statistic"), 6), num(m.at("ks").at("p_value"), 6),
                                   m.at("ks").at("stars").get<std::string>());
            }
        }
        put("webstruct.csv", csv);

        csv = "country,party,provider,answers,total,unique,sentences,sent_per_cit\n";
        for (const auto& s : report.at("answer_stats")) {
            const auto& d = s.at("display");
            csv += fmt::format("{},{},{},{},{},{},{},{}\n", csv_field(s.at("country")), csv_field(s.at("party")),
                               csv_field(s.at("provider")), s.at("answers").get<std::size_t>(),
                               csv_field(d.at("total")), csv_field(d.at("unique")), csv_field(d.at("sentences")),
                               d.at("sent_per_cit").get<std::string>());
        }
        put("answer_stats.csv", csv);

        csv = "answer_id,position,country,party,provider,host,url,class,category,origin,sim_max,band\n";
        for (const auto& c : report.at("citations")) {
            auto str = [&](const char* k) { return c.at(k).is_null() ? std::string() : csv_field(c.at(k).get<std::string>()); };
            csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", str("answer_id"), c.at("position").get<std::size_t>(),
                               str("country"), str("party"), str("provider"), str("host"), str("url"), str("class"),
                               str("category"), str("origin"), num(c.at("sim_max"), 6), str("band"));
        }
        put("citations.csv", csv);
    }

    if (options.svg) {
        std::set<std::string> countries;
        std::set<std::pair<std::string, std::string>> pairs;
        for (const auto& b : report.at("chart_data").at("stacked_bars")) countries.insert(b.at("country").get<std::string>());
        for (const auto& m : report.at("chart_data").at("mosaic")) pairs.insert({m.at("country").get<std::string>(), m.at("provider").get<std::string>()});
        for (const auto& c : countries) put("stacked_" + c + ".svg", stacked_bars_svg(report, c));
        for (const auto& [c, p] : pairs) put("mosaic_" + c + "_" + p + ".svg", mosaic_svg(report, c, p));
    }
    return written;
}

}  // namespace geaudit::analytics
