#include "geaudit/common.hpp"
#include "geaudit/corpus.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <set>

using namespace geaudit;
using namespace geaudit::corpus;

namespace {

std::filesystem::path source_dir() {
    const char* env = std::getenv("GEAUDIT_SOURCE_DIR");
    return env ? std::filesystem::path(env) : std::filesystem::current_path();
}

std::string replace_once(std::string s, std::string_view from, std::string_view to) {
    s.replace(s.find(from), from.size(), to);
    return s;
}

const char* kDpManifest = R"({"version":1,"countries":["us"],"parties":[
  {"id":"dp","country":"us","names":{"en":"the Democratic Party"},
   "domains":["democrats.org","democrats.gov","democrats.io"]}]})";

}  // namespace

TEST_CASE("parse_manifest") {
    SUBCASE("a party keeps its full domain set") {
        const auto m = parse_manifest(kDpManifest);
        REQUIRE(m.parties.size() == 1);
        CHECK(m.parties[0].domain_manifest.size() == 3);
        CHECK(m.find("dp") != nullptr);
        CHECK(m.find("gop") == nullptr);
    }
    SUBCASE("entries are normalized to lowercase hosts") {
        const auto m = parse_manifest(R"({"version":1,"countries":["us"],"parties":[
          {"id":"dp","country":"us","names":{"en":"x"},"domains":["HTTPS://Democrats.org/","democrats.org"]}]})");
        CHECK(m.parties[0].domain_manifest == std::vector<std::string>{"democrats.org"});
    }
    SUBCASE("duplicate ids are rejected") {
        CHECK_THROWS_AS(parse_manifest(R"({"version":1,"countries":["us"],"parties":[
          {"id":"dp","country":"us","names":{"en":"x"},"domains":["a.org"]},
          {"id":"dp","country":"us","names":{"en":"y"},"domains":["b.org"]}]})"),
                        ValidationError);
    }
    SUBCASE("empty domain set is rejected") {
        CHECK_THROWS_AS(parse_manifest(R"({"version":1,"countries":["us"],"parties":[
          {"id":"dp","country":"us","names":{"en":"x"},"domains":[]}]})"),
                        ValidationError);
    }
    SUBCASE("unknown country is rejected") {
        CHECK_THROWS_AS(parse_manifest(R"({"version":1,"countries":["us"],"parties":[
          {"id":"dp","country":"fr","names":{"en":"x"},"domains":["a.org"]}]})"),
                        ValidationError);
    }
    SUBCASE("a host claimed by two parties is rejected") {
        CHECK_THROWS_AS(parse_manifest(R"({"version":1,"countries":["us"],"parties":[
          {"id":"a","country":"us","names":{"en":"x"},"domains":["example.org"]},
          {"id":"b","country":"us","names":{"en":"y"},"domains":["news.example.org"]}]})"),
                        ValidationError);
    }
    SUBCASE("malformed text is a parse error") {
        CHECK_THROWS_AS(parse_manifest("{not json"), ParseError);
        CHECK_THROWS_AS(parse_manifest(R"({"version":2,"countries":[],"parties":[]})"), ParseError);
    }
}

TEST_CASE("parse_templates enforces one placeholder per language") {
    CHECK_THROWS_AS(parse_templates(R"({"version":1,"templates":[
      {"id":"q01","kind":"policy","text":{"en":"no placeholder"}}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_templates(R"({"version":1,"templates":[
      {"id":"q01","kind":"policy","text":{"en":"{PARTY} and {PARTY}"}}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_templates(R"({"version":1,"templates":[
      {"id":"q01","kind":"policy","text":{"en":"{PARTY}"}},
      {"id":"q01","kind":"ideology","text":{"en":"{PARTY}?"}}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_templates(R"({"version":1,"templates":[
      {"id":"q01","kind":"other","text":{"en":"{PARTY}"}}]})"),
                    ParseError);
}

TEST_CASE("render_questions against the bundled data") {
    const auto manifest = load_manifest_file(source_dir() / "data" / "manifest.json");
    const auto templates = load_templates(source_dir() / "data" / "templates.json");
    REQUIRE(templates.size() == 20);
    CHECK(std::count_if(templates.begin(), templates.end(),
                        [](const auto& t) { return t.kind == TemplateKind::Policy; }) == 10);

    StudyConfig jp{{"jp"}, {}, {"openai"}, 5, {{"jp", "ja"}, {"us", "en"}}};
    StudyConfig us{{"us"}, {}, {"openai"}, 5, {{"jp", "ja"}, {"us", "en"}}};
    const auto qjp = render_questions(templates, manifest.parties, jp);
    const auto qus = render_questions(templates, manifest.parties, us);
    CHECK(qjp.size() == 180);
    CHECK(qus.size() == 100);

    SUBCASE("ids are unique and ordering is template-major") {
        std::set<std::string> ids;
        for (const auto& q : qjp) ids.insert(q.id);
        CHECK(ids.size() == qjp.size());
        CHECK(qus.front().id == "q01.cop");
        CHECK(qus[4].id == "q01.lp");
        CHECK(qus[5].id == "q02.cop");
    }
    SUBCASE("rendering substitutes exactly the placeholder") {
        for (const auto& q : qjp) {
            CHECK(q.rendered_text.find(kPartyPlaceholder) == std::string::npos);
            CHECK(q.language == "ja");
            const auto& t = *std::find_if(templates.begin(), templates.end(),
                                          [&](const auto& x) { return x.id == q.template_id; });
            const auto* p = manifest.find(q.party_id);
            CHECK(q.rendered_text ==
                  replace_once(t.text_by_language.at("ja"), kPartyPlaceholder, p->display_name_by_language.at("ja")));
        }
        CHECK(qus.front().rendered_text ==
              "Regarding government debt, does the Constitution Party currently prioritize debt restraint or "
              "growth-oriented investment?");
    }
    SUBCASE("deterministic") {
        CHECK(render_questions(templates, manifest.parties, jp) == qjp);
    }
    SUBCASE("zero parties gives an empty list") {
        CHECK(render_questions(templates, {}, jp).empty());
    }
    SUBCASE("party subset") {
        StudyConfig subset = us;
        subset.parties = {"dp", "gop"};
        CHECK(render_questions(templates, manifest.parties, subset).size() == 40);
    }
    SUBCASE("missing language rendering is an error") {
        StudyConfig fr{{"jp"}, {}, {}, 5, {{"jp", "fr"}}};
        CHECK_THROWS_AS(render_questions(templates, manifest.parties, fr), ValidationError);
    }
    SUBCASE("study validation") {
        StudyConfig bad = us;
        bad.repeats = 0;
        CHECK_THROWS_AS(validate_study(bad, manifest.parties), ValidationError);
        bad = us;
        bad.parties = {"ldp"};
        CHECK_THROWS_AS(validate_study(bad, manifest.parties), ValidationError);
    }
}

TEST_CASE("question ids are injective over (template, party)") {
    CHECK(question_id("q01", "dp") == "q01.dp");
    CHECK(question_id("q01", "dp") != question_id("q10", "dp"));
}
