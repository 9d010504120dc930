#!/usr/bin/env python3
"""Generates recorded GE corpora for offline runs.

Each preset writes exchanges.jsonl (provider responses), pages.jsonl,
whois.jsonl, judges.jsonl, decisions.jsonl and study.json into --out.
Output depends only on the preset and --seed.
"""

import argparse
import json
import os
import random
import re

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
STAMP = "2025-09-04T00:00:00Z"

PRESETS = {
    "golden": {
        "parties": ["cdp", "dp", "gop", "ldp"],
        "templates": ["q01", "q03", "q12", "q17"],
        "providers": ["openai", "anthropic"],
        "repeats": 5,
        "malformed": ["anthropic/q03.cdp/4"],
    },
    "demo": {
        "parties": None,
        "templates": None,
        "providers": ["openai"],
        "repeats": 1,
        "malformed": [],
    },
}

MODELS = {"openai": "gpt-4.1-2025-04-14", "anthropic": "claude-sonnet-4-20250514"}

# host -> (category the judges see, country)
HOSTS = {
    "us": {
        "media": ["apnews.com", "nytimes.com", "foxnews.com", "npr.org"],
        "platform": ["reddit.com", "x.com", "youtube.com"],
        "owned": ["janedoeforcongress.com"],
        "academia": ["harvard.edu", "stanford.edu"],
        "non-media-industry": ["uschamber.com", "aflcio.org"],
        "government": ["congress.gov", "cbo.gov", "whitehouse.gov"],
    },
    "jp": {
        "media": ["nhk.or.jp", "asahi.com", "nikkei.com"],
        "platform": ["note.com", "youtube.com", "x.com"],
        "owned": ["tanaka-taro.jp"],
        "academia": ["u-tokyo.ac.jp"],
        "non-media-industry": ["keidanren.or.jp"],
        "government": ["mof.go.jp", "mhlw.go.jp", "kantei.go.jp"],
    },
}

# Hosts the judges cannot settle, with the human decision.
QUEUED = {
    "us": [
        ("brookings.edu", "disagreement", "academia"),
        ("democratsabroad.org", "party_without_manifest", "party"),
        ("ballotpedia.org", "judge_failure", "media"),
    ],
    "jp": [("nippon.com", "disagreement", "media")],
}

# Structure pools for pages nobody cited (visited sources only).
UNCITED = {
    "us": ["votesmart.org", "govtrack.us", "pewresearch.org", "politico.com", "axios.com"],
    "jp": ["go2senkyo.com", "jiji.com", "mainichi.jp", "yomiuri.co.jp"],
}

EN_FILLER = [
    "budget", "voters", "reform", "policy", "economy", "households", "families", "workers", "funding",
    "priorities", "proposal", "legislation", "spending", "taxes", "growth", "deficit", "plan", "agenda",
    "support", "program", "benefits", "costs", "investment", "regulation", "states", "communities",
]
EN_STOP = set("the a an of to and or for in on is are does do its it this that with by be as at from currently "
              "regarding prioritize whether which more greater stronger toward".split())
JA_WORDS = [
    "政府債務", "成長戦略", "社会保障", "年金制度", "医療保険", "財政健全化", "消費税", "子育て支援", "防衛費",
    "エネルギー政策", "賃上げ", "地方創生", "教育無償化", "脱炭素", "憲法改正", "外国人政策", "物価対策",
    "少子化対策", "行政改革", "農業政策", "デジタル化", "安全保障", "雇用対策", "税制改正",
]

EN_FRAMES = [
    "{p} has emphasized {a} and {b} in its recent statements on {c}.",
    "The party argues that {a} should come before new {b} commitments.",
    "Analysts note that {p} links {a} to long term {b} and {c}.",
    "Its platform calls for {a} paired with targeted {b} for {c}.",
    "Critics say the approach to {a} could raise {b} for {c}.",
    "{p} opposes cuts to {a} while seeking {b} through {c}.",
    "Recent votes show support for {a} over {b} in most {c} debates.",
    "Leaders describe {a} as essential to protecting {b} and {c}.",
]
JA_FRAMES = [
    "{p}は{a}と{b}を重視する方針を示しています。",
    "{p}は{a}よりも{b}を優先すべきだと主張しています。",
    "専門家は{p}の{a}が{c}に影響すると指摘しています。",
    "{p}の公約には{a}と{b}の拡充が含まれています。",
    "{p}は{c}の見直しと{a}の強化を訴えています。",
    "批判的な立場からは{a}による{b}への負担が懸念されています。",
    "最近の国会審議では{p}が{a}に関する法案を提出しました。",
]


def words_of(text):
    return [w for w in re.findall(r"[a-z]+", text.lower()) if len(w) > 3 and w not in EN_STOP]


class Gen:
    def __init__(self, preset, seed):
        self.cfg = PRESETS[preset]
        self.preset = preset
        self.rng = random.Random(seed)
        with open(os.path.join(REPO, "data", "manifest.json"), encoding="utf-8") as f:
            self.manifest = json.load(f)
        with open(os.path.join(REPO, "data", "templates.json"), encoding="utf-8") as f:
            self.templates = json.load(f)["templates"]
        if self.cfg["templates"]:
            self.templates = [t for t in self.templates if t["id"] in self.cfg["templates"]]
        parties = self.manifest["parties"]
        if self.cfg["parties"]:
            parties = [p for p in parties if p["id"] in self.cfg["parties"]]
        self.parties = parties
        self.pages = {}      # url -> dict(html=..., status=...)
        self.claims = {}     # url -> list of sentences
        self.judged = {}     # host -> category
        self.queued = {}     # host -> (reason, decision)

    # -- text ---------------------------------------------------------------

    def sentence(self, lang, party_name, topic):
        r = self.rng
        if lang == "ja":
            a, b, c = r.sample(topic, 3)
            return r.choice(JA_FRAMES).format(p=party_name, a=a, b=b, c=c)
        a, b, c = r.sample(topic, 3)
        return r.choice(EN_FRAMES).format(p=party_name, a=a, b=b, c=c)

    def paraphrase(self, lang, s, topic):
        r = self.rng
        if lang == "ja" or " " not in s:
            for w in r.sample(topic, len(topic)):
                if w in s:
                    return s.replace(w, r.choice([x for x in JA_WORDS if x not in s]), 1)
            return s.replace("ています", "ている")
        toks = s.split(" ")
        idx = [i for i, t in enumerate(toks) if t.strip(".,").lower() in topic or t.strip(".,") in EN_FILLER]
        if not idx:
            idx = list(range(1, len(toks)))
        i = r.choice(idx)
        end = "." if toks[i].endswith(".") else ""
        toks[i] = r.choice(EN_FILLER) + end
        return " ".join(toks)

    def topic(self, template, lang):
        r = random.Random(template["id"])
        if lang == "ja":
            return r.sample(JA_WORDS, 6)
        base = words_of(template["text"]["en"].replace("{PARTY}", ""))
        return list(dict.fromkeys(base + r.sample(EN_FILLER, 4)))

    # -- pages --------------------------------------------------------------

    def page(self, url, lang, party_name, topic, kind):
        if url in self.pages:
            return
        r = self.rng
        claims = [self.sentence(lang, party_name, topic) for _ in range(r.randint(3, 5))]
        self.claims[url] = claims
        filler = [self.sentence(lang, party_name, topic) for _ in range(r.randint(4, 14))]
        body = claims + filler
        r.shuffle(body)
        if kind == "uncited":
            n_h, n_ul, n_links, per_p = r.randint(1, 4), r.randint(0, 4), r.randint(6, 30), 2
        elif kind in ("government", "academia"):
            n_h, n_ul, n_links, per_p = r.randint(4, 8), r.randint(0, 2), r.randint(3, 12), 3
        elif kind in ("platform",):
            n_h, n_ul, n_links, per_p = r.randint(0, 1), r.randint(1, 3), r.randint(15, 40), 1
        elif kind in ("media",):
            n_h, n_ul, n_links, per_p = r.randint(1, 3), r.randint(0, 2), r.randint(8, 25), 4
        else:
            n_h, n_ul, n_links, per_p = r.randint(2, 5), r.randint(1, 4), r.randint(5, 20), 2
        host = url.split("/")[2]
        parts = ["<!doctype html>", "<html><head><meta charset=\"utf-8\">",
                 f"<title>{host}</title>", "<style>body{font-family:sans-serif}</style></head><body>",
                 "<nav>"]
        for i in range(n_links):
            parts.append(f"<a href=\"/section/{i}\">{'項目' if lang == 'ja' else 'Section'} {i}</a>")
        parts.append("</nav>")
        parts.append(f"<h1>{topic[0]}</h1>")
        paras = [body[i:i + per_p] for i in range(0, len(body), per_p)]
        for i, para in enumerate(paras):
            if i < n_h:
                parts.append(f"<h2>{topic[i % len(topic)]}</h2>")
            sep = "" if lang == "ja" else " "
            parts.append("<p>" + sep.join(para) + "</p>")
        for i in range(n_ul):
            items = "".join(f"<li>{w}</li>" for w in r.sample(topic, 3))
            parts.append(f"<ul>{items}</ul>")
        parts.append("<script>var tracking = 1;</script>")
        parts.append("<footer>&copy; 2025</footer></body></html>")
        self.pages[url] = {"url": url, "status": "ok", "code": 200, "html": "\n".join(parts)}

    def url_for(self, host, topic_key, n):
        return f"https://{host}/policy/{topic_key}-{n}"

    # -- answers ------------------------------------------------------------

    def party_name(self, party, lang):
        return party["names"].get(lang) or party["names"]["en"]

    def pick_citations(self, party, template):
        """A list of (url, host, kind) for one answer."""
        r = self.rng
        country = party["country"]
        lang = "ja" if country == "jp" else "en"
        topic = self.topic(template, lang)
        name = self.party_name(party, lang)
        tkey = template["id"]
        out = []
        n = r.randint(2, 6)
        same_country = [p for p in self.manifest["parties"] if p["country"] == country and p["id"] != party["id"]]
        for _ in range(n):
            roll = r.random()
            if roll < 0.35:
                host = r.choice(party["domains"])
                kind = "party"
            elif roll < 0.45:
                host = r.choice(r.choice(same_country)["domains"])
                kind = "party"
            elif roll < 0.53 and QUEUED[country]:
                host, reason, decision = r.choice(QUEUED[country])
                self.queued[host] = (reason, decision)
                kind = "queued"
            else:
                kind = r.choice(list(HOSTS[country]))
                host = r.choice(HOSTS[country][kind])
                self.judged[host] = kind
            url = self.url_for(host, tkey, r.randint(1, 2))
            self.page(url, lang, name, topic, kind)
            out.append((url, host, kind))
        if r.random() < 0.15 and out:
            out.append(r.choice(out))  # same page cited twice
        return out, topic, lang, name

    def answer(self, party, template):
        r = self.rng
        cites, topic, lang, name = self.pick_citations(party, template)
        sentences = []
        for url, _, _ in cites:
            mode = r.random()
            if mode < 0.4:
                sentences.append(r.choice(self.claims[url]))
            elif mode < 0.75:
                sentences.append(self.paraphrase(lang, r.choice(self.claims[url]), topic))
            else:
                sentences.append(self.sentence(lang, name, topic))
        for _ in range(r.randint(1, 4)):
            sentences.insert(r.randint(0, len(sentences)), self.sentence(lang, name, topic))
        visited = sorted({u for u, _, _ in cites})
        for _ in range(r.randint(1, 4)):
            host = r.choice(UNCITED[party["country"]])
            u = self.url_for(host, template["id"], r.randint(1, 3))
            self.page(u, lang, name, topic, "uncited")
            visited.append(u)
        if r.random() < 0.5:
            kind = r.choice(list(HOSTS[party["country"]]))
            host = r.choice(HOSTS[party["country"]][kind])
            u = self.url_for(host, template["id"], 3)
            self.judged[host] = kind
            self.page(u, lang, name, topic, kind)
            visited.append(u)
        return sentences, cites, visited, lang

    # -- provider bodies ------------------------------------------------------

    def openai_body(self, sentences, cites, visited, lang):
        # Each citation annotates a distinct sentence; citations keep answer order.
        r = self.rng
        sep = "" if lang == "ja" else " "
        slots = sorted(r.sample(range(len(sentences)), min(len(cites), len(sentences))))
        text = ""
        anns = []
        spans = []
        for i, s in enumerate(sentences):
            if text:
                text += sep
            spans.append((len(text), len(text) + len(s)))
            text += s
        for k, (url, _, _) in enumerate(cites):
            b, e = spans[slots[k % len(slots)]]
            anns.append({"type": "url_citation", "url": url, "title": url.split("/")[2], "start_index": b, "end_index": e})
        return {
            "id": "resp_fixture",
            "object": "response",
            "model": MODELS["openai"],
            "output": [
                {"type": "web_search_call", "id": "ws_1", "status": "completed",
                 "action": {"type": "search", "query": "policy", "sources": [{"type": "url", "url": u} for u in visited]}},
                {"type": "message", "id": "msg_1", "role": "assistant",
                 "content": [{"type": "output_text", "text": text, "annotations": anns}]},
            ],
        }

    def anthropic_body(self, sentences, cites, visited, lang):
        r = self.rng
        sep = "" if lang == "ja" else " "
        by_sentence = {}
        slots = sorted(r.sample(range(len(sentences)), min(len(cites), len(sentences))))
        for k, (url, _, _) in enumerate(cites):
            by_sentence.setdefault(slots[k % len(slots)], []).append(url)
        content = [
            {"type": "server_tool_use", "id": "srvtoolu_1", "name": "web_search", "input": {"query": "policy"}},
            {"type": "web_search_tool_result", "tool_use_id": "srvtoolu_1",
             "content": [{"type": "web_search_result", "url": u, "title": u.split("/")[2]} for u in visited]},
        ]
        for i, s in enumerate(sentences):
            block = {"type": "text", "text": (sep if i else "") + s}
            if i in by_sentence:
                block["citations"] = [{"type": "web_search_result_location", "url": u, "title": u.split("/")[2],
                                       "cited_text": s[:40]} for u in by_sentence[i]]
            content.append(block)
        return {"id": "msg_fixture", "type": "message", "role": "assistant", "model": MODELS["anthropic"],
                "content": content, "stop_reason": "end_turn"}

    # -- output ---------------------------------------------------------------

    def run(self, out):
        os.makedirs(out, exist_ok=True)
        exchanges = []
        for provider in self.cfg["providers"]:
            for party in sorted(self.parties, key=lambda p: p["id"]):
                lang = "ja" if party["country"] == "jp" else "en"
                for t in self.templates:
                    qid = f"{t['id']}.{party['id']}"
                    question = t["text"][lang].replace("{PARTY}", self.party_name(party, lang))
                    for rep in range(self.cfg["repeats"]):
                        sentences, cites, visited, _ = self.answer(party, t)
                        if provider == "openai":
                            body = self.openai_body(sentences, cites, visited, lang)
                            request = {"model": MODELS[provider], "input": question,
                                       "tools": [{"type": "web_search_preview"}]}
                        else:
                            body = self.anthropic_body(sentences, cites, visited, lang)
                            request = {"model": MODELS[provider], "max_tokens": 2048,
                                       "messages": [{"role": "user", "content": question}]}
                        response = json.dumps(body, ensure_ascii=False)
                        fid = f"{provider}/{qid}/{rep}"
                        if fid in self.cfg["malformed"]:
                            response = response[: len(response) // 2]
                        exchanges.append({"provider": provider, "question_id": qid, "party_id": party["id"],
                                          "language": lang, "repeat_index": rep, "request": request,
                                          "http_status": 200, "response": response, "timestamp": STAMP})
        self.write_jsonl(os.path.join(out, "exchanges.jsonl"),
                         [{"format": "geaudit-fixture", "version": 1}] + exchanges)

        # A few pages fail in recorded ways; one is absent from the recording.
        urls = sorted(self.pages)
        failing = [u for u in urls if "/policy/" in u and u.split("/")[2] in ("foxnews.com", "asahi.com")]
        for u in failing[:1]:
            self.pages[u] = {"url": u, "status": "http_error", "code": 404, "html": ""}
        for u in failing[1:2]:
            self.pages[u] = {"url": u, "status": "robots_denied", "code": 0, "html": ""}
        for u in failing[2:3]:
            del self.pages[u]
        self.write_jsonl(os.path.join(out, "pages.jsonl"), [self.pages[u] for u in sorted(self.pages)])

        whois = []
        hosts = sorted(set(self.judged) | set(self.queued))
        for h in hosts:
            if h in ("x.com",):
                continue  # recorded lookup failure
            whois.append({"domain": h, "status": "ok", "text":
                          f"Domain Name: {h.upper()}\nRegistrar: Example Registrar, Inc.\n"
                          f"Registrant Organization: {h.split('.')[0].title()} Organization\n"
                          f"Registrant Country: {'JP' if h.endswith('.jp') else 'US'}\n"
                          "% This is a recorded response\n"})
        self.write_jsonl(os.path.join(out, "whois.jsonl"), whois)

        judges = []
        styles = ["{}", "{}.", "**{}**", "Label: {}", "{}"]
        for h in hosts:
            if h in self.queued:
                reason, decision = self.queued[h]
                if reason == "disagreement":
                    a, b = decision, "non-media-industry" if decision != "non-media-industry" else "media"
                    replies = {"judge-a": [a], "judge-b": [b]}
                elif reason == "party_without_manifest":
                    replies = {"judge-a": ["party"], "judge-b": ["Party"]}
                else:
                    replies = {"judge-a": [decision],
                               "judge-b": ["This looks like an encyclopedia of elections.", "I cannot tell."]}
            else:
                cat = self.judged[h]
                replies = {"judge-a": [random.Random(h).choice(styles).format(cat)],
                           "judge-b": [random.Random(h + "b").choice(styles).format(cat.title())]}
            for j in ("judge-a", "judge-b"):
                judges.append({"judge": j, "host": h, "replies": replies[j]})
        self.write_jsonl(os.path.join(out, "judges.jsonl"), judges)

        decisions = [{"host": h, "category": self.queued[h][1], "adjudicator": "fixture", "timestamp": STAMP}
                     for h in sorted(self.queued)]
        self.write_jsonl(os.path.join(out, "decisions.jsonl"), decisions)

        rel = os.path.relpath(REPO, os.path.abspath(out))
        countries = sorted({p["country"] for p in self.parties})
        study = {
            "version": 1,
            "manifest": os.path.join(rel, "data", "manifest.json"),
            "templates": os.path.join(rel, "data", "templates.json") if not self.cfg["templates"] else "templates.json",
            "judge_prompt": os.path.join(rel, "prompts", "judge_prompt.txt"),
            "countries": countries,
            "languages": {"jp": "ja", "us": "en"},
            "parties": self.cfg["parties"] or [],
            "repeats": self.cfg["repeats"],
            "providers": [{"id": p, "model": MODELS[p], "credential_env": f"{p.upper()}_API_KEY",
                           "endpoint": {"openai": "https://api.openai.com",
                                        "anthropic": "https://api.anthropic.com"}[p]} for p in self.cfg["providers"]],
            "judges": [{"id": "judge-a", "kind": "replay", "path": "judges.jsonl"},
                       {"id": "judge-b", "kind": "replay", "path": "judges.jsonl"}],
            "whois": {"kind": "replay", "path": "whois.jsonl"},
            "harvest": {"kind": "replay", "path": "pages.jsonl"},
            "embedding": {"kind": "pseudo", "dim": 256},
            "seed": 20250904,
            "workers": 4,
        }
        study["languages"] = {c: study["languages"][c] for c in countries}
        with open(os.path.join(out, "study.json"), "w", encoding="utf-8") as f:
            json.dump(study, f, indent=2, ensure_ascii=False)
            f.write("\n")
        if self.cfg["templates"]:
            with open(os.path.join(out, "templates.json"), "w", encoding="utf-8") as f:
                json.dump({"version": 1, "templates": self.templates}, f, indent=2, ensure_ascii=False)
                f.write("\n")

    @staticmethod
    def write_jsonl(path, rows):
        with open(path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", choices=sorted(PRESETS), required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=20250904)
    args = ap.parse_args()
    Gen(args.preset, args.seed).run(args.out)


if __name__ == "__main__":
    main()
