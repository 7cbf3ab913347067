#!/usr/bin/env python3
"""Generate the replay demo: query log, intent labels, two engine fixtures,
the assessor's navigational key, and truth.json (the world the fixtures were
rendered from, read by oracle.py).

Output is deterministic; rerunning overwrites the files with identical bytes.
"""

import json
import random
import urllib.parse
from pathlib import Path

HERE = Path(__file__).resolve().parent
RNG = random.Random(20110501)
ENGINES = ["kestrel", "osprey"]
TRACK = "https://r.track.example/url"

SUBJECTS = [
    "tomato blight", "sourdough starter", "bicycle chain wear", "solar panel angle",
    "heat pump noise", "roman aqueducts", "tidal energy", "beekeeping in winter",
    "knitting cables", "chess openings", "lichen growth", "volcanic soil",
    "gothic cathedrals", "compost heat", "river otters", "glass blowing",
    "tea fermentation", "clock escapements", "glacier retreat", "moss gardens",
    "printing presses", "salt marshes", "violin varnish", "kite aerodynamics",
    "lighthouse lenses", "coral bleaching", "sundial design", "peat bogs",
    "hedge laying", "stone walls", "barn owls", "wind shear",
]
PREFIXES = ["how does", "history of", "causes of", "guide to", "facts about"]
BRANDS = [
    "northwind", "bluepeak", "hanseatic rail", "lindenbank", "parcelpost",
    "stadtwerke mitte", "cityair", "bookhaven", "mediamarkt", "fernsehturm",
    "zooberlin", "alsterferry", "weatherhub", "taxoffice", "rheinenergie",
    "campusmail", "ticketcorner", "autohaus kraft", "seaview hotels", "musicbox",
    "holzwerk", "gartenzentrum", "lottoland", "skatepark", "cinemaxx west",
    "bergbahn", "kunsthalle", "stadtbibliothek", "radiowelle", "domschatz",
    "marktplatz", "elbphilharmonie",
]
NAV_SUFFIX = ["homepage", "login", "official site", "online"]


def slug(text):
    return text.replace(" ", "-")


def info_queries():
    out = []
    for i in range(30):
        out.append(f"{PREFIXES[i % len(PREFIXES)]} {SUBJECTS[i]}")
    return out


def nav_queries():
    return [f"{BRANDS[i]} {NAV_SUFFIX[i % len(NAV_SUFFIX)]}" for i in range(30)]


def other_queries(n, start):
    return [f"buy {SUBJECTS[(start + i) % len(SUBJECTS)]} kit {start + i}" for i in range(n)]


def tracking(url):
    return f"{TRACK}?sa=t&q={urllib.parse.quote(url, safe='')}&ved=x1"


def shout(url):
    """Same page, non-canonical spelling: upper-case scheme and host, the
    default port, and a fragment."""
    p = urllib.parse.urlsplit(url)
    port = ":443" if p.scheme == "https" else ":80"
    return f"{p.scheme.upper()}://{p.netloc.upper()}{port}{p.path}#top"


def judged_page(url, query, verdict):
    if verdict == "skip":
        meta = "skip"
    else:
        meta = f"{verdict[0]} {verdict[1]}"
    return {
        "body": (
            f"<!doctype html><html><head><title>{query}</title>"
            f'<meta name="demo-judgment" content="{meta}"></head>'
            f"<body><h1>{query}</h1><p>Archived copy of {url}.</p></body></html>\n"
        )
    }


def build():
    info = info_queries()
    nav = nav_queries()

    # Query log: head segment of 40 queries x 25, tail of 100 queries x 10.
    head_info, tail_info = info[:15], info[15:]
    head_nav, tail_nav = nav[:15], nav[15:]
    head = head_info + head_nav + other_queries(10, 0)
    tail = tail_info + tail_nav + other_queries(70, 100)
    lines = [q for q in head for _ in range(25)] + [q for q in tail for _ in range(10)]
    RNG.shuffle(lines)
    labels = (
        [(q, "informational") for q in info]
        + [(q, "navigational") for q in nav]
        + [(q, "transactional") for q in other_queries(10, 0) + other_queries(70, 100)]
    )

    truth = {"engines": ENGINES, "informational": [], "navigational": []}
    fixtures = {e: {"results": [], "failures": {}, "documents": {}} for e in ENGINES}

    for qi, q in enumerate(info):
        pages = [f"https://site{j}.example/{slug(q)}/{j}" for j in range(18)]
        verdicts = {}
        failed = {}
        for j, url in enumerate(pages):
            roll = RNG.random()
            if roll < 0.08:
                failed[url] = RNG.choice([{"status": "http-error", "code": 404}, {"status": "timeout"}])
                continue
            relevant = RNG.random() < 0.7 - 0.02 * j
            grade = RNG.choice([2, 3, 4]) if relevant else RNG.choice([0, 1, 2])
            verdicts[url] = ["relevant" if relevant else "not-relevant", grade]
        # One deliberate juror skip on a judgeable page, in a task with
        # enough judgeable results that the voucher still issues.
        if qi == 4:
            first_ok = next(u for u in pages if u in verdicts)
            verdicts[first_ok] = "skip"

        overlap = RNG.randint(2, 8)
        a_list = pages[:10]
        b_list = pages[10 - overlap:10] + pages[10:10 + (10 - overlap)]
        RNG.shuffle(b_list)
        RNG.shuffle(a_list)

        entries = {}
        for e, lst in (("kestrel", a_list), ("osprey", b_list)):
            rows = []
            for rank, url in enumerate(lst, start=1):
                rows.append({"rank": rank, "raw_url": url, "canonical": url})
            entries[e] = rows

        # Special cases, each on its own query.
        if qi == 2:
            for row in entries["osprey"][:3]:
                row["raw_url"] = tracking(row["canonical"])
        if qi == 3:
            for row in entries["osprey"][1:3]:
                row["raw_url"] = shout(row["canonical"])
        if qi == 5:
            # The engine lists one page twice.
            dup = entries["kestrel"][2]
            entries["kestrel"][6] = {"rank": 7, "raw_url": shout(dup["canonical"]), "canonical": dup["canonical"]}
        if qi == 7:
            entries["osprey"][4] = {"rank": 5, "raw_url": f"{TRACK}?sa=t&ved=broken7", "canonical": None}
        if qi == 12:
            entries["osprey"] = None
            fixtures["osprey"]["failures"][q] = "captcha page"
        if qi == 20:
            entries["kestrel"] = entries["kestrel"][:7]

        judge = {}
        for e in ENGINES:
            for row in entries[e] or []:
                c = row["canonical"]
                if c is None:
                    continue
                if c in failed:
                    judge[c] = {"available": False}
                else:
                    judge[c] = {"available": True, "verdict": verdicts[c]}
        truth["informational"].append({"query": q, "lists": entries, "pages": judge})

        for e in ENGINES:
            for row in entries[e] or []:
                fixtures[e]["results"].append({
                    "query": q,
                    "rank": row["rank"],
                    "raw_url": row["raw_url"],
                    "title": f"{q} ({row['rank']})",
                    "snippet": "",
                })
                c = row["canonical"]
                if c is None:
                    continue
                doc = failed.get(c) or judged_page(c, q, verdicts[c])
                fixtures[e]["documents"][c] = doc

    for qi, q in enumerate(nav):
        brand = BRANDS[qi]
        target = f"https://www.{slug(brand)}.example/"
        fan = f"https://{slug(brand)}-fans.example/"
        wiki = f"https://wiki.example/{slug(brand)}"
        firsts = {}
        for e in ENGINES:
            p_correct = 0.85 if e == "kestrel" else 0.7
            firsts[e] = target if RNG.random() < p_correct else RNG.choice([fan, wiki])
        rows = {e: [firsts[e]] + [u for u in (wiki, fan, target) if u != firsts[e]][:2] for e in ENGINES}
        raw = {e: list(rows[e]) for e in ENGINES}
        first_canon = dict(firsts)
        outcome = {e: "listed" for e in ENGINES}
        if qi == 3:
            outcome["kestrel"] = "capture-failed"
            fixtures["kestrel"]["failures"][q] = "timeout"
        if qi == 7:
            outcome["osprey"] = "no-result"
        if qi == 9:
            outcome["osprey"] = "unresolvable"
            raw["osprey"][0] = f"{TRACK}?sa=t&ved=nav9"
        if qi == 11:
            first_canon["osprey"] = target
            raw["osprey"][0] = tracking(target)
        if qi == 13:
            first_canon["kestrel"] = first_canon["osprey"] = target
            raw["kestrel"][0] = target
            raw["osprey"][0] = shout(target)
        truth["navigational"].append({
            "query": q,
            "target": target,
            "first": {e: first_canon[e] if outcome[e] == "listed" else None for e in ENGINES},
            "outcome": outcome,
        })
        for e in ENGINES:
            if outcome[e] in ("capture-failed", "no-result"):
                continue
            for rank, url in enumerate(raw[e], start=1):
                fixtures[e]["results"].append({"query": q, "rank": rank, "raw_url": url, "title": brand})
            for u in (target, fan, wiki):
                if qi == 17 and u == fan:
                    fixtures[e]["documents"][u] = {"status": "http-error", "code": 503}
                else:
                    fixtures[e]["documents"][u] = {"body": f"<!doctype html><title>{brand}</title><p>{u}</p>\n"}

    (HERE / "fixtures").mkdir(exist_ok=True)
    (HERE / "queries.log").write_text("".join(f"{q}\n" for q in lines))
    (HERE / "labels.tsv").write_text(
        "# query<TAB>intent\n" + "".join(f"{q}\t{i}\n" for q, i in labels)
    )
    for e in ENGINES:
        f = fixtures[e]
        f["documents"] = dict(sorted(f["documents"].items()))
        (HERE / "fixtures" / f"{e}.json").write_text(json.dumps(f, indent=1, sort_keys=True) + "\n")
    (HERE / "assessor.tsv").write_text(
        "# query<TAB>url of the page the query navigates to\n"
        + "".join(f"{n['query']}\t{n['target']}\n" for n in truth["navigational"])
    )
    (HERE / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    build()
