#!/usr/bin/env python3
"""Compute the demo answer sheet from truth.json by brute force.

Scripted jurors judge every page by its demo-judgment directive and skip
anything without a stored document; the assessor marks a navigational first
result correct iff it is the page listed in assessor.tsv. Every measure is
an exact fraction written as "num/den"; null marks an undefined measure.
"""

import json
from fractions import Fraction
from pathlib import Path

HERE = Path(__file__).resolve().parent
MAX_K = 10


def frac(x):
    return None if x is None else f"{x.numerator}/{x.denominator}"


def div(n, d):
    return Fraction(n, d) if d else None


def mean(xs):
    xs = list(xs)
    return sum(xs, Fraction(0)) / len(xs) if xs else None


def judged_lists(truth, engine):
    """Per answered query: list of (rank, judgment) with judgment None for
    a skipped entry, else (relevant: bool, grade)."""
    out = []
    for item in truth["informational"]:
        rows = item["lists"][engine]
        if rows is None:
            continue
        entries = []
        for row in rows:
            c = row["canonical"]
            page = item["pages"].get(c) if c is not None else None
            if page is None or not page["available"] or page["verdict"] == "skip":
                entries.append((row["rank"], None, page is not None and page["available"]))
            else:
                label, grade = page["verdict"]
                entries.append((row["rank"], (label == "relevant", grade), True))
        out.append(entries)
    return out


def precision(lists, k):
    per_query = []
    rel_total = judged_total = 0
    for entries in lists:
        judged = [j for r, j, _ in entries if r <= k and j is not None]
        rel = sum(1 for j in judged if j[0])
        rel_total += rel
        judged_total += len(judged)
        if judged:
            per_query.append(Fraction(rel, len(judged)))
    return div(rel_total, judged_total), mean(per_query)


def engine_sheet(truth, engine):
    lists = judged_lists(truth, engine)
    micro_all, macro_all = precision(lists, 10**9)
    rows = []
    for k in range(1, MAX_K + 1):
        mi, ma = precision(lists, k)
        rows.append({"k": k, "micro": frac(mi), "macro": frac(ma)})

    graded = []
    cum_s = cum_c = 0
    for rank in range(1, MAX_K + 1):
        grades = [j[1] for entries in lists for r, j, _ in entries if r == rank and j is not None]
        cum_s += sum(grades)
        cum_c += len(grades)
        graded.append({
            "rank": rank,
            "graded": len(grades),
            "mean": frac(div(sum(grades), len(grades))),
            "cumulative": frac(div(cum_s, cum_c)),
        })

    all_grades = [j[1] for entries in lists for _, j, _ in entries if j is not None]
    counts = [sum(1 for g in all_grades if g == v) for v in range(5)]

    rr = []
    for n in truth["navigational"]:
        first = n["first"][engine]
        rr.append(Fraction(1) if first is not None and first == n["target"] else Fraction(0))
    correct = sum(1 for x in rr if x == 1)

    failed = sum(1 for i in truth["informational"] if i["lists"][engine] is None)
    failed += sum(1 for n in truth["navigational"] if n["outcome"][engine] == "capture-failed")
    results = sum(len(e) for e in lists)
    skipped = sum(1 for e in lists for _, j, _ in e if j is None)
    coverage = {
        "queries_answered": len(lists),
        "results": results,
        "binary_judged": results - skipped,
        "graded": results - skipped,
        "skipped": skipped,
        "unjudged": 0,
        "unavailable": sum(1 for e in lists for _, _, avail in e if not avail),
        "failed_captures": failed,
    }
    return {
        "engine_id": engine,
        "overall_relevant": frac(micro_all),
        "overall_relevant_macro": frac(macro_all),
        "precision": rows,
        "graded": graded,
        "grade_counts": counts,
        "grade_ratios": [frac(div(c, len(all_grades))) for c in counts],
        "navigational": {
            "verdicts": len(rr),
            "correct": correct,
            "success_rate": frac(div(correct, len(rr))),
            "success_at": [frac(div(correct, len(rr)))],
            "mrr": frac(mean(rr)),
        },
        "coverage": coverage,
    }


def overlap(truth, a, b, k):
    per_query = []
    for item in truth["informational"]:
        la, lb = item["lists"][a], item["lists"][b]
        if la is None or lb is None:
            continue
        sa = {r["canonical"] for r in la[:k] if r["canonical"] is not None}
        sb = {r["canonical"] for r in lb[:k] if r["canonical"] is not None}
        if sa | sb:
            per_query.append(Fraction(len(sa & sb), len(sa | sb)))
    return {"engine_a": a, "engine_b": b, "k": k, "queries": len(per_query), "overlap": frac(mean(per_query))}


def main():
    truth = json.loads((HERE / "truth.json").read_text())
    engines = truth["engines"]
    sheet = {
        "engines": [engine_sheet(truth, e) for e in engines],
        "overlap": [overlap(truth, a, b, MAX_K) for i, a in enumerate(engines) for b in engines[i + 1:]],
    }
    (HERE / "answer-sheet.json").write_text(json.dumps(sheet, indent=1) + "\n")


if __name__ == "__main__":
    main()
