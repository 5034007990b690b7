#!/usr/bin/env python3
"""Brute-force reference scorer for the metric tests.

Reads a pairs file (JSON lines of id, candidate, references, passage) and
prints the expected scores as JSON. Standard library only; nothing here is
shared with the Rust implementation.

    python3 metrics_oracle.py golden_pairs.jsonl > golden_expected.json
"""

import json
import math
import sys
from itertools import combinations

BETA = 1.2
DELTA = 0.5

WH = {"what", "which", "who", "whom", "whose", "when", "where", "why", "how"}
AUX = set("is are was were am be been being do does did has have had can could "
          "will would shall should may might must".split())
FUNCTION = set("""a an the of in on at to for from by with about as into through
during before after above below between under over and or but nor so yet if
than then that this these those there here it its he she they them his her
their him we us our you your i me my not no many much some any all each every
other another such own same both few more most is are was were am be been being
do does did has have had can could will would shall should may might must up
down out off again also only very too just""".split())


def is_punct_char(c):
    return not c.isalnum() and not c.isspace()


def tokenize(text):
    out, cur = [], ""
    for c in text:
        if c.isspace():
            if cur:
                out.append(cur)
            cur = ""
        elif is_punct_char(c):
            if cur:
                out.append(cur)
            cur = ""
            out.append(c)
        else:
            cur += c
    if cur:
        out.append(cur)
    return out


def count_occurrences(seq, gram):
    n = len(gram)
    return sum(1 for i in range(len(seq) - n + 1) if tuple(seq[i:i + n]) == gram)


def ngram_stats(cand, refs, n):
    grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    total = len(grams)
    matched = 0
    for g in set(grams):
        in_cand = count_occurrences(cand, g)
        in_ref = max(count_occurrences(r, g) for r in refs)
        matched += min(in_cand, in_ref)
    return matched, total


def closest_ref_len(c, refs):
    best = None
    for r in refs:
        key = (abs(len(r) - c), len(r))
        if best is None or key < best:
            best = key
    return best[1]


def bleu(stats, cand_len, ref_len, n, smooth):
    logs = []
    for k in range(n):
        m, t = stats[k]
        if t == 0:
            continue
        if m > 0:
            logs.append(math.log(m / t))
        elif smooth:
            logs.append(math.log(1.0 / (t + 1)))
        else:
            return 0.0
    if not logs:
        return 0.0
    bp = math.exp(1.0 - ref_len / cand_len) if cand_len < ref_len else 1.0
    return bp * math.exp(sum(logs) / len(logs))


def sentence_bleu(cand, refs, n):
    if not cand:
        return 0.0
    stats = [ngram_stats(cand, refs, k) for k in range(1, 5)]
    return bleu(stats, len(cand), closest_ref_len(len(cand), refs), n, True)


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def lcs_brute(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in combinations(range(len(short)), size):
            if is_subsequence([short[i] for i in idx], long_):
                return size
    return 0


def rouge_l(cand, ref):
    if not cand or not ref:
        return 0.0
    l = lcs_brute(cand, ref)
    if l == 0:
        return 0.0
    p, r = l / len(cand), l / len(ref)
    b2 = BETA * BETA
    return (1 + b2) * p * r / (r + b2 * p)


def is_punct_token(t):
    return t != "" and not any(c.isalnum() for c in t)


def is_number(t):
    return any(c in "0123456789" for c in t) and all(c in "0123456789.," for c in t)


def lexicon(raw_tokens):
    out = set()
    for t in raw_tokens:
        if t[:1].isupper():
            low = t.lower()
            if low not in FUNCTION and low not in WH:
                out.add(low)
    return out


def components(tokens, lex):
    ents, imp, fun, qtype = [], [], [], None
    for t in tokens:
        if is_punct_token(t):
            continue
        if t in WH:
            qtype = qtype or t
        elif is_number(t) or t in lex:
            ents.append(t)
        elif t in FUNCTION:
            fun.append(t)
        else:
            imp.append(t)
    if qtype is None:
        words = [t for t in tokens if not is_punct_token(t)]
        if words and words[0] in AUX:
            qtype = words[0]
    return ents, imp, fun, qtype


def f1(a, b):
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    common = sum(min(a.count(t), b.count(t)) for t in set(a))
    if common == 0:
        return 0.0
    p, r = common / len(a), common / len(b)
    return 2 * p * r / (p + r)


def score(rec):
    cand = [t.lower() for t in tokenize(rec["candidate"])]
    raw_refs = [tokenize(r) for r in rec["references"]]
    refs = [[t.lower() for t in r] for r in raw_refs]
    raw_passage = tokenize(rec.get("passage", ""))
    passage = [t.lower() for t in raw_passage]
    lex = lexicon(raw_passage + [t for r in raw_refs for t in r])
    c = components(cand, lex)
    r = components(refs[0], lex)
    comp = {
        "named_entities": f1(c[0], r[0]),
        "important_words": f1(c[1], r[1]),
        "function_words": f1(c[2], r[2]),
        "question_type": 1.0 if c[3] == r[3] else 0.0,
    }
    ans = sum(comp.values()) / 4.0
    b = [sentence_bleu(cand, refs, n) for n in range(1, 5)]
    return {
        "id": rec["id"],
        "bleu": b,
        "rouge_l": max(rouge_l(cand, ref) for ref in refs),
        "answerability": ans,
        "components": comp,
        "qbleu4": DELTA * ans + (1 - DELTA) * b[3],
    }, (cand, refs, passage)


def main(path):
    recs = [json.loads(l) for l in open(path, encoding="utf-8") if l.strip()]
    per, toks = [], []
    for rec in recs:
        s, t = score(rec)
        per.append(s)
        toks.append(t)
    pooled = [[0, 0] for _ in range(4)]
    cand_len = ref_len = 0
    for cand, refs, _ in toks:
        for k in range(4):
            m, t = ngram_stats(cand, refs, k + 1) if cand else (0, 0)
            pooled[k][0] += m
            pooled[k][1] += t
        cand_len += len(cand)
        ref_len += closest_ref_len(len(cand), refs)
    n = len(per)
    corpus = {
        "bleu": [bleu(pooled, cand_len, ref_len, k, False) for k in range(1, 5)],
        "rouge_l": sum(p["rouge_l"] for p in per) / n,
        "answerability": sum(p["answerability"] for p in per) / n,
        "qbleu4": sum(p["qbleu4"] for p in per) / n,
    }
    json.dump({"per_example": per, "corpus": corpus}, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
