#!/usr/bin/env python3
"""Reference chrF / chrF++ scorer used to freeze test fixture values.

Independent Counter-based implementation of the published scorer semantics:
  - character n-grams of order 1..char_order over the text with all whitespace
    removed (when remove_spaces is set),
  - word n-grams of order 1..word_order over whitespace tokens, after
    separating a single leading or trailing ASCII punctuation character from
    each token (trailing takes precedence, single-char tokens untouched),
  - per-order clipped precision/recall, F_beta with beta=2,
  - arithmetic mean over all char+word orders; with effective_order, orders
    where either side has no n-grams are skipped entirely,
  - result scaled to [0, 100].

Kept deliberately separate from the C++ implementation; scripts/gen_chrf_fixture.py
runs this to produce tests/chrf_fixture.inc.
"""

import string
from collections import Counter


def char_ngrams(text, order, remove_spaces):
    if remove_spaces:
        text = "".join(text.split())
    grams = [Counter() for _ in range(order)]
    for n in range(1, order + 1):
        for i in range(len(text) - n + 1):
            grams[n - 1][text[i : i + n]] += 1
    return grams


def punct_tokens(text):
    toks = []
    for w in text.split():
        if len(w) > 1 and w[-1] in string.punctuation:
            toks += [w[:-1], w[-1]]
        elif len(w) > 1 and w[0] in string.punctuation:
            toks += [w[0], w[1:]]
        else:
            toks.append(w)
    return toks


def word_ngrams(text, order):
    toks = punct_tokens(text)
    grams = [Counter() for _ in range(order)]
    for n in range(1, order + 1):
        for i in range(len(toks) - n + 1):
            grams[n - 1][tuple(toks[i : i + n])] += 1
    return grams


def chrf(hypothesis, reference, char_order=6, word_order=0, beta=2.0,
         remove_spaces=True, effective_order=True, lowercase=False):
    if lowercase:
        hypothesis, reference = hypothesis.lower(), reference.lower()
    hyp = char_ngrams(hypothesis, char_order, remove_spaces) + word_ngrams(hypothesis, word_order)
    ref = char_ngrams(reference, char_order, remove_spaces) + word_ngrams(reference, word_order)
    factor = beta * beta
    total, orders = 0.0, 0
    for h, r in zip(hyp, ref):
        n_hyp, n_ref = sum(h.values()), sum(r.values())
        if n_hyp == 0 or n_ref == 0:
            if not effective_order:
                orders += 1
            continue
        match = sum(min(c, r[g]) for g, c in h.items())
        prec, rec = match / n_hyp, match / n_ref
        denom = factor * prec + rec
        total += (1 + factor) * prec * rec / denom if denom > 0 else 0.0
        orders += 1
    return 100.0 * total / orders if orders else 0.0


if __name__ == "__main__":
    # Hand-checked value: hyp "cat" vs ref "cat sat", chrF (nc=6, nw=0).
    # Char streams "cat" / "catsat". Order 1: P=1, R=3/6 -> F=0.555556;
    # order 2: P=1, R=2/5 -> F=0.454545; order 3: P=1, R=1/4 -> F=0.294118;
    # orders 4-6 empty on the hypothesis side, skipped. Mean*100 = 43.473972.
    got = chrf("cat", "cat sat")
    assert abs(got - 43.473972) < 1e-4, got
    assert chrf("hello there", "hello there") == 100.0
    assert chrf("hello there", "hello there", word_order=2) == 100.0
    assert chrf("aaaa", "zzzz") == 0.0
    assert chrf("", "anything") == 0.0
    print("self-check ok")
