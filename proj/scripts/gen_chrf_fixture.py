#!/usr/bin/env python3
"""Freeze reference chrF / chrF++ scores for the 20-pair fixture.

Writes tests/chrf_fixture.inc: one ChrfFixtureCase per pair with the
reference scorer's chrF (nc=6, nw=0) and chrF++ (nc=6, nw=2) values.

Usage: python3 scripts/gen_chrf_fixture.py > tests/chrf_fixture.inc
"""

import sys

from chrf_reference import chrf

PAIRS = [
    # (hypothesis, reference) — exercises identity, disjointness, empties,
    # punctuation separation, clipping, short strings, casing, non-Latin
    # scripts, token order, and whitespace handling.
    ("The quick brown fox jumps over the lazy dog.",
     "The quick brown fox jumps over the lazy dog."),
    ("aaaa", "zzzz"),
    ("", "a non-empty reference sentence"),
    ("a non-empty hypothesis sentence", ""),
    ("cat", "cat sat"),
    ("Hello, world!", "Hello world"),
    ("the the the cat", "the cat"),
    ("ab", "ab cd"),
    ("x", "x"),
    ("café au lait", "cafe au lait"),
    ("今日はいい天気です",
     "今日は良い天気です"),
    ("The Cat Sat", "the cat sat"),
    ("It costs 42 dollars, not 24.", "It costs 42 dollars, not 25."),
    ("the cat sat on the mat", "on the mat the cat sat"),
    ("A translation that drifts towards the end badly",
     "A translation that drifts toward the ending poorly"),
    ("don't stop", "dont stop"),
    ("(hi)", "hi"),
    ("spaced\tout\ttokens here", "spaced out tokens here"),
    ("Ein kleiner Satz mit Umlauten: äöü.",
     "Ein kleiner Satz mit Umlauten: aou."),
    ("Multiple   internal    spaces collapse", "Multiple internal spaces collapse"),
]


def cxx_escape(s):
    out = []
    for ch in s:
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\n":
            out.append("\\n")
        else:
            out.append(ch)
    return "".join(out)


def main():
    out = sys.stdout
    assert len(PAIRS) == 20
    out.write("// Generated by scripts/gen_chrf_fixture.py; reference values from\n")
    out.write("// scripts/chrf_reference.py. Do not edit by hand.\n")
    out.write("// Fields: hypothesis, reference, chrF (nc6 nw0), chrF++ (nc6 nw2).\n")
    for hyp, ref in PAIRS:
        f0 = chrf(hyp, ref, word_order=0)
        f2 = chrf(hyp, ref, word_order=2)
        out.write('{"%s",\n "%s",\n %.10f, %.10f},\n' % (cxx_escape(hyp), cxx_escape(ref), f0, f2))


if __name__ == "__main__":
    main()
