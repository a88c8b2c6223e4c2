#!/usr/bin/env python3
"""Generate include/polymine/unicode_tables.hpp.

Emits sorted codepoint ranges for the character classes the library needs
(emoji via Extended_Pictographic, punctuation P*, whitespace, word characters
L*/M*/N*) plus a simple-lowercase mapping table. Requires the 'regex' package
for Unicode property queries. The generated header is checked in so normal
builds do not need Python.

Usage: python3 scripts/gen_unicode_tables.py > include/polymine/unicode_tables.hpp
"""

import sys
import unicodedata

import regex

MAX_CP = 0x110000


def match_class(pattern):
    """Return the sorted list of codepoints matching a regex pattern."""
    pat = regex.compile(pattern)
    cps = []
    for cp in range(MAX_CP):
        if 0xD800 <= cp <= 0xDFFF:  # surrogates are not scalar values
            continue
        if pat.match(chr(cp)):
            cps.append(cp)
    return cps


def to_ranges(cps):
    """Collapse a sorted codepoint list into inclusive (lo, hi) ranges."""
    ranges = []
    for cp in cps:
        if ranges and cp == ranges[-1][1] + 1:
            ranges[-1][1] = cp
        else:
            ranges.append([cp, cp])
    return ranges


def emit_ranges(name, ranges, out):
    out.write(f"inline constexpr CpRange {name}[] = {{\n")
    for i in range(0, len(ranges), 6):
        chunk = ranges[i : i + 6]
        out.write("    " + " ".join(f"{{0x{lo:X}, 0x{hi:X}}}," for lo, hi in chunk) + "\n")
    out.write("};\n\n")


def simple_lower_pairs():
    """Codepoint -> lowercase codepoint where a 1:1 lowering exists and differs."""
    pairs = []
    for cp in range(MAX_CP):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        c = chr(cp)
        low = c.lower()
        if len(low) == 1 and low != c:
            pairs.append((cp, ord(low)))
    return pairs


def main():
    out = sys.stdout
    classes = [
        ("kEmojiRanges", r"\p{Extended_Pictographic}"),
        ("kPunctRanges", r"\p{P}"),
        ("kSpaceRanges", r"\p{White_Space}"),
        ("kWordRanges", r"[\p{L}\p{M}\p{N}]"),
    ]
    out.write("// Generated by scripts/gen_unicode_tables.py (Unicode data from the\n")
    out.write(f"// 'regex' package {regex.__version__}, unicodedata {unicodedata.unidata_version}).\n")
    out.write("// Do not edit by hand; rerun the script to refresh.\n")
    out.write("#pragma once\n\n")
    out.write("#include <cstdint>\n\n")
    out.write("namespace polymine::uni {\n\n")
    out.write("struct CpRange { char32_t lo, hi; };  // inclusive\n")
    out.write("struct CpPair { char32_t cp, lower; };\n\n")
    for name, pat in classes:
        ranges = to_ranges(match_class(pat))
        emit_ranges(name, ranges, out)
    pairs = simple_lower_pairs()
    out.write("inline constexpr CpPair kSimpleLower[] = {\n")
    for i in range(0, len(pairs), 6):
        chunk = pairs[i : i + 6]
        out.write("    " + " ".join(f"{{0x{cp:X}, 0x{lo:X}}}," for cp, lo in chunk) + "\n")
    out.write("};\n\n")
    out.write("}  // namespace polymine::uni\n")


if __name__ == "__main__":
    main()
