"""Standalone token counter (no package imports): most frequent lowercased whitespace token
among the first N tokens of a text file.

    python scripts/count_tokens.py data/founding_documents.txt --limit 10000
"""
import argparse
import sys


def top_token(path, limit):
    counts = {}
    seen = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            for word in line.split():
                if seen == limit:
                    break
                w = word.lower()
                counts[w] = counts.get(w, 0) + 1
                seen += 1
    best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return best[0], best[1], seen


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("path")
    ap.add_argument("--limit", type=int, default=10_000)
    a = ap.parse_args()
    tok, n, seen = top_token(a.path, a.limit)
    print(f"{tok}\t{n}\t{seen}")
    sys.exit(0)
