#!/usr/bin/env python3
"""Normalize plain-text books into whitespace-tokenized train/valid/test files.

Each input file is lowercased, punctuation is split into separate tokens, and
the token stream of every book is cut contiguously into 90/5/5 portions so all
books contribute to every split.
"""
import argparse
import pathlib
import re

TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?|[^\sa-z0-9]")


def tokenize(text):
    return TOKEN.findall(text.lower())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("inputs", nargs="+", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, required=True)
    ap.add_argument("--valid", type=float, default=0.05)
    ap.add_argument("--test", type=float, default=0.05)
    ap.add_argument("--line-tokens", type=int, default=32)
    args = ap.parse_args()

    splits = {"train": [], "valid": [], "test": []}
    for path in args.inputs:
        tokens = tokenize(path.read_text(encoding="latin-1"))
        n = len(tokens)
        n_test = int(n * args.test)
        n_valid = int(n * args.valid)
        n_train = n - n_valid - n_test
        splits["train"] += tokens[:n_train]
        splits["valid"] += tokens[n_train:n_train + n_valid]
        splits["test"] += tokens[n_train + n_valid:]

    args.out.mkdir(parents=True, exist_ok=True)
    for name, tokens in splits.items():
        step = args.line_tokens
        lines = (" ".join(tokens[i:i + step]) for i in range(0, len(tokens), step))
        (args.out / f"{name}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"{name}: {len(tokens)} tokens")


if __name__ == "__main__":
    main()
