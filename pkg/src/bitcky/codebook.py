"""Code → label vocabulary built from an eval-mode pass over training data."""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict

import numpy as np

from . import chart as C
from .contrastive import TargetSpans, binarize
from .encoder import score_sentences
from .treebank import spans_of


class EmptyCodebook(LookupError):
    pass


def code_to_bits(code):
    """``(+1, -1, +1)`` → ``"101"``."""
    return "".join("1" if c > 0 else "0" for c in code)


def bits_to_code(bits):
    return tuple(1 if ch == "1" else -1 for ch in bits)


def code_to_hex(code):
    """Bits grouped four per digit, first bit most significant."""
    bits = code_to_bits(code)
    return format(int(bits, 2), "0{}X".format(math.ceil(len(bits) / 4)))


class Codebook:
    """Frequencies ``f(code, label)`` and the argmax translation table."""

    def __init__(self, freq=None):
        self.freq = Counter()
        self.fallbacks = 0
        if freq:
            self.freq.update(freq)
        self._rebuild()

    def _rebuild(self):
        per_code = defaultdict(dict)
        for (code, label), n in self.freq.items():
            per_code[code][label] = n
        self.totals = {c: sum(d.values()) for c, d in per_code.items()}
        # highest count wins, ties to the lexicographically smaller label
        self.table = {c: min(d.items(), key=lambda kv: (-kv[1], kv[0]))[0]
                      for c, d in per_code.items()}

    def add(self, code, label, count=1):
        self.freq[(tuple(int(x) for x in code), label)] += count

    def finalize(self):
        self._rebuild()
        return self

    def __len__(self):
        return len(self.table)

    def __eq__(self, other):
        return isinstance(other, Codebook) and self.freq == other.freq

    def labels(self):
        return sorted({y for _, y in self.freq})

    def translate(self, code):
        """Argmax label of a seen code, else that of the nearest seen code.

        Nearest is by Hamming distance; ties go to the code with the larger
        total count, then the lexicographically smaller bitstring.
        """
        if not self.table:
            raise EmptyCodebook("codebook has no entries")
        code = tuple(int(x) for x in code)
        if code in self.table:
            return self.table[code]
        self.fallbacks += 1
        target = np.array(code)
        best = min(self.table, key=lambda c: (int(np.sum(np.array(c) != target)),
                                              -self.totals[c], code_to_bits(c)))
        return self.table[best]

    def coverage_report(self, threshold=0.9):
        """Rows ``(label, code, coverage)`` per label, most frequent codes first.

        Rows stop once the cumulative coverage reaches ``threshold``.
        """
        if not self.freq:
            raise EmptyCodebook("codebook has no entries")
        by_label = defaultdict(list)
        for (code, label), n in self.freq.items():
            by_label[label].append((n, code))
        rows = []
        for label in sorted(by_label):
            entries = sorted(by_label[label], key=lambda e: (-e[0], code_to_bits(e[1])))
            total = sum(n for n, _ in entries)
            cum = 0.0
            for n, code in entries:
                cov = n / total
                rows.append((label, code, cov))
                cum += cov
                if cum >= threshold - 1e-12:
                    break
        return rows

    # -- files -----------------------------------------------------------------

    def to_json(self):
        out = {}
        for code in sorted(self.table, key=code_to_bits):
            freq = {y: n for (c, y), n in sorted(self.freq.items(), key=lambda kv: kv[0][1])
                    if c == code}
            out[code_to_bits(code)] = {"label": self.table[code], "count": self.totals[code],
                                       "freq": freq}
        return out

    @classmethod
    def from_json(cls, data):
        freq = Counter()
        for bits, entry in data.items():
            code = bits_to_code(bits)
            if "freq" in entry:
                for y, n in entry["freq"].items():
                    freq[(code, y)] += int(n)
            else:
                freq[(code, entry["label"])] += int(entry["count"])
        return cls(freq)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, ensure_ascii=False, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def write_coverage_tsv(path_or_file, rows):
    lines = ["label\tcode\tcoverage"]
    lines += [f"{label}\t{code_to_hex(code)}\t{100 * cov:.2f}%" for label, code, cov in rows]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w", encoding="utf-8") as f:
            f.write(text)


def target_codes(params, sentences, trees, batch_size=64):
    """Eval-mode codes of every target-tree span, as ``(codes, labels)`` per sentence."""
    out = []
    for start in range(0, len(sentences), batch_size):
        sents = sentences[start:start + batch_size]
        span_lists = [spans_of(t) for t in trees[start:start + batch_size]]
        sc = score_sentences(params, sents, mode="eval")
        _, mc = C.marginals(sc)
        targets = TargetSpans.from_trees(span_lists)
        pos, neg = targets.gather(mc)
        codes = binarize(pos, neg)
        offset = 0
        for spans in span_lists:
            out.append((codes[offset:offset + len(spans)], [s.label for s in spans]))
            offset += len(spans)
    return out


def build(params, sentences, trees, batch_size=64):
    """Count ``(code, gold label)`` over the target spans of a training corpus."""
    cb = Codebook()
    for codes, labels in target_codes(params, sentences, trees, batch_size):
        for code, label in zip(codes, labels):
            cb.add(code, label)
    return cb.finalize()
