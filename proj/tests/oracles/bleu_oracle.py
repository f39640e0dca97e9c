"""Independent BLEU-4 reference used to freeze the values in test_metrics.cpp.

Counts n-grams with collections.Counter and exact fractions; run with python3.
"""
import math
from collections import Counter
from fractions import Fraction

PAIRS = [
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("the the the the the the", "the cat sat on the mat"),
    ("the cat sat on the mat", "the cat sat on the red mat"),
    ("a cat is on the mat", "the cat is on the mat"),
    ("the quick brown fox jumps", "the quick brown dog jumps over the lazy fox"),
    ("slow down because a pedestrian is crossing", "slow down because a pedestrian is crossing ahead"),
    ("stop at the red light", "stop because the light is red"),
    ("turn left at the junction", "turn left at the junction ahead of the car"),
    ("merge carefully as a car is merging from the right lane", "slow down as a car is merging from the right"),
    ("keep speed , road is clear", "accelerate , the road ahead is clear"),
]


def grams(words, n):
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def stats(hyp, ref):
    h, r = hyp.split(), ref.split()
    match, total = [], []
    for n in range(1, 5):
        hc, rc = grams(h, n), grams(r, n)
        match.append(sum(min(c, rc[g]) for g, c in hc.items()))
        total.append(sum(hc.values()))
    return match, total, len(h), len(r)


def bp(c, r):
    return 1.0 if c >= r else math.exp(1 - r / c)


def corpus(pairs):
    m, t, c, r = [0] * 4, [0] * 4, 0, 0
    for hyp, ref in pairs:
        mm, tt, cc, rr = stats(hyp, ref)
        m = [a + b for a, b in zip(m, mm)]
        t = [a + b for a, b in zip(t, tt)]
        c, r = c + cc, r + rr
    if any(x == 0 for x in m):
        return 0.0
    prod = Fraction(1)
    for a, b in zip(m, t):
        prod *= Fraction(a, b)
    return bp(c, r) * float(prod) ** 0.25


def smoothed(hyp, ref):
    m, t, c, r = stats(hyp, ref)
    prod = Fraction(1)
    for a, b in zip(m, t):
        prod *= Fraction(a, b) if a else Fraction(1, b + 1)
    return bp(c, r) * float(prod) ** 0.25


if __name__ == "__main__":
    for hyp, ref in PAIRS:
        print(f"{corpus([(hyp, ref)]):.17g} {smoothed(hyp, ref):.17g}")
    print(f"corpus {corpus(PAIRS):.17g}")
