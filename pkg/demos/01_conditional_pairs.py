"""Conditional logistic regression on matched pairs.

With one binary factor, only discordant pairs carry information and the
estimate is log(n10 / n01). Here 10 pairs have the factor only in the case,
5 only in the control and 7 in neither.
"""

import math

from matchedpairs import PairRow, fit_conditional_pairs


def pair(i, z):
    ctx = {"gender": 1, "adult": 1, "after2004": 0}
    return PairRow(i, i, 1000 + i, {"interviewed": z}, "N000", ctx, dict(ctx))


rows = [pair(i, 1.0) for i in range(10)] + [pair(10 + i, -1.0) for i in range(5)]
rows += [pair(15 + i, 0.0) for i in range(7)]

report = fit_conditional_pairs(rows, ["interviewed"])
print(report.to_markdown())
row = report.row("interviewed")
print(f"estimate {row.estimate:.6f}, log(10/5) = {math.log(2):.6f}")
print(f"odds ratio {row.odds_ratio:.4f}, standard error {row.std_error:.4f} (sqrt(1/10 + 1/5) = {math.sqrt(0.3):.4f})")

# a 1:M likelihood with one control per case is the same model
same = fit_conditional_pairs(rows, ["interviewed"], mode="conditional").row("interviewed")
print(f"1:M mode on the same pairs: {same.estimate:.6f}")
