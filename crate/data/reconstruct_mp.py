"""Rebuild data/mp_1889_1978.csv.

The original annual series is not redistributed here. This script draws a
deterministic 90-year series whose paired 1890-1978 observations match the
published 1889-1978 summary moments exactly (arithmetic means and sample
standard deviations of gross consumption growth and gross real returns) and
a chosen correlation structure. The consumption level is anchored so that
1977 per-capita consumption equals the level whose CRRA utility at
tau = 1.0319 is 7.14871804.

Replace the output with the replication-package series when available; see
data/README.md.
"""

import numpy as np

FIRST, LAST = 1889, 1978
TARGET_MEAN = np.array([1.0183, 1.0698, 1.0080])  # x, R_e, R_f
TARGET_SD = np.array([0.0357, 0.1654, 0.0567])
TARGET_CORR = np.array([
    [1.00, 0.40, 0.20],
    [0.40, 1.00, 0.20],
    [0.20, 0.20, 1.00],
])
ANCHOR_YEAR = 1977
ANCHOR_TAU = 1.0319
ANCHOR_UTILITY = 7.14871804


def main():
    rng = np.random.default_rng(1889)
    n = LAST - FIRST  # paired observations 1890..1978
    z = rng.standard_normal((n, 3))
    z -= z.mean(axis=0)
    # whiten the sample, then impose the target correlation exactly
    cov = np.cov(z, rowvar=False)
    z = z @ np.linalg.inv(np.linalg.cholesky(cov)).T
    z = z @ np.linalg.cholesky(TARGET_CORR).T
    paired = TARGET_MEAN + z * TARGET_SD

    first_returns = TARGET_MEAN[1:] + rng.standard_normal(2) * TARGET_SD[1:]

    growth = paired[:, 0]
    levels = np.concatenate([[1.0], np.cumprod(growth)])
    anchor = (1.0 + (1.0 - ANCHOR_TAU) * ANCHOR_UTILITY) ** (1.0 / (1.0 - ANCHOR_TAU))
    levels *= anchor / levels[ANCHOR_YEAR - FIRST]

    print("year,consumption,equity_return,riskfree_return")
    for i, year in enumerate(range(FIRST, LAST + 1)):
        re, rf = first_returns if i == 0 else paired[i - 1, 1:]
        print(f"{year},{levels[i]:.6f},{re:.6f},{rf:.6f}")


if __name__ == "__main__":
    main()
