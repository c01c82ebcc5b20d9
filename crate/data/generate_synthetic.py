"""Writes tumor_volumes.csv: synthetic caliper-style growth series.

Each subject follows a logistic curve V(t) = K / (1 + (K/V0 - 1) exp(-r (t - 22)))
sampled on days 22-32 with 4% multiplicative Gaussian noise. Draws are seeded
per subject, so the file is reproducible. A draw is rejected (and the next
seed offset tried) when the fitted four-parameter logistic starts at or below
the smallest measured volume, because normalized trajectories must start above
zero.

Usage: python3 generate_synthetic.py > tumor_volumes.csv
"""

import numpy as np
from scipy.optimize import curve_fit

DAYS = np.array([22, 24, 25, 27, 29, 30, 32], dtype=float)
CAPACITY = [1200, 2100, 1200, 1250, 900, 1350, 1100, 1350, 1100, 1300]
RATE = [0.425, 0.38, 0.44, 0.41, 0.47, 0.40, 0.45, 0.39, 0.43, 0.42]
V22 = [80, 95, 70, 85, 60, 90, 75, 100, 65, 80]
NOISE = 0.04


def logistic(t, k, r, v0):
    return k / (1 + (k / v0 - 1) * np.exp(-r * (t - DAYS[0])))


def sigmoid(tau, a, b, k, tau0):
    return a + b / (1 + np.exp(-k * (tau - tau0)))


def draw(subject):
    i = subject - 1
    for offset in range(100):
        rng = np.random.default_rng(subject + 1000 * offset)
        v = logistic(DAYS, CAPACITY[i], RATE[i], V22[i]) * (1 + NOISE * rng.standard_normal(len(DAYS)))
        tau = (DAYS - DAYS[0]) / (DAYS[-1] - DAYS[0])
        p, _ = curve_fit(sigmoid, tau, v, p0=[v.min(), v.max() - v.min(), 10, 0.5], maxfev=20000)
        v0 = (sigmoid(0.0, *p) - v.min()) / (v.max() - v.min())
        if 0 < p[3] < 1 and v0 > 0.005:
            return v
    raise RuntimeError(f"no acceptable draw for subject {subject}")


def main():
    print("# Synthetic tumor volumes (mm^3) generated by generate_synthetic.py.")
    print("id,time_days,volume_mm3")
    for subject in range(1, 11):
        for t, v in zip(DAYS, draw(subject)):
            print(f"{subject},{t:g},{v:.1f}")


if __name__ == "__main__":
    main()
