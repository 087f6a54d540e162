"""Exponential-utility vs mean-variance weights on a two-asset bet.

Asset 1 returns -1 with probability p and +1 otherwise; asset 2 returns 0.
Mean-variance only sees the first two moments and bets far harder.
"""

import math

import numpy as np

from gmport import model as gm
from gmport.egm import EgmProblem, markowitz_solve, solve_egm


def bet_model(p):
    return gm.GmModel.finite_values([p, 1 - p], [[-1.0, 0.0], [1.0, 0.0]])


def main():
    m = bet_model(0.05)
    mu, cov = gm.mixture_moments(m)
    egm = solve_egm(EgmProblem(m, 1.0))
    mk = markowitz_solve(mu, cov, 1.0)
    print(f"exponential utility weights {np.round(egm.weights, 4)}")
    print(f"mean-variance weights       {np.round(mk.weights, 4)}")
    draws = gm.sample(m, 10**6, 0)
    for name, w in (("exponential utility", egm.weights), ("mean-variance", mk.weights)):
        # the 5% VaR is the bad-state loss, hit with frequency p = 0.05
        freq = np.mean(draws @ w <= -w[0] + 1e-9)
        print(f"{name:20s} bad-state loss (5% VaR) {w[0]:.2f}, sampled frequency {freq:.4f}")

    print("\np      gamma  closed form  solver")
    for p in (0.1, 0.3, 0.7):
        for gamma in (0.5, 2.0):
            w = solve_egm(EgmProblem(bet_model(p), gamma)).weights[0]
            print(f"{p:.1f}  {gamma:5.1f}  {math.log(1 / p - 1) / (2 * gamma):+.6f}  {w:+.6f}")


if __name__ == "__main__":
    main()
