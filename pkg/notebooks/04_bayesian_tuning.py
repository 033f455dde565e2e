"""
Bayesian optimisation on a known bump
=====================================

Expected improvement over a Matern-5/2 surrogate, against random search
with the same budget.
"""

import numpy as np

from conflictlens import tune

space = tune.SearchSpace((tune.Param("x", "real", 0, 1), tune.Param("y", "real", 0, 1)))
centre = np.array([0.3, 0.7])


def bump(q):
    return float(np.exp(-((q["x"] - centre[0]) ** 2 + (q["y"] - centre[1]) ** 2) / (2 * 0.2**2)))


bo = tune.bayes_optimize(space, bump, budget=50, seed=0)
rs = tune.random_search(space, bump, budget=50, seed=0)
print("bayes :", bo.best_params, bo.best_objective)
print("random:", rs.best_params, rs.best_objective)
