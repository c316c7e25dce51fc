"""Self-consuming loop: fresh data keeps the model anchored, none lets it collapse."""

import numpy as np

from collapselab.collapse import (
    FINITE,
    INFINITE,
    AlphaSchedule,
    LoopConfig,
    NoiseModel,
    mean_drift_sim,
    run_trajectory,
)
from collapselab.dist import Categorical, uniform

# %% ideal loop: geometric approach to the truth
rng = np.random.default_rng(0)
labels = tuple(range(16))
P = Categorical(labels, rng.dirichlet(np.ones(16)))
Q0 = uniform(labels)
for a in (0.01, 0.1, 0.5):
    tr = run_trajectory(LoopConfig(P, Q0, AlphaSchedule("constant", a), None, 50, 0, INFINITE))
    print(f"alpha={a:<5} TV at t=0,10,50: {tr.tv[0]:.4f} {tr.tv[10]:.4f} {tr.tv[50]:.2e}")

# %% finite samples and no fresh data: entropy drains and the support shrinks
P = uniform(range(50))
tr = run_trajectory(LoopConfig(P, P, AlphaSchedule(), 100, 500, 7, FINITE))
for t in (0, 10, 50, 100, 250, 500):
    print(f"t={t:<4} H={tr.entropy[t]:6.3f} bits  support={tr.support_size[t]:>2}")

# %% even a little fresh data stops the collapse
tr = run_trajectory(LoopConfig(P, P, AlphaSchedule("constant", 0.05), 100, 500, 7, FINITE))
print(f"alpha=0.05: final support {tr.support_size[-1]}, H={tr.entropy[-1]:.3f}")

# %% the mean of the model wanders like a random walk unless anchored
for a in (0.0, 0.1):
    res = mean_drift_sim(0.0, AlphaSchedule("constant", a), NoiseModel(sigma=0.01), 2000, 400, 3)
    print(f"alpha={a}: Var(mu_t) at t=500,1000,2000 = "
          + ", ".join(f"{res.var[t]:.2e}" for t in (500, 1000, 2000)))
