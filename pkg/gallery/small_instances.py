# coding: utf-8

# # Small discrete instances

# Three consumers on an asymmetric line, then two consumers in a symmetric market.
# The LP oracle gives the optimum, and a constraint audit tells which rows bind.

# In[1]:

import numpy as np

from infobroker.analytic import solve_three_consumers
from infobroker.lp_oracle import ScenarioSpec, binding_report, solve
from infobroker.model import MarketParams, Population

p = MarketParams.asymmetric(1000, 1, 10, 9)
pop = Population.discrete([3 / 8, 4 / 6, 5 / 6], [0.9, 0.05, 0.05])
res = solve(ScenarioSpec(p, pop))
res.revenue, res.y()


# The two consumers above the boundary share one mixing probability. The middle one pays its full
# surplus while the last one keeps a small rent.

# In[2]:

print("payoffs", np.round(res.consumer_payoffs, 6))
print("binding", binding_report(res)["consumerIR"])


# The closed-form branch search lands on the same point here.

# In[3]:

tree = solve_three_consumers(p, *pop.locations, pop.masses)
tree.binding_case, tree.y2, tree.y3, tree.revenue


# ## A symmetric market

# In[4]:

sym = MarketParams.symmetric(10000, 18, 10, 1)
pop2 = Population.discrete([3 / 8, 9 / 16], [0.95, 0.05])
off = solve(ScenarioSpec(sym, pop2, obedience=False))
on = solve(ScenarioSpec(sym, pop2))
print(f"obedience off {off.revenue:.6f}")
print(f"obedience on  {on.revenue:.6f}")


# With obedience on, the broker must spread the first consumer over several price pairs.

# In[5]:

joint = on.mechanism.scheme * pop2.masses[:, None]
print("signals  HH       HL       LH       LL")
for i, row in enumerate(joint):
    print(f"x{i + 1}      " + "  ".join(f"{v:.5f}" for v in row))
