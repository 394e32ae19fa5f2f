# coding: utf-8

# # Sweeping the low price

# The three scenarios (no privacy, privacy with seller obedience, privacy without it) react differently
# as the gap between H and L changes. The sweep below uses the closed forms on the uniform line.

# In[1]:

import numpy as np

from infobroker import analytic, welfare
from infobroker.lp_oracle import ScenarioSpec
from infobroker.model import MarketParams, Population, x_lower

line = Population.uniform_line()
rows = []
for L in np.arange(5.0, 10.0, 0.5):
    p = MarketParams.asymmetric(1000, 1, 10, L)
    sc = ScenarioSpec(p, line)
    duo = welfare.report(analytic.solve_privacy_duopoly(p), sc)
    nob = welfare.report(analytic.solve_no_obedience(p), sc)
    rows.append((L, x_lower(p), analytic.threshold_x_double_star(p), analytic.optimal_threshold_x_star(p),
                 duo.broker_revenue, nob.broker_revenue, duo.efficiency_loss, nob.efficiency_loss))
table = np.array(rows)


# In[2]:

print("   L   x_low   x**    x*     rev duo     rev no-ob   loss duo  loss no-ob")
for r in table:
    print("{:4.1f}  {:.3f}  {:.3f}  {:.3f}  {:.6f}  {:.6f}  {:.5f}  {:.5f}".format(*r))


# Thresholds stay ordered and obedience never helps the broker.

# In[3]:

assert np.all(table[:, 1] <= table[:, 2] + 1e-12) and np.all(table[:, 2] <= table[:, 3] + 1e-12)
assert np.all(table[:, 5] >= table[:, 4] - 1e-9)
print("orderings hold on every row")


# The command line gives the same table as CSV:
#
#     infobroker sweep --scenario scenarios/uniform.yaml --param L --from 5 --to 9.5 --step 0.5
