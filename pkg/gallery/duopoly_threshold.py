# coding: utf-8

# # Threshold mechanisms on the uniform line

# A broker sells both sellers a price recommendation for each consumer location. Below the segment boundary
# every consumer gets (H,H); above it the consumer gets (L,L) with probability y(x) and (H,L) otherwise.
# This notebook builds the revenue-maximizing threshold mechanism and looks at its shape.

# In[1]:

import numpy as np

from infobroker.analytic import (optimal_threshold_x_star, solve_no_obedience, solve_privacy_duopoly,
                                 threshold_mechanism)
from infobroker.model import MarketParams, x_lower

p = MarketParams.asymmetric(V=1000, t=1, H=10, L=9)
x_lower(p), optimal_threshold_x_star(p)


# The mechanism keeps y = 1 up to the threshold and mixes equally above it.

# In[2]:

mech = solve_privacy_duopoly(p)
xs = np.linspace(0, 1, 11)
print("x     y     fee        payoff")
for x in xs:
    y = 1.0 if x <= mech.x_lower else mech.y(x)
    print(f"{x:.1f}  {y:.2f}  {mech.fee(x):9.4f}  {mech.consumer_payoff(x):.4f}")


# Payoffs fall at rate t while y = 1 and stay flat at zero once the mixing starts.
# Moving the threshold trades fee revenue against the sellers' willingness to follow the recommendation.

# In[3]:

for a in np.linspace(mech.x_lower, 1, 6):
    m = threshold_mechanism(p, a)
    print(f"threshold {a:.3f}  revenue {m.revenue():.6f}")


# Dropping the sellers' obedience constraints lets the broker pick a lower threshold and earn more.

# In[4]:

free = solve_no_obedience(p)
print(f"with obedience    x*  = {mech.x_star:.4f}  revenue {mech.revenue():.6f}")
print(f"without obedience x** = {free.x_star:.4f}  revenue {free.revenue():.6f}")


# The same mechanism on a grid of cells gets close to the LP optimum on that grid.

# In[5]:

from infobroker.lp_oracle import ScenarioSpec, solve
from infobroker.model import Population

for N in (10, 25, 50):
    lp = solve(ScenarioSpec(p, Population.uniform_line(), grid=N)).revenue
    print(f"N={N:3d}  LP {lp:.7f}  grid threshold {mech.grid_revenue(N):.7f}")
