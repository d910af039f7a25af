"""
How the tube radius reacts to crowding
======================================

The radius is a smooth minimum of the largest allowed radius and the two
clearances. With one close neighbor it cannot drop below a fixed positive
floor; with several the floor is gone.
"""

# %%
import numpy as np

from sastt.tube import radius_closed_form, radius_lower_bound, smooth_min

rho_min, rho_max, nu = 0.6, 0.9, 10.0
print("floor with one close neighbor:", round(radius_lower_bound(rho_max, rho_min, nu), 4))

# %%
# sweep one clearance down to rho_min, the other far away
d = np.linspace(rho_min, 2.0, 8)
print(np.c_[d, radius_closed_form(d, np.inf, rho_max, nu)].round(4))

# %%
# k neighbors all exactly at rho_min: the smooth minimum keeps dropping
for k in (1, 2, 3, 4, 6):
    d2 = smooth_min(np.full(k, rho_min), nu)
    print(k, "neighbors -> radius", round(float(radius_closed_form(np.inf, d2, rho_max, nu)), 4))
