"""Walk through the resource criteria on the two state families.

Run: python demos/criteria_tour.py
"""

import numpy as np

from pigan import families, qstate
from pigan.families import Family, Task

# A Werner-like state sits on the teleportation boundary when p (1 + 4 alpha beta) = 1.
alpha = 1 / np.sqrt(2)
p_star = families.werner_boundary_p(alpha)
print(f"Werner-like boundary at alpha = 1/sqrt(2): p = {p_star:.6f}")

for p in (0.2, p_star + 0.05, 0.9):
    rho = families.werner_like_state(families.WernerLikeParams(p, alpha))
    n, fmax = qstate.teleportation_score(rho)
    print(f"  p = {p:.3f}: F_max = {fmax:.4f}, min eig of partial transpose = "
          f"{qstate.min_eig_pt(rho):+.4f}, useful = {bool(families.criterion(Family.WERNER_LIKE, Task.TELEPORTATION, rho))}")

# Bell-diagonal states: N equals |c1| + |c2| + |c3|, and broadcasting needs the corner sub-regions.
print("\nBell-diagonal states")
for c in [(0.2, -0.2, 0.2), (0.9, -0.9, 0.9), (-0.7, -0.7, -0.7), (-0.4, -0.4, -0.4)]:
    rho = families.bell_diagonal_state(families.BellDiagonalParams(c))
    n, _ = qstate.teleportation_score(rho)
    flags = {t.value: bool(families.criterion(Family.BELL_DIAGONAL, t, rho)) for t in Task}
    print(f"  c = {c}: N = {n:.3f}, {flags}")

print("\nExact corners of the local-broadcasting region at vertex D:")
for corner in families.corner_region("D", Task.LOCAL_BROADCAST):
    print("  ", tuple(str(x) for x in corner))
