"""
Penalized equations approach the reflected one from below
==========================================================
"""

from switchbsde.bsde import solve_penalized, solve_reflected
from switchbsde.instances import instance
from switchbsde.lattice import build_chain
from switchbsde.switching import mode_spec, picard_solve

doc = instance("C")
p = doc.problem
grid = build_chain(p, doc.n_steps)
sol, _ = picard_solve(grid, p)

# freeze the converged interconnected obstacle of mode 0
spec = mode_spec(p, 0, sol.obstacles()[0])
target = solve_reflected(grid, spec).root
print("reflected root: %.8f" % target)
for n in (1, 10, 100, 1_000, 10_000):
    y = solve_penalized(grid, spec, n).root
    print("n = %6d  root = %.8f  gap = %.2e" % (n, y, target - y))
