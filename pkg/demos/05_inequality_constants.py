"""Discrete trace and Poincare constants stay bounded as eps shrinks.

Each constant is the largest eigenvalue of a generalized problem P v = c Q v
over P1 functions on the active nodes, found by power iteration.
"""
import math

from ddlab.analysis import (discrete_poincare_friedrichs_constant, discrete_poincare_mean_constant,
                            discrete_trace_constant, inequality_matrices)
from ddlab.geometry import Disk, box_around
from ddlab.meshing import build_structured_mesh
from ddlab.phasefield import LINEAR, PhaseField

disk = Disk((0.0, 0.0), math.sqrt(0.5))
print("eps      dofs    trace    poincare  poincare-mean")
for eps in (0.25, 0.125, 0.0625):
    mesh = build_structured_mesh(box_around(disk, eps), eps / 8)
    pf = PhaseField(LINEAR, eps, disk)
    mats = inequality_matrices(mesh, pf)
    c = [fn(mesh, pf, tol=1e-8, mats=mats) for fn in (discrete_trace_constant,
                                                       discrete_poincare_friedrichs_constant,
                                                       discrete_poincare_mean_constant)]
    print(f"{eps:<8} {mats.mass.shape[0]:<7} " + "  ".join(f"{v:.5f}" for v in c))
