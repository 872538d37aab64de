"""Phase field profiles and the weight they induce.

Run with ``python3 demos/01_phase_fields.py``.
"""
import math

import numpy as np

from ddlab.geometry import Disk
from ddlab.phasefield import PROFILES, PhaseField, verify_profile

disk = Disk((0.0, 0.0), math.sqrt(0.5))

# each built-in profile comes with the exponent alpha and two constants
for name, profile in PROFILES.items():
    report = verify_profile(profile)
    print(f"{name:8s} alpha={profile.alpha} zeta1={profile.zeta1} zeta2={profile.zeta2} "
          f"axioms ok: {report.ok}")

# walk along the x axis through the boundary of the disk
eps = 0.25
xs = np.linspace(0.3, 1.1, 9)
ys = np.zeros_like(xs)
print("\n   x     d     omega (linear, cubic, quintic)")
for x, y in zip(xs, ys):
    d = disk.distance(np.array([x]), np.array([y]))[0]
    w = [PhaseField(p, eps, disk).omega(np.array([x]), np.array([y]))[0] for p in PROFILES.values()]
    print(f"{x:5.2f} {d:+6.3f}  " + "  ".join(f"{v:.4f}" for v in w))

# omega is 1 deep inside, 1/2 on the boundary and 0 beyond the band
