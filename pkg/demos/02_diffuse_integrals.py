"""Diffuse approximations of volume and surface integrals on a disk.

The diffuse volume of the disk exceeds pi R^2 by pi eps^2 (1 - m), where m is
the first moment of the profile, so the error is exactly quadratic in eps.
"""
import math

from ddlab.geometry import Disk, box_around
from ddlab.integrals import (constant, diffuse_surface_integral, disk_volume_excess,
                             volume_error_study)
from ddlab.meshing import build_structured_mesh
from ddlab.phasefield import CUBIC, LINEAR, PhaseField

R = math.sqrt(0.5)
disk = Disk((0.0, 0.0), R)
eps_list = [0.5, 0.25, 0.125, 0.0625]

for profile in (LINEAR, CUBIC):
    study = volume_error_study(constant(1.0), profile, disk, eps_list)
    print(f"\nvolume of the disk, {profile.name} profile")
    print(study.to_csv(), end="")
    for row in study.rows:
        print(f"  eps={row.eps:<7} closed form {disk_volume_excess(profile, R, row.eps):.6e}")

# the perimeter is reproduced almost exactly for every eps
print("\ndiffuse perimeter / 2 pi R")
for eps in (0.25, 0.125):
    mesh = build_structured_mesh(box_around(disk, eps), eps * eps / 2)
    val = diffuse_surface_integral(constant(1.0), PhaseField(LINEAR, eps, disk), mesh)
    print(f"  eps={eps}: {val / (2 * math.pi * R):.8f}")
