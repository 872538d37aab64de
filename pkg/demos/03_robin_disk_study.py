"""Convergence of the diffuse Robin problem on a disk.

u = sin(pi x) cos(pi y) solves -lap u + u = f in D with du/dn + u = g on the
boundary. The data are known on the closed disk only and extended constantly
along normals, so the diffuse solution differs from u by a modelling error
that shrinks with eps.
"""
from ddlab.harness import CaseConfig, results_csv, run_case

config = CaseConfig.from_dict({"case": {"id": "A", "eps": [0.5, 0.25, 0.125]}})
result = run_case(config)
print(results_csv(result), end="")

for norm in ("L2_D", "W12_D", "W11_D", "W1inf_D"):
    rates = ", ".join(f"{r:.2f}" for r in result.eoc(norm))
    print(f"{norm:8s} EOC {rates}   expected about {result.expected[''][norm]}")

# a smooth extension of the same closed forms makes u an exact diffuse solution;
# then only the finite element error is left and the rates are much higher
smooth = run_case(config.override("case", "extension", "smooth"))
print("smooth extension, L2 EOC:", [round(r, 2) for r in smooth.eoc("L2_D")])
