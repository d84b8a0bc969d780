"""Regenerate src/cvquad/data/k_norms.txt.

Each line is ``knorm_q{q}_d{d}=||K||_{L^q([-1/2,1/2]^d)}`` at 17 significant
digits, computed once by adaptive quadrature at absolute tolerance 1e-10 on
the q-th power.

    python scripts/generate_k_norms.py > src/cvquad/data/k_norms.txt
"""

import numpy as np

from cvquad.quadrature import integrate_box
from cvquad.testfn import bump_k


def main():
    print("# ||K||_{L^q([-1/2,1/2]^d)}, K(x) = K0(2x); generated by scripts/generate_k_norms.py")
    for d in (1, 2):
        for q in range(1, 7):
            power = integrate_box(lambda x, q=q: bump_k(x) ** q, np.full(d, -0.5), np.full(d, 0.5), tol=1e-10)
            print(f"knorm_q{q}_d{d}={power ** (1.0 / q):.17g}")


if __name__ == "__main__":
    main()
