"""The Young function behind the multiscale norms.

The chi_N = 1/N family needs one convex Phi whose dual grows slowly
enough to anchor every lattice size at once.  construct_phi builds it
from the marked-point envelope and certifies growth, anchoring, and
curvature on a shared grid; the anchoring margins below show how much
room each N has.
"""

from zrplab.orlicz import construct_phi, envelope_young_pair


def main():
    seq = [(N, 1.0 / N) for N in range(2, 33)]
    phi = construct_phi(seq, delta=1.0, p=1.5)
    meta = phi.meta
    print(f"certificates: growth {meta['cert_growth']}, "
          f"anchoring {meta['cert_anchoring']}, "
          f"curvature {meta['cert_curvature']}")
    print(f"growth sup {meta['growth_sup']:.4f} "
          f"(bound {meta['growth_bound']:.4f}), "
          f"transfer constant {meta['transfer_constant']:.4f}")

    print("\nanchoring margin rhs/lhs per lattice size (>= 1 passes):")
    for row in meta["anchoring"]:
        if row["N"] in (2, 4, 8, 16, 32):
            print(f"  N={row['N']:>3}  "
                  f"Psi^-1(N) = {row['lhs']:8.3f}  "
                  f"chi^-1/2 = {row['rhs']:8.3f}  "
                  f"margin {row['rhs'] / row['lhs']:.3f}")

    # the rebuilt table is piecewise linear, so its numeric dual is only
    # interesting near the anchoring points; the raw envelope pair keeps
    # the strict quadratic tail and is the one to tabulate
    env_phi, env_psi = envelope_young_pair(seq, delta=1.0, d=1)
    print("\nenvelope pair behind the construction:")
    for u in (1.0, 2.0, 5.0, 10.0):
        print(f"  Phi({u:4.1f}) = {env_phi(u):10.4f}   "
              f"Psi({u:4.1f}) = {env_psi(u):10.4f}")


if __name__ == "__main__":
    main()
