"""Single-pass routing, step by step.

Starts from raw prediction votes and walks through normalization, the
factorized pairwise interaction (checked against the brute-force pair sum),
pose extraction, and both activation variants.
"""

import numpy as np

from capsnet import Tensor, route, squash
from capsnet.routing import (agreement, fm_interaction,
                             fm_interaction_reference, interaction_pose,
                             l2_normalize)


def main():
    rng = np.random.default_rng(7)
    J, n, k = 3, 5, 8  # output capsules, input capsules, pose dim
    u_hat = rng.standard_normal((J, n, k))
    # make capsule 1 the "right answer": give its votes a common direction
    u_hat[1] = 0.2 * rng.standard_normal((n, k)) + rng.standard_normal(k)

    print("votes:", u_hat.shape, "(J, n, k)")

    u_norm = l2_normalize(Tensor(u_hat))
    print("after L2 norm, vote norms all 1:",
          bool(np.allclose(np.linalg.norm(u_norm.data, axis=-1), 1.0)))

    inter = fm_interaction(u_norm)
    brute = fm_interaction_reference(u_norm.data)
    print("factorized vs pairwise-loop oracle, max |diff|:",
          float(np.max(np.abs(inter.data - brute))))

    poses = interaction_pose(inter)
    print("pose norms:", np.linalg.norm(poses.data, axis=-1))

    b = agreement(inter)
    print("agreement scores:", b.data, " (capsule 1 should dominate)")

    for variant in ("modified", "original"):
        res = route(u_hat, variant)
        a = res.activations.data
        print(f"[{variant:8s}] activations = {np.array2string(a, precision=4)}"
              f"  sum = {a.sum():.6f}  argmax = {int(a.argmax())}")

    print("\nsquash on growing norms (saturates below 1):")
    for scale in (0.1, 1.0, 5.0, 50.0):
        v = squash(Tensor(np.full((1, 4), scale)))
        print(f"  |s| = {scale * 2.0:7.2f}  ->  |v| = {float(np.linalg.norm(v.data)):.5f}")


if __name__ == "__main__":
    main()
