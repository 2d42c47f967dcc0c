#!/usr/bin/env python3
"""Regenerate the bundled desk-scale corpora under data/toy/.

The CDR3 pretraining corpora are deliberately low-entropy (8 distinct
sequences, 8 copies each, length ~28) so that an overfit causal LM can reach
a per-token loss below 0.1: the floor is ln(8) / ~29 tokens. Paired records
build full-length chains as V-prefix + CDR3 + J-suffix so the two-stage
assembler has a learnable, exactly checkable reconstruction target.
"""

import csv
from pathlib import Path

import numpy as np

AA = "ACDEFGHIKLMNPQRSTVWY"
OUT = Path(__file__).resolve().parent.parent / "data" / "toy"

V_BETA = {"TRBV5": "MGSRLLCW", "TRBV7": "MGTSLLCW", "TRBV19": "MSNQVLCC", "TRBV28": "MGIRLLCR"}
J_BETA = {"TRBJ1": "FGSGTRLT", "TRBJ2": "FGPGTRLL", "TRBJ3": "FGEGSRLT"}
V_ALPHA = {"TRAV1": "MWGAFLLY", "TRAV8": "MLLLLVPA", "TRAV12": "MISLRVLL", "TRAV21": "METLLGLL"}
J_ALPHA = {"TRAJ6": "FGKGTKLS", "TRAJ23": "FGTGTKLQ", "TRAJ45": "FGAGTRLS"}


def rand_seq(rng, n):
    return "".join(AA[i] for i in rng.integers(0, 20, size=n))


def main():
    rng = np.random.default_rng(20240201)
    OUT.mkdir(parents=True, exist_ok=True)

    epitopes = sorted({rand_seq(rng, int(rng.integers(8, 12))) for _ in range(60)})[:48]
    (OUT / "epitopes.txt").write_text("\n".join(epitopes) + "\n")

    def low_entropy_corpus(prefix, n_distinct=8, copies=8):
        distinct = []
        while len(distinct) < n_distinct:
            seq = prefix + rand_seq(rng, int(rng.integers(20, 27))) + "F"
            if seq not in distinct:
                distinct.append(seq)
        lines = [distinct[i % n_distinct] for i in range(n_distinct * copies)]
        return lines

    (OUT / "cdr3_beta.txt").write_text("\n".join(low_entropy_corpus("CASS")) + "\n")
    (OUT / "cdr3_alpha.txt").write_text("\n".join(low_entropy_corpus("CAVS")) + "\n")

    rows = []
    v_beta, j_beta = list(V_BETA), list(J_BETA)
    v_alpha, j_alpha = list(V_ALPHA), list(J_ALPHA)
    for i in range(16):
        cdr3_b = "CASS" + rand_seq(rng, int(rng.integers(5, 9))) + "F"
        cdr3_a = "CAVS" + rand_seq(rng, int(rng.integers(4, 8))) + "F"
        vb, jb = v_beta[i % 4], j_beta[i % 3]
        va, ja = v_alpha[(i + 1) % 4], j_alpha[(i + 2) % 3]
        rows.append({
            "epitope": epitopes[i],
            "cdr3_alpha": cdr3_a,
            "cdr3_beta": cdr3_b,
            "v_alpha": va,
            "j_alpha": ja,
            "v_beta": vb,
            "j_beta": jb,
            "full_alpha": V_ALPHA[va] + cdr3_a + J_ALPHA[ja],
            "full_beta": V_BETA[vb] + cdr3_b + J_BETA[jb],
        })
    with open(OUT / "paired.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(epitopes)} epitopes, 64+64 CDR3 lines, {len(rows)} paired records to {OUT}")


if __name__ == "__main__":
    main()
