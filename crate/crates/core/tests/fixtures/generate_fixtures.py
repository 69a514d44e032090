"""Synthetic TCR-pMHC complexes for the benchmark tests.

Writes one PDB per sample under structures/, a manifest, and expected_distances.json,
computed here with numpy over every atom pair (first model, altloc blank/A, no water).
Run from this directory: python3 generate_fixtures.py
"""

import json
import numpy as np

SAMPLES = [
    ("1OGA", "MHCI", "GILGFVFTL", "AGAGSQGNLI", "ASSSRSSYEQY"),
    ("5TEZ", "MHCI", "GILGFVFTL", "AASFIIQGAQKLV", "ASSLLGGWSEAF"),
    ("8TRQ", "MHCII", "GVYATSSAVRLR", "ALGDHSGSWQLI", "ASSLRTGANSDYT"),
    ("8TRR", "MHCII", "GVYATSSAVRLR", "ALGDTGNYKYV", "ASSAVNSGNTLY"),
    ("1AO7", "MHCI", "LLFGYPVYV", "AVTTDSWGKLQ", "ASRPGLAGGRPEQY"),
]

THREE = dict(
    A="ALA", R="ARG", N="ASN", D="ASP", C="CYS", Q="GLN", E="GLU", G="GLY", H="HIS", I="ILE",
    L="LEU", K="LYS", M="MET", F="PHE", P="PRO", S="SER", T="THR", W="TRP", Y="TYR", V="VAL",
)
AA = "ACDEFGHIKLMNPQRSTVWY"
BACKBONE = ["N", "CA", "C", "O", "CB"]


def frame(rng, n):
    # Framework filler without the letters that open/close our loops.
    return "".join(rng.choice(list("DEHKNPQRT"), n))


class Writer:
    def __init__(self):
        self.lines = []
        self.serial = 0
        self.atoms = []  # (model, chain, resindex, altloc, is_water, xyz)

    def atom(self, record, name, res, chain, seq, icode, xyz, altloc=" ", model=1, key=None, water=False):
        self.serial += 1
        xyz = np.round(np.asarray(xyz, dtype=float), 3)
        self.lines.append(
            f"{record:<6}{self.serial:>5} {name:<4}{altloc}{res:>3} {chain}{seq:>4}{icode}   "
            f"{xyz[0]:>8.3f}{xyz[1]:>8.3f}{xyz[2]:>8.3f}  1.00 20.00           {name[0]}"
        )
        self.atoms.append((model, key, altloc, water, xyz))


def residue_atoms(rng, center):
    return [center + rng.normal(0.0, 0.9, 3) for _ in BACKBONE]


def build(sample, seed):
    pdb, _, peptide, cdr3a, cdr3b = sample
    rng = np.random.default_rng(seed)
    w = Writer()
    w.lines.append(f"HEADER    SYNTHETIC TCR-PMHC COMPLEX              {pdb}")
    multi_model = pdb == "1AO7"
    if multi_model:
        w.lines.append("MODEL        1")

    chains = {
        "A": ("MHC", frame(rng, 40)),
        "C": ("PEP", peptide),
        "D": ("TRA", frame(rng, 6) + "YLC" + cdr3a + "FGKG" + frame(rng, 6)),
        "E": ("TRB", frame(rng, 6) + "YFC" + cdr3b + "FGPG" + frame(rng, 6)),
    }
    loop_start = {"D": 9, "E": 9}
    regions = {}
    for cid, (kind, seq) in chains.items():
        keys = []
        for i, aa in enumerate(seq):
            if kind == "PEP":
                center = np.array([3.8 * i, 0.0, 0.0])
            elif kind == "MHC":
                center = np.array([3.8 * (i % 20) - 5, 11.0 * (1 if i < 20 else -1), -7.0])
            else:
                side = -1.0 if cid == "D" else 1.0
                k = i - loop_start[cid]
                n_loop = len(cdr3a if cid == "D" else cdr3b)
                if 0 <= k < n_loop:
                    arch = 4.2 + 4.0 * abs(k - n_loop / 2) / (n_loop / 2)
                    center = np.array([3.0 * k + rng.normal(0, 0.6), side * (2.5 + rng.uniform(0, 3)), arch])
                else:
                    center = np.array([3.3 * i - 10, side * 9.0, 16.0 + rng.uniform(0, 4)])
            seqno = i + 1
            icode = " "
            if pdb == "5TEZ" and cid == "E" and loop_start["E"] + 5 <= i <= loop_start["E"] + 6:
                # Insertion codes inside the CDR3β loop.
                seqno = loop_start["E"] + 5
                icode = "AB"[i - loop_start["E"] - 5]
            elif pdb == "5TEZ" and cid == "E" and i > loop_start["E"] + 6:
                seqno = i - 1
            key = (cid, i)
            keys.append(key)
            modified = pdb == "8TRQ" and kind == "PEP" and aa == "R" and i == 9
            record, resname = ("HETATM", "CIR") if modified else ("ATOM", THREE[aa])
            atoms = residue_atoms(rng, center)
            if modified:
                atoms.append(center + rng.normal(0.0, 0.9, 3))
            for j, xyz in enumerate(atoms):
                name = (BACKBONE + ["NE"])[j]
                if pdb in ("1OGA", "8TRR") and j == 4 and i % 3 == 0:
                    w.atom(record, name, resname, cid, seqno, icode, xyz, altloc="A", key=key)
                    # Alternate conformer placed on top of the partner region; must be ignored.
                    w.atom(record, name, resname, cid, seqno, icode, [3.8 * 2, 0.0, 0.5], altloc="B", key=key)
                else:
                    w.atom(record, name, resname, cid, seqno, icode, xyz, key=key)
        if kind == "PEP":
            regions["epitope"] = keys
        elif kind == "TRA":
            regions["cdr3a"] = keys[loop_start["D"]:loop_start["D"] + len(cdr3a)]
        elif kind == "TRB":
            regions["cdr3b"] = keys[loop_start["E"]:loop_start["E"] + len(cdr3b)]
        w.lines.append(f"TER   {w.serial + 1:>5}")
        w.serial += 1
    # Waters hugging the peptide; ignored by the reader.
    for i in range(4):
        w.atom("HETATM", "O", "HOH", "C", 200 + i, " ", [3.8 * i + 0.5, 0.5, 3.0], key=None, water=True)
    if multi_model:
        w.lines.append("ENDMDL")
        w.lines.append("MODEL        2")
        for i in range(len(peptide)):
            w.atom("ATOM", "CA", THREE[peptide[i]], "C", i + 1, " ", [3.8 * i, 0.0, 4.0], model=2, key=None)
        w.lines.append("ENDMDL")
    w.lines.append("END")
    return w, regions


def expected(w, regions):
    kept = {}
    for model, key, altloc, water, xyz in w.atoms:
        if model != 1 or water or key is None or altloc not in (" ", "A"):
            continue
        kept.setdefault(key, []).append(xyz)

    def coords(keys):
        return [np.array(kept[k]) for k in keys]

    def mins(a_keys, b_keys):
        b = np.concatenate(coords(b_keys))
        out = []
        for a in coords(a_keys):
            d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
            out.append(float(d.min()))
        return out

    return {
        "cdr3a": mins(regions["cdr3a"], regions["epitope"]),
        "cdr3b": mins(regions["cdr3b"], regions["epitope"]),
        "epitope": mins(regions["epitope"], regions["cdr3a"] + regions["cdr3b"]),
    }


def main():
    oracle = {}
    with open("manifest.csv", "w") as m:
        m.write("pdb,mhc_class,peptide,cdr3a,cdr3b\n")
        for n, s in enumerate(SAMPLES):
            m.write(",".join(s) + "\n")
            w, regions = build(s, 1000 + n)
            with open(f"structures/{s[0]}.pdb", "w") as f:
                f.write("\n".join(w.lines) + "\n")
            oracle[s[0]] = expected(w, regions)
    with open("expected_distances.json", "w") as f:
        json.dump(oracle, f, indent=1, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
