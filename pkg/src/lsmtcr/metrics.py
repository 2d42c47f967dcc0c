"""Repertoire evaluation metrics.

Diversity battery (per generated repertoire vs a reference): 2-mer Jaccard,
diversity ratio, novel ratio, relative Shannon and Simpson indices, amino-acid
compositional diversity, and a length realism score, plus a composite that
min-max normalizes the seven values across compared conditions. Similarity
battery (aligned generated/reference pairs): exact match, normalized Hamming
and Levenshtein, 3-mer set Jaccard, and Jensen-Shannon divergence between
k-mer spectra. All logarithms natural; 0 * ln 0 counts as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

LN20 = math.log(20.0)


# -- k-mer machinery ----------------------------------------------------------


def kmer_set(seqs: list[str], k: int) -> set:
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    out = set()
    for s in seqs:
        for i in range(len(s) - k + 1):
            out.add(s[i:i + k])
    if not out:
        raise DataError(f"no sequence of length >= {k}")
    return out


@dataclass
class KmerSpectrum:
    k: int
    freqs: dict[str, float]


def kmer_spectrum(seqs: list[str], k: int) -> KmerSpectrum:
    """Pooled k-mer counts normalized to probabilities."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    counts: dict[str, int] = {}
    total = 0
    for s in seqs:
        for i in range(len(s) - k + 1):
            counts[s[i:i + k]] = counts.get(s[i:i + k], 0) + 1
            total += 1
    if total == 0:
        raise DataError(f"no sequence of length >= {k}")
    return KmerSpectrum(k=k, freqs={key: c / total for key, c in counts.items()})


def jaccard(set_a: set, set_b: set) -> float:
    if not set_a and not set_b:
        raise DataError("jaccard of two empty sets is undefined")
    return len(set_a & set_b) / len(set_a | set_b)


def js_divergence(spec_a: KmerSpectrum, spec_b: KmerSpectrum) -> float:
    """Symmetric Jensen-Shannon divergence (natural log), in [0, ln 2]."""
    if spec_a.k != spec_b.k:
        raise DataError(f"spectrum k mismatch: {spec_a.k} vs {spec_b.k}")
    support = set(spec_a.freqs) | set(spec_b.freqs)
    jsd = 0.0
    for key in support:
        p = spec_a.freqs.get(key, 0.0)
        q = spec_b.freqs.get(key, 0.0)
        m = 0.5 * (p + q)
        if p > 0:
            jsd += 0.5 * p * math.log(p / m)
        if q > 0:
            jsd += 0.5 * q * math.log(q / m)
    return jsd


# -- diversity battery ---------------------------------------------------------


def diversity_ratio(rep: list[str]) -> float:
    if not rep:
        raise DataError("empty repertoire")
    return len(set(rep)) / len(rep)


def novel_ratio(rep: list[str], reference: set) -> float:
    if not rep:
        raise DataError("empty repertoire")
    unique = set(rep)
    return len(unique - reference) / len(unique)


def _frequencies(rep: list[str]) -> np.ndarray:
    if not rep:
        raise DataError("empty repertoire")
    _, counts = np.unique(np.array(rep, dtype=object), return_counts=True)
    return counts / counts.sum()


def shannon(rep: list[str]) -> float:
    p = _frequencies(rep)
    return float(-(p * np.log(p)).sum())


def simpson(rep: list[str]) -> float:
    """Gini-Simpson form: 1 - sum(p_i^2)."""
    p = _frequencies(rep)
    return float(1.0 - (p * p).sum())


def subsample(reference: list[str], size: int, seed: int) -> list[str]:
    """Seeded subsample to a target size (with replacement only if necessary)."""
    rng = np.random.default_rng(seed)
    replace = size > len(reference)
    idx = rng.choice(len(reference), size=size, replace=replace)
    return [reference[i] for i in idx]


def relative_metric(metric, rep: list[str], reference: list[str], seed: int) -> float:
    """metric(rep) / metric(subsampled reference); NaN when the reference value is 0."""
    ref_value = metric(subsample(reference, len(rep), seed))
    if ref_value == 0.0:
        return float("nan")
    return metric(rep) / ref_value


def aa_div(rep: list[str]) -> float:
    """Entropy of pooled residue frequencies, normalized by ln 20."""
    if not rep:
        raise DataError("empty repertoire")
    pooled = "".join(rep)
    if not pooled:
        raise DataError("repertoire contains only empty strings")
    _, counts = np.unique(list(pooled), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() / LN20)


def length_realism(rep: list[str], reference: list[str]) -> float:
    """exp(-|mean_gen - mean_ref| / std_ref), a bounded higher-is-better score."""
    if not rep or not reference:
        raise DataError("empty repertoire or reference")
    mu_gen = float(np.mean([len(s) for s in rep]))
    lens_ref = np.array([len(s) for s in reference], dtype=np.float64)
    mu_ref = float(lens_ref.mean())
    sigma_ref = float(lens_ref.std())
    if sigma_ref == 0.0:
        return 1.0 if mu_gen == mu_ref else 0.0
    return math.exp(-abs(mu_gen - mu_ref) / sigma_ref)


DIVERSITY_FIELDS = ["jaccard2", "diversity_ratio", "novel_ratio", "shannon_rel",
                    "simpson_rel", "aa_div", "length_realism"]


@dataclass
class DiversityReport:
    condition: str
    jaccard2: float
    diversity_ratio: float
    novel_ratio: float
    shannon_rel: float
    simpson_rel: float
    aa_div: float
    length_realism: float
    composite: float = float("nan")

    def values(self) -> list[float]:
        return [getattr(self, f) for f in DIVERSITY_FIELDS]


def diversity_report(condition: str, rep: list[str], reference: list[str],
                     seed: int = 0) -> DiversityReport:
    """All seven diversity metrics for one repertoire against a reference."""
    ref_set = set(reference)
    return DiversityReport(
        condition=condition,
        jaccard2=jaccard(kmer_set(rep, 2), kmer_set(reference, 2)),
        diversity_ratio=diversity_ratio(rep),
        novel_ratio=novel_ratio(rep, ref_set),
        shannon_rel=relative_metric(shannon, rep, reference, seed),
        simpson_rel=relative_metric(simpson, rep, reference, seed),
        aa_div=aa_div(rep),
        length_realism=length_realism(rep, reference),
    )


def composite_score(reports: list[DiversityReport]) -> list[DiversityReport]:
    """Min-max normalize each metric across conditions, then average the seven.

    A metric constant across conditions contributes 0.5 for every condition.
    Fills the composite field in place and returns the reports.
    """
    if len(reports) < 2:
        raise DataError("composite score needs at least 2 conditions to normalize across")
    matrix = np.array([r.values() for r in reports], dtype=np.float64)
    lo = matrix.min(axis=0)
    hi = matrix.max(axis=0)
    span = hi - lo
    normed = np.where(span == 0.0, 0.5, (matrix - lo) / np.where(span == 0.0, 1.0, span))
    for row, report in zip(normed, reports):
        report.composite = float(row.mean())
    return reports


# -- similarity battery ---------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance, iterative two-row dynamic program."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def norm_levenshtein(a: str, b: str) -> float:
    if not a and not b:
        return 0.0
    return levenshtein(a, b) / max(len(a), len(b))


def norm_hamming(a: str, b: str) -> float:
    """Mismatches over the overlap plus the length gap, divided by the longer length."""
    if not a and not b:
        return 0.0
    overlap = min(len(a), len(b))
    mismatches = sum(1 for x, y in zip(a[:overlap], b[:overlap]) if x != y)
    return (mismatches + abs(len(a) - len(b))) / max(len(a), len(b))


def exact_match_rate(pairs: list[tuple[str, str]]) -> float:
    if not pairs:
        raise DataError("no pairs to score")
    return sum(1 for a, b in pairs if a == b) / len(pairs)


@dataclass
class SimilarityReport:
    exact_match_rate: float
    mean_norm_hamming: float
    mean_norm_levenshtein: float
    jaccard3: float


def similarity_report(pairs: list[tuple[str, str]]) -> SimilarityReport:
    """Aligned (generated, reference) comparison: edit metrics plus 3-mer overlap."""
    if not pairs:
        raise DataError("no pairs to score")
    gen = [a for a, _ in pairs]
    ref = [b for _, b in pairs]
    return SimilarityReport(
        exact_match_rate=exact_match_rate(pairs),
        mean_norm_hamming=float(np.mean([norm_hamming(a, b) for a, b in pairs])),
        mean_norm_levenshtein=float(np.mean([norm_levenshtein(a, b) for a, b in pairs])),
        jaccard3=jaccard(kmer_set(gen, 3), kmer_set(ref, 3)),
    )
