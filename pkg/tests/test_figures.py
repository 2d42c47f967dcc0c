from lsmtcr.figures import (
    diversity_figure,
    length_histogram_figure,
    similarity_figure,
    training_curve_figure,
)
from lsmtcr.metrics import DiversityReport, SimilarityReport


def _reports():
    a = DiversityReport("tau=0.5", 0.4, 0.2, 0.1, 0.9, 0.95, 0.5, 0.8, 0.3)
    b = DiversityReport("tau=1.5", 0.3, 0.9, 0.8, 1.1, 1.02, 0.7, 0.6, 0.7)
    return [a, b]


def test_diversity_figure_bytes_stable(tmp_path):
    p1 = diversity_figure(_reports(), tmp_path / "a.png")
    p2 = diversity_figure(_reports(), tmp_path / "b.png")
    assert p1.exists() and p1.stat().st_size > 0
    assert p1.read_bytes() == p2.read_bytes()


def test_diversity_figure_handles_nan_composite(tmp_path):
    rep = DiversityReport("only", 0.4, 0.2, 0.1, float("nan"), 0.95, 0.5, 0.8)
    p = diversity_figure([rep], tmp_path / "nan.png")
    assert p.exists()


def test_similarity_figure(tmp_path):
    rep = SimilarityReport(0.8, 0.05, 0.07, 0.9)
    p = similarity_figure(rep, {"jsd2": 0.02, "jsd3": 0.05}, tmp_path / "sim.png")
    assert p.exists() and p.stat().st_size > 0


def test_training_curve(tmp_path):
    log = [(i, 3.0 / (1 + i), 1e-3 * min(i / 10, 1.0)) for i in range(1, 60)]
    p = training_curve_figure(log, tmp_path / "curve.png")
    assert p.exists() and p.stat().st_size > 0


def test_length_histogram(tmp_path):
    lengths = {"tau=0.5": [10, 11, 12, 12], "tau=1.5": [8, 14, 15, 9]}
    p = length_histogram_figure(lengths, [11, 12, 13, 12, 11], tmp_path / "len.png")
    assert p.exists() and p.stat().st_size > 0
