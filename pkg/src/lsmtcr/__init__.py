"""Epitope-conditioned T cell receptor design toolkit.

Pipeline stages: a time-conditioned masked encoder for epitopes, causal
decoders for CDR3 alpha/beta generation, a two-stage model that predicts
V/J genes and assembles full-length chains, and a repertoire metric suite.
All numerics run on a small numpy reverse-mode autodiff kernel set so that
training, sampling and evaluation are deterministic on CPU.
"""

__version__ = "0.1.0"
