"""Latent width selection from the information content of a parameter set.

Treat the flattened parameters as energies of a Gibbs distribution
(p_j proportional to exp(-beta * theta_j)), take the Shannon entropy of that
distribution in bits, and scale its nearest integer by an enlargement ratio
to get the compression width. The sign convention follows the defining
equation verbatim: more negative parameters get more probability mass; the
asymmetry is intentional.

The width is computed once from the initial snapshot and then frozen for
the rest of a lifecycle run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fnn import ConfigSnapshot


@dataclass(frozen=True)
class EntropyConfig:
    beta: float = 1.0
    ratio: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.beta):
            raise ValidationError("beta must be finite")
        if self.ratio < 1:
            raise ValidationError(f"enlargement ratio must be >= 1, got {self.ratio}")


@dataclass(frozen=True)
class EntropyReport:
    """Entropy of one parameter set and the latent width derived from it."""

    n_params: int
    entropy_bits: float
    latent: int
    beta: float
    ratio: float

    def to_dict(self) -> dict:
        return {
            "n_params": self.n_params,
            "entropy_bits": self.entropy_bits,
            "latent": self.latent,
            "beta": self.beta,
            "ratio": self.ratio,
        }


def _as_flat(values) -> np.ndarray:
    if isinstance(values, ConfigSnapshot):
        flat = values.concat()
    else:
        flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValidationError("cannot compute probabilities of an empty parameter set")
    if not np.all(np.isfinite(flat)):
        raise ValidationError("parameter values must be finite")
    return flat


def gibbs_probabilities(values, beta: float = 1.0) -> np.ndarray:
    """p_j = exp(-beta * theta_j) / sum_k exp(-beta * theta_k), all layers pooled.

    Accepts a ConfigSnapshot or any array of values. The exponent is
    max-shifted before exponentiation; the shift cancels in the ratio, so
    the result is exactly shift-invariant in theta as well.
    """
    flat = _as_flat(values)
    z = -float(beta) * flat
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def config_entropy(probabilities: np.ndarray) -> float:
    """Shannon entropy in bits; zero-probability terms contribute zero."""
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValidationError("empty probability vector")
    if np.any(p < 0):
        raise ValidationError("probabilities must be non-negative")
    total = p.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"probabilities sum to {total!r}, not 1")
    nonzero = p[p > 0]
    return float(-(nonzero * np.log2(nonzero)).sum())


def latent_dim(entropy_bits: float, ratio: float = 2.0) -> int:
    """ratio times the nearest integer to the entropy; ties round half to even.

    Floored at 1 so a near-zero entropy still yields a usable width.
    """
    if entropy_bits < 0:
        raise ValidationError(f"entropy must be >= 0, got {entropy_bits}")
    nearest = int(np.rint(entropy_bits))
    return max(1, int(round(ratio * nearest)))


def entropy_report(values, cfg: EntropyConfig = EntropyConfig()) -> EntropyReport:
    flat = _as_flat(values)
    p = gibbs_probabilities(flat, cfg.beta)
    h = config_entropy(p)
    return EntropyReport(
        n_params=int(flat.size),
        entropy_bits=h,
        latent=latent_dim(h, cfg.ratio),
        beta=cfg.beta,
        ratio=cfg.ratio,
    )
