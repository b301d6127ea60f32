"""Training-objective terms as pure functions.

Seven weighted terms form the total objective: reconstruction (re),
foreground/background (f), sampled tri-plane features (tri), depth, opacity,
identity (id), and adversarial (adv).  Default balancing weights are
(1, 1, 0.1, 1, 0.3, 1, 0.01) in that order.

The perceptual part of the reconstruction term and the id/adv terms need
pretrained networks, so they are pluggable hooks: pass a callable to include
them, otherwise they contribute exactly zero and the objective keeps its
shape.  Hook terms may be negative (id is a negative cosine similarity in
full trainings); every built-in term is a mean-absolute-difference and
therefore non-negative.

``loss_part`` is the part-region density regularization: the plain sum of
head-branch densities over samples whose pixel projection lands inside the
rasterized part mask (samples projecting off-image never count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ValidationError

LOSS_TERMS = ("re", "f", "tri", "depth", "opa", "id", "adv")
HOOK_TERMS = ("id", "adv")


@dataclass(frozen=True)
class LossWeights:
    """Non-negative balancing weights, one per objective term."""

    w_re: float = 1.0
    w_f: float = 1.0
    w_tri: float = 0.1
    w_depth: float = 1.0
    w_opa: float = 0.3
    w_id: float = 1.0
    w_adv: float = 0.01

    def __post_init__(self):
        for name in LOSS_TERMS:
            v = float(getattr(self, f"w_{name}"))
            if not np.isfinite(v) or v < 0.0:
                raise ValidationError(f"weight w_{name} must be finite and >= 0")
            object.__setattr__(self, f"w_{name}", v)

    def for_term(self, name: str) -> float:
        return getattr(self, f"w_{name}")


@dataclass(frozen=True)
class LossReport:
    """Per-term values plus their weighted total."""

    terms: dict
    weights: LossWeights
    total: float

    def to_text(self) -> str:
        lines = [f"term.{k} {self.terms[k]!r}" for k in LOSS_TERMS]
        lines.append(f"total {self.total!r}")
        return "\n".join(lines) + "\n"


def _pair(a, b, op: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def l1(a, b) -> float:
    """Mean absolute difference over all elements."""
    a, b = _pair(a, b, "l1")
    return float(np.mean(np.abs(a - b)))


def masked_l1(a, b, mask) -> float:
    """Mean absolute difference over pixels where mask > 0 (0 if mask empty).

    mask has the leading (H, W) shape of a/b; trailing channel axes of a/b are
    averaged within each selected pixel.
    """
    a, b = _pair(a, b, "masked_l1")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != a.shape[:m.ndim]:
        raise ContractViolation("masked_l1: mask does not match leading shape")
    sel = m > 0
    if not sel.any():
        return 0.0
    return float(np.mean(np.abs(a[sel] - b[sel])))


def loss_re(rendered, target, perceptual=None) -> float:
    """Reconstruction term: L1 plus an optional perceptual hook."""
    base = l1(rendered, target)
    if perceptual is not None:
        base += float(perceptual(rendered, target))
    return base


def loss_tri(sampled: np.ndarray, recorded: np.ndarray) -> float:
    """Mean absolute difference between per-point feature rows."""
    sampled, recorded = _pair(sampled, recorded, "loss_tri")
    if sampled.ndim != 2:
        raise ContractViolation("loss_tri expects (points, channels) arrays")
    return float(np.mean(np.abs(sampled - recorded)))


def loss_part(densities, projections, m_p) -> float:
    """Sum of densities whose projected pixel lies inside the part mask.

    projections are continuous (row, col) pixel coordinates; each sample is
    attributed to the pixel containing it (floor).  Samples projecting outside
    the image contribute nothing.
    """
    sigma = np.asarray(densities, dtype=np.float64).reshape(-1)
    proj = np.asarray(projections, dtype=np.float64).reshape(-1, 2)
    if len(sigma) != len(proj):
        raise ContractViolation("loss_part: densities/projections length mismatch")
    mask = np.asarray(getattr(m_p, "m_p", m_p))
    rows = np.floor(proj[:, 0]).astype(np.int64)
    cols = np.floor(proj[:, 1]).astype(np.int64)
    h, w = mask.shape
    on_image = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    hit = np.zeros(len(sigma), dtype=bool)
    hit[on_image] = mask[rows[on_image], cols[on_image]] > 0
    return float(sigma[hit].sum())


def total_loss(terms, weights: LossWeights = LossWeights()) -> LossReport:
    """Weighted sum of the named terms; absent hook terms default to zero."""
    terms = dict(terms)
    unknown = set(terms) - set(LOSS_TERMS)
    if unknown:
        raise ContractViolation(f"unknown loss terms {sorted(unknown)}")
    missing = set(LOSS_TERMS) - set(HOOK_TERMS) - set(terms)
    if missing:
        raise ContractViolation(f"missing loss terms {sorted(missing)}")
    values = {name: float(terms.get(name, 0.0)) for name in LOSS_TERMS}
    total = sum(weights.for_term(name) * values[name] for name in LOSS_TERMS)
    return LossReport(values, weights, float(total))
