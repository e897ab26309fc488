"""Per-sample discrepancy weights and the losses they re-weight.

Every loss returns its value together with the gradient with respect to its
direct inputs; the training steps chain those through :func:`mlp_backward`.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class DiscrepancyWeights:
    values: np.ndarray
    measure: str
    zero_norm: int = 0

    @property
    def total(self) -> float:
        return float(self.values.sum())


def uniform_weights(n) -> DiscrepancyWeights:
    return DiscrepancyWeights(np.ones(n), "uniform")


def _pair(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ConfigurationError(f"action batches differ in shape: {a.shape} vs {b.shape}")
    return a, b


def kappa_cosine(actions, teacher_actions) -> DiscrepancyWeights:
    """``1 + cos(a, a_hat)`` per row, in ``[0, 2]``.

    Rows where either vector has zero norm get the neutral weight 1; their
    number is reported in ``zero_norm``.
    """
    a, b = _pair(actions, teacher_actions)
    # rescale rows by their largest entry so the products below cannot under- or overflow
    ma = np.max(np.abs(a), axis=1, keepdims=True)
    mb = np.max(np.abs(b), axis=1, keepdims=True)
    zero = (ma[:, 0] == 0.0) | (mb[:, 0] == 0.0)
    a = np.divide(a, ma, out=np.zeros_like(a), where=ma > 0)
    b = np.divide(b, mb, out=np.zeros_like(b), where=mb > 0)
    dot = np.einsum("ij,ij->i", a, b)
    sq = np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", b, b)
    cos = np.divide(dot, np.sqrt(sq), out=np.zeros_like(dot), where=~zero)
    kappa = np.clip(1.0 + cos, 0.0, 2.0)
    n_zero = int(zero.sum())
    if n_zero:
        log.debug("kappa_cosine: %d zero-norm action rows given neutral weight", n_zero)
    return DiscrepancyWeights(kappa, "cos", n_zero)


def gaussian_kl(mu_p, std_p, mu_q, std_q):
    """KL(N(mu_p, std_p^2) || N(mu_q, std_q^2)) summed over the last axis."""
    vp, vq = std_p**2, std_q**2
    return np.sum(np.log(std_q / std_p) + (vp + (mu_p - mu_q) ** 2) / (2.0 * vq) - 0.5, axis=-1)


def kappa_variant(measure: str, actions, teacher_actions, fixed_std: float = 0.2) -> DiscrepancyWeights:
    """Divergence-based weights ``2 * exp(-d)`` in ``(0, 2]``.

    ``kl1``: per-sample Gaussians centred on ``a`` and ``a_hat`` whose
    per-dimension stds are the empirical batch stds of each action batch;
    ``d = KL(dataset || teacher)``.
    ``kl2``: the same with both stds fixed to ``fixed_std``.
    ``js``: Jensen-Shannon analogue with the batch stds, measuring each
    Gaussian against the moment-matched midpoint Gaussian.
    """
    a, b = _pair(actions, teacher_actions)
    if measure == "kl2":
        s = np.full(a.shape[1], float(fixed_std))
        d = gaussian_kl(a, s, b, s)
    elif measure in ("kl1", "js"):
        if a.shape[0] < 2:
            raise ConfigurationError(f"{measure} needs a batch of at least 2")
        sa = np.maximum(a.std(axis=0), STD_FLOOR)
        sb = np.maximum(b.std(axis=0), STD_FLOOR)
        if measure == "kl1":
            d = gaussian_kl(a, sa, b, sb)
        else:
            mid = 0.5 * (a + b)
            smid = np.sqrt(0.5 * (sa**2 + sb**2))
            d = 0.5 * gaussian_kl(a, sa, mid, smid) + 0.5 * gaussian_kl(b, sb, mid, smid)
    else:
        raise ConfigurationError(f"unknown divergence measure {measure!r}")
    return DiscrepancyWeights(2.0 * np.exp(-np.maximum(d, 0.0)), measure)


def discrepancy(measure: str, actions, teacher_actions, fixed_std: float = 0.2) -> DiscrepancyWeights:
    if measure == "cos":
        return kappa_cosine(actions, teacher_actions)
    if measure == "uniform":
        return uniform_weights(np.atleast_2d(actions).shape[0])
    return kappa_variant(measure, actions, teacher_actions, fixed_std)


def _normalised(weights):
    w = weights.values if isinstance(weights, DiscrepancyWeights) else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if not total > 0.0:
        warnings.warn("discrepancy weights sum to zero; batch skipped", RuntimeWarning, stacklevel=3)
        return None
    return w / total


def weighted_critic_loss(td_sq, weights):
    """``sum(k * delta^2) / sum(k)``.

    Returns ``(loss, scale)`` where ``scale = k / sum(k)`` is each sample's
    share of the gradient, or ``(0.0, None)`` when the weights sum to zero.
    """
    td_sq = np.asarray(td_sq, dtype=np.float64)
    scale = _normalised(weights)
    if scale is None:
        return 0.0, None
    return float(scale @ td_sq), scale


def weighted_actor_loss(objective, weights):
    """``-sum(k * objective) / sum(k)`` for a per-sample objective to maximise."""
    objective = np.asarray(objective, dtype=np.float64)
    scale = _normalised(weights)
    if scale is None:
        return 0.0, None
    return float(-(scale @ objective)), scale


def expectile_loss(diff, tau):
    """Mean of ``|tau - 1[diff < 0]| * diff^2`` and its gradient in ``diff``."""
    diff = np.asarray(diff, dtype=np.float64)
    w = np.where(diff < 0.0, 1.0 - tau, tau)
    n = diff.size
    return float(np.mean(w * diff * diff)), 2.0 * w * diff / n


def mse_loss(pred, target):
    """Mean over all elements of ``(pred - target)^2`` and its gradient in ``pred``."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
