"""Loss, exact gradients through the complex pipeline, AdamW, and the
search / fixed-architecture training drivers.

Gradients are exact chain-rule derivatives of the batch loss with respect to
every trainable real parameter, obtained by reverse-mode differentiation
through the dense complex forward pass; the finite-difference helper is the
independent check. All randomness flows from one seed through named
SeedSequence streams (init / shuffle / dropout / retrain), split per epoch
and batch, so runs are reproducible bit-for-bit at a fixed thread count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .circuits import CandidateDescriptor, N_CANDIDATES
from .data import FeatureDataset, MetricsReport, compute_metrics
from .head import HeadConfig, HeadParams, forward_fixed, init_head_params
from .linalg import NormCollapse
from .search import (
    EXCLUDED_LOGIT,
    SearchState,
    StructuralWeights,
    discretize,
    ensemble_forward,
    init_structural_weights,
    warmup_weights,
)

log = logging.getLogger("qdas")

# SeedSequence stream tags.
_INIT, _SHUFFLE, _DROPOUT, _RETRAIN = 1, 2, 3, 4


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 5e-5
    weight_decay: float = 1e-2
    epochs: int = 50
    warmup_epochs: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: str = "float64"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision}")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32


def stream_rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean -log softmax(logits)[label], computed with max-subtraction."""
    z = logits - logits.max(dim=-1, keepdim=True).values
    log_probs = z - torch.log(torch.exp(z).sum(dim=-1, keepdim=True))
    picked = log_probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    return -picked.mean()


# ---------------------------------------------------------------------------
# Canonical parameter registry
# ---------------------------------------------------------------------------

@dataclass
class ParamGroup:
    name: str
    tensor: torch.Tensor
    decay: bool


def named_parameter_groups(params: HeadParams,
                           sw: StructuralWeights | None = None) -> list[ParamGroup]:
    """Canonical flattening order: projection, LCU, polynomial coefficients,
    feed-forward angle sets, classifier, then structural logits. Weight decay
    skips biases and structural logits."""
    groups = [
        ParamGroup("projection.w", params.proj_w, True),
        ParamGroup("projection.b", params.proj_b, False),
        ParamGroup("lcu.attn_logits", params.attn_logits, True),
        ParamGroup("lcu.phases", params.phases, True),
        ParamGroup("qsvt.coeffs", params.qsvt_coeffs, True),
    ]
    groups += [ParamGroup(f"qff.{i}", t, True) for i, t in enumerate(params.qff_angles)]
    groups += [
        ParamGroup("classifier.w", params.cls_w, True),
        ParamGroup("classifier.b", params.cls_b, False),
    ]
    if sw is not None:
        groups += [
            ParamGroup("structural.ts_logits", sw.ts_logits, False),
            ParamGroup("structural.qff_logits", sw.qff_logits, False),
        ]
    return groups


def flatten_groups(groups: Sequence[ParamGroup]) -> np.ndarray:
    return np.concatenate([g.tensor.detach().numpy().astype(np.float64).ravel()
                           for g in groups])


def write_back(groups: Sequence[ParamGroup], flat: np.ndarray) -> None:
    with torch.no_grad():
        off = 0
        for g in groups:
            n = g.tensor.numel()
            chunk = torch.as_tensor(flat[off:off + n], dtype=g.tensor.dtype)
            g.tensor.copy_(chunk.reshape(g.tensor.shape))
            off += n


def decay_mask(groups: Sequence[ParamGroup]) -> np.ndarray:
    return np.concatenate([np.full(g.tensor.numel(), g.decay, dtype=bool) for g in groups])


def group_slices(groups: Sequence[ParamGroup]) -> dict[str, slice]:
    out, off = {}, 0
    for g in groups:
        out[g.name] = slice(off, off + g.tensor.numel())
        off += g.tensor.numel()
    return out


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def batch_loss(features: torch.Tensor, labels: torch.Tensor, params: HeadParams,
               cfg: HeadConfig, sw: StructuralWeights | None = None,
               arch: tuple[CandidateDescriptor, CandidateDescriptor] | None = None,
               dropout_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean cross-entropy of the ensemble (sw given) or the fixed path (arch given)."""
    if (sw is None) == (arch is None):
        raise ValueError("pass exactly one of sw (ensemble) or arch (fixed)")
    if sw is not None:
        logits = ensemble_forward(features, sw, params, cfg, dropout_mask)
    else:
        logits = forward_fixed(features, arch, params, cfg, dropout_mask)
    return cross_entropy(logits, labels)


def backward(features: torch.Tensor, labels: torch.Tensor, params: HeadParams,
             cfg: HeadConfig, sw: StructuralWeights | None = None,
             arch: tuple[CandidateDescriptor, CandidateDescriptor] | None = None,
             dropout_mask: torch.Tensor | None = None) -> tuple[float, np.ndarray]:
    """Exact gradient of the mean batch loss for every trainable parameter.

    Returns (loss, flat gradient) in the canonical registry order. Groups the
    loss does not reach (e.g. structural logits while frozen) report zeros.
    Aborts with a diagnostic naming the parameter group on NaN/Inf.
    """
    groups = named_parameter_groups(params, sw)
    tensors = [g.tensor for g in groups]
    for t in tensors:
        t.requires_grad_(True)
    loss = batch_loss(features, labels, params, cfg, sw=sw, arch=arch,
                      dropout_mask=dropout_mask)
    if not bool(torch.isfinite(loss)):
        raise RuntimeError("non-finite training loss")
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    flat_parts = []
    for g, grad in zip(groups, grads):
        if grad is None:
            grad = torch.zeros_like(g.tensor)
        if not bool(torch.isfinite(grad).all()):
            raise RuntimeError(f"non-finite gradient in parameter group '{g.name}'")
        flat_parts.append(grad.detach().numpy().astype(np.float64).ravel())
    return float(loss.detach()), np.concatenate(flat_parts)


def finite_difference_gradient(loss_fn: Callable[[np.ndarray], float], flat: np.ndarray,
                               coords: Sequence[int], h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss at selected coordinates."""
    out = np.empty(len(coords))
    for i, c in enumerate(coords):
        bumped = flat.copy()
        bumped[c] = flat[c] + h
        up = loss_fn(bumped)
        bumped[c] = flat[c] - h
        down = loss_fn(bumped)
        out[i] = (up - down) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# AdamW (decoupled weight decay)
# ---------------------------------------------------------------------------

@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamWState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adamw_step(flat: np.ndarray, grads: np.ndarray, state: AdamWState, cfg: TrainConfig,
               mask: np.ndarray) -> tuple[np.ndarray, AdamWState]:
    """One bias-corrected AdamW step; decay applies only where `mask` is True
    (everything except biases and structural logits)."""
    if flat.shape != grads.shape or flat.shape != state.m.shape:
        raise ValueError("parameter / gradient / state length mismatch")
    t = state.step + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads ** 2
    m_hat = m / (1 - cfg.beta1 ** t)
    v_hat = v / (1 - cfg.beta2 ** t)
    new = flat - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    new = new - cfg.learning_rate * cfg.weight_decay * (flat * mask)
    return new, AdamWState(m, v, t)


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------

def _dropout_mask(rng: np.random.Generator, shape, rate: float,
                  dtype: torch.dtype) -> torch.Tensor | None:
    if rate <= 0:
        return None
    mask = (rng.random(shape) >= rate) / (1.0 - rate)
    return torch.as_tensor(mask, dtype=dtype)


def predict(forward_fn: Callable[[torch.Tensor], torch.Tensor], features: np.ndarray,
            dtype: torch.dtype, batch_size: int = 64) -> np.ndarray:
    """Deterministic class predictions (evaluation mode, no dropout)."""
    preds = []
    with torch.no_grad():
        for start in range(0, len(features), batch_size):
            batch = torch.as_tensor(features[start:start + batch_size], dtype=dtype)
            logits = forward_fn(batch)
            preds.append(logits.argmax(dim=-1).numpy())
    return np.concatenate(preds)


def evaluate_splits(forward_fn, dataset: FeatureDataset, dtype: torch.dtype
                    ) -> dict[str, MetricsReport]:
    out = {}
    for name in ("train", "val", "test"):
        feats, labels = dataset.split(name)
        if len(labels) == 0:
            raise ValueError(f"split '{name}' is empty")
        preds = predict(forward_fn, feats, dtype)
        out[name] = compute_metrics(preds, labels, dataset.n_classes)
    return out


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

@dataclass
class FixedRunResult:
    params: HeadParams
    metrics: dict[str, MetricsReport]
    loss_history: list[float]


@dataclass
class SearchResult:
    architecture: tuple[CandidateDescriptor, CandidateDescriptor]
    state: SearchState
    loss_history: list[float]
    val_accuracy_history: list[float]
    ensemble_val_metrics: MetricsReport
    retrained: FixedRunResult


def _epoch_batches(n_train: int, cfg: TrainConfig, epoch: int):
    order = stream_rng(cfg.seed, _SHUFFLE, epoch).permutation(n_train)
    for start in range(0, n_train, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def _train_epochs(dataset: FeatureDataset, params: HeadParams, head_cfg: HeadConfig,
                  cfg: TrainConfig, arch: tuple | None = None,
                  state: SearchState | None = None,
                  epoch_callback: Callable[[int], None] | None = None) -> list[float]:
    """Shared epoch loop; returns the mean train loss per epoch.

    With `state` set this trains the search ensemble: the warmup schedule
    freezes the structural mixture at uniform, and a candidate whose
    polynomial collapses the state is excluded by logit (only possible once
    the mixture is trainable; a collapse under frozen uniform weights is a
    configuration error and propagates). With `arch` set it trains the fixed
    path instead.
    """
    sw = state.sw if state is not None else None
    groups = named_parameter_groups(params, sw)
    flat = flatten_groups(groups)
    mask = decay_mask(groups)
    opt = AdamWState.zeros(flat.size)
    feats_all, labels_all = dataset.split("train")
    dtype = cfg.dtype
    losses = []
    for epoch in range(cfg.epochs):
        if state is not None:
            sw = warmup_weights(epoch, cfg.warmup_epochs, sw)
            state.sw = sw
        epoch_loss, n_batches = 0.0, 0
        for b_i, batch_idx in enumerate(_epoch_batches(len(labels_all), cfg, epoch)):
            xb = torch.as_tensor(feats_all[batch_idx], dtype=dtype)
            yb = torch.as_tensor(labels_all[batch_idx], dtype=torch.long)
            mask_rng = stream_rng(cfg.seed, _DROPOUT, epoch, b_i)
            dmask = _dropout_mask(mask_rng, xb.shape, head_cfg.dropout_rate, dtype)
            for _attempt in range(N_CANDIDATES + 1):
                try:
                    loss, grads = backward(xb, yb, params, head_cfg, sw=sw, arch=arch,
                                           dropout_mask=dmask)
                    break
                except NormCollapse as exc:
                    if sw is None or exc.candidate_index is None or sw.frozen:
                        raise
                    log.warning("excluding %s candidate %d after norm collapse",
                                exc.block, exc.candidate_index)
                    with torch.no_grad():
                        sw.ts_logits[exc.candidate_index] = EXCLUDED_LOGIT
            else:
                raise RuntimeError("all candidates excluded by norm collapse")
            flat, opt = adamw_step(flat, grads, opt, cfg, mask)
            write_back(groups, flat)
            epoch_loss += loss
            n_batches += 1
        losses.append(epoch_loss / max(n_batches, 1))
        if state is not None:
            state.epoch = epoch
            state.log_snapshot()
        if epoch_callback is not None:
            epoch_callback(epoch)
        log.info("epoch %d: train loss %.4f", epoch, losses[-1])
    return losses


def run_fixed(dataset: FeatureDataset, arch: tuple[CandidateDescriptor, CandidateDescriptor],
              cfg: TrainConfig, head_cfg: HeadConfig, init_stream: int = _INIT
              ) -> FixedRunResult:
    """Train the fixed-architecture head; report metrics on all splits.

    epochs = 0 evaluates the seeded initialization without any update.
    """
    seed = int(stream_rng(cfg.seed, init_stream).integers(2 ** 31))
    params = init_head_params(head_cfg, [arch[1]], seed, cfg.dtype)
    losses = _train_epochs(dataset, params, head_cfg, cfg, arch=arch)
    forward = lambda xb: forward_fixed(xb, arch, params, head_cfg)
    return FixedRunResult(params, evaluate_splits(forward, dataset, cfg.dtype), losses)


def run_search(dataset: FeatureDataset, cfg: TrainConfig, head_cfg: HeadConfig
               ) -> SearchResult:
    """Warmup with uniform mixing, joint optimization of parameters and
    structural weights, argmax discretization, then a from-scratch retrain of
    the selected architecture with the same configuration."""
    seed = int(stream_rng(cfg.seed, _INIT).integers(2 ** 31))
    params = init_head_params(head_cfg, head_cfg.qff_candidates(), seed, cfg.dtype)
    state = SearchState(init_structural_weights(cfg.dtype), params)
    feats_val, labels_val = dataset.split("val")
    val_history: list[float] = []

    def ensemble_fwd(xb):
        return ensemble_forward(xb, state.sw, params, head_cfg)

    def log_val(epoch: int):
        preds = predict(ensemble_fwd, feats_val, cfg.dtype)
        acc = compute_metrics(preds, labels_val, dataset.n_classes).accuracy
        val_history.append(acc)
        log.info("epoch %d: ensemble val accuracy %.4f", epoch, acc)

    losses = _train_epochs(dataset, params, head_cfg, cfg, state=state,
                           epoch_callback=log_val)
    preds_val = predict(ensemble_fwd, feats_val, cfg.dtype)
    val_metrics = compute_metrics(preds_val, labels_val, dataset.n_classes)

    arch = discretize(state.sw, head_cfg.timestep_layers, head_cfg.qff_layers)
    log.info("discretized architecture: timestep=%s qff=%s", arch[0], arch[1])
    retrained = run_fixed(dataset, arch, cfg, head_cfg, init_stream=_RETRAIN)
    return SearchResult(arch, state, losses, val_history, val_metrics, retrained)
