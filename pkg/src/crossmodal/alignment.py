"""Contrastive alignment of two modality encoders.

Both losses score a source embedding against its positive target and a set of
sampled negatives by dot product. With ``normalize=True`` (the default) the
embeddings are L2-normalized first, so the scores are cosines.

``nce``   : mean over positives of ``-pos + sum_k neg_k``
``hinge`` : mean over positives of ``sum_k max(0, margin - pos + neg_k)``

Losses are averaged over positives; multiply by the number of positives to
recover the summed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .numkernel import MlpParams, OptState, mlp_backward, mlp_forward, opt_step
from .rng import make_rng
from .synthworld import AlignmentTask, AlignSplit


@dataclass(frozen=True)
class AlignLossConfig:
    variant: str = "hinge"
    margin: float = 0.1
    negatives_per_pair: int = 5
    weak_pairs_per_set: int = 4
    normalize: bool = True

    def __post_init__(self):
        if self.variant not in ("nce", "hinge"):
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.negatives_per_pair < 1:
            raise ConfigError("negatives_per_pair must be >= 1")
        if self.weak_pairs_per_set < 1:
            raise ConfigError("weak_pairs_per_set must be >= 1")


@dataclass(frozen=True)
class OptConfig:
    kind: str = "adam"
    lr: float = 1e-3

    def state(self) -> OptState:
        return OptState(kind=self.kind, lr=self.lr)


@dataclass
class AlignLoss:
    loss: float
    grad_s: MlpParams
    grad_t: MlpParams
    pos_dot: np.ndarray = field(repr=False, default=None)
    neg_dot: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# sampling


def strong_positives(split: AlignSplit) -> tuple[np.ndarray, np.ndarray]:
    """``(src_rows, tgt_rows)`` of the one-to-one pairs, ordered by group."""
    n = split.n_groups
    if len(split.xs_group) != n or len(split.xt_group) != n:
        raise ConfigError("strong loss needs one-to-one pairs")
    src = np.empty(n, dtype=np.int64)
    tgt = np.empty(n, dtype=np.int64)
    src[split.xs_group] = np.arange(n)
    tgt[split.xt_group] = np.arange(n)
    return src, tgt


def sample_weak_positives(split: AlignSplit, per_set: int, rng: np.random.Generator):
    """``per_set`` draws from each set's ``X_s x X_t``, ordered set by set."""
    src, tgt = [], []
    for g in range(split.n_groups):
        s_rows = np.flatnonzero(split.xs_group == g)
        t_rows = np.flatnonzero(split.xt_group == g)
        if len(s_rows) == 0 or len(t_rows) == 0:
            raise ConfigError(f"weak set {g} is empty on one side")
        src.append(s_rows[rng.integers(0, len(s_rows), size=per_set)])
        tgt.append(t_rows[rng.integers(0, len(t_rows), size=per_set)])
    return np.concatenate(src), np.concatenate(tgt)


def sample_negatives(
    split: AlignSplit, per_pair: int, stream_id: int, per_group: int = 1, seed: int = 0
) -> np.ndarray:
    """Negative target rows for each positive, shape ``(n_groups * per_group, per_pair)``.

    Positives are taken to be ordered group by group, ``per_group`` per group.
    Negatives are drawn uniformly, with replacement, from the target rows of
    every other group.
    """
    if per_pair < 1:
        raise ConfigError("per_pair must be >= 1")
    if split.n_groups < 2:
        raise ConfigError("need at least two pairs or sets to draw negatives")
    rng = make_rng(seed, "negatives", stream_id)
    out = np.empty((split.n_groups * per_group, per_pair), dtype=np.int64)
    for g in range(split.n_groups):
        eligible = np.flatnonzero(split.xt_group != g)
        if len(eligible) == 0:
            raise ConfigError(f"no valid negatives for group {g}")
        out[g * per_group:(g + 1) * per_group] = eligible[
            rng.integers(0, len(eligible), size=(per_group, per_pair))
        ]
    return out


# ---------------------------------------------------------------------------
# losses


def _normalize(e: np.ndarray):
    """Unit rows; a zero row has no direction and stays zero."""
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    safe = np.where(norms == 0, 1.0, norms)
    return e / safe, safe


def _normalize_backward(g: np.ndarray, u: np.ndarray, norms: np.ndarray) -> np.ndarray:
    out = (g - np.sum(g * u, axis=1, keepdims=True) * u) / norms
    out[~u.any(axis=1)] = 0.0
    return out


def embed(p: MlpParams, x: np.ndarray, normalize: bool = True) -> np.ndarray:
    out = mlp_forward(p, x).output
    return _normalize(out)[0] if normalize else out


def contrastive_loss(
    e_s: MlpParams,
    e_t: MlpParams,
    xs: np.ndarray,
    xt: np.ndarray,
    src_rows: np.ndarray,
    tgt_rows: np.ndarray,
    negatives: np.ndarray,
    cfg: AlignLossConfig,
) -> AlignLoss:
    """Loss and gradients for positives ``(xs[src_rows[i]], xt[tgt_rows[i]])``
    with negatives ``xt[negatives[i]]``."""
    if e_s.out_dim != e_t.out_dim:
        raise ConfigError(f"embedding dims differ: {e_s.out_dim} vs {e_t.out_dim}")
    negatives = np.asarray(negatives)
    if negatives.ndim != 2 or negatives.shape[0] != len(src_rows):
        raise ConfigError(f"negatives shape {negatives.shape} does not match {len(src_rows)} positives")
    n = len(src_rows)
    trace_s = mlp_forward(e_s, xs[src_rows])
    trace_t = mlp_forward(e_t, xt)
    S_raw, T_raw = trace_s.output, trace_t.output
    if cfg.normalize:
        S, s_norm = _normalize(S_raw)
        T, t_norm = _normalize(T_raw)
    else:
        S, T = S_raw, T_raw

    pos = np.einsum("ij,ij->i", S, T[tgt_rows])
    neg = np.einsum("ij,ikj->ik", S, T[negatives])
    if cfg.variant == "nce":
        per = -pos + neg.sum(axis=1)
        w_neg = np.ones_like(neg)
        w_pos = np.ones(n)
    else:
        viol = cfg.margin - pos[:, None] + neg
        per = np.maximum(viol, 0.0).sum(axis=1)
        w_neg = (viol > 0).astype(np.float64)
        w_pos = w_neg.sum(axis=1)
    loss = float(per.mean())
    if not np.isfinite(loss):
        raise NumericError("alignment loss is not finite")

    # dL/dS_i = (-w_pos_i T_pos + sum_k w_ik T_neg_ik) / n ; T gets the transpose terms
    gS = (-w_pos[:, None] * T[tgt_rows] + np.einsum("ik,ikj->ij", w_neg, T[negatives])) / n
    gT = np.zeros_like(T)
    np.add.at(gT, tgt_rows, -w_pos[:, None] * S / n)
    np.add.at(gT, negatives.ravel(), (w_neg[:, :, None] * S[:, None, :] / n).reshape(-1, S.shape[1]))
    if cfg.normalize:
        gS = _normalize_backward(gS, S, s_norm)
        gT = _normalize_backward(gT, T, t_norm)
    grad_s, _ = mlp_backward(e_s, trace_s, gS)
    grad_t, _ = mlp_backward(e_t, trace_t, gT)
    return AlignLoss(loss, grad_s, grad_t, pos, neg)


def strong_align_loss(e_s, e_t, pairs: AlignSplit, negatives: np.ndarray, cfg: AlignLossConfig) -> AlignLoss:
    src, tgt = strong_positives(pairs)
    return contrastive_loss(e_s, e_t, pairs.xs, pairs.xt, src, tgt, negatives, cfg)


def weak_align_loss(
    e_s, e_t, weak_sets: AlignSplit, negatives: np.ndarray, cfg: AlignLossConfig, stream_id: int = 0, seed: int = 0
) -> AlignLoss:
    """Cross-product positives, ``cfg.weak_pairs_per_set`` per set, scored like
    the strong loss. ``negatives`` must come from :func:`sample_negatives` with
    ``per_group=cfg.weak_pairs_per_set``."""
    rng = make_rng(seed, "weak_positives", stream_id)
    src, tgt = sample_weak_positives(weak_sets, cfg.weak_pairs_per_set, rng)
    return contrastive_loss(e_s, e_t, weak_sets.xs, weak_sets.xt, src, tgt, negatives, cfg)


def task_loss(
    e_s, e_t, split: AlignSplit, mode: str, cfg: AlignLossConfig, stream_id: int, seed: int = 0
) -> AlignLoss:
    """Draw negatives (and weak positives) for ``split`` and evaluate the loss."""
    per_group = 1 if mode == "strong" else cfg.weak_pairs_per_set
    neg = sample_negatives(split, cfg.negatives_per_pair, stream_id, per_group=per_group, seed=seed)
    if mode == "strong":
        return strong_align_loss(e_s, e_t, split, neg, cfg)
    return weak_align_loss(e_s, e_t, split, neg, cfg, stream_id=stream_id, seed=seed)


@dataclass
class AlignTrainResult:
    e_s: MlpParams
    e_t: MlpParams
    losses: list[float]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def align_inner_train(
    e_s: MlpParams,
    e_t: MlpParams,
    task: AlignmentTask,
    steps: int,
    opt: OptConfig = OptConfig(),
    cfg: AlignLossConfig = AlignLossConfig(),
    stream_id: int = 0,
    seed: int = 0,
) -> AlignTrainResult:
    """Adapt copies of both encoders on the task's train split.

    Negatives (and weak positives) are redrawn every step. ``losses[i]`` is
    the loss before step ``i``; the inputs are never modified.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    s_state, t_state = opt.state(), opt.state()
    cur_s, cur_t = e_s, e_t
    losses = []
    for step in range(steps):
        try:
            with np.errstate(invalid="ignore", over="ignore"):
                res = task_loss(cur_s, cur_t, task.train, task.mode, cfg,
                                stream_id=stream_id * 1_000_003 + step, seed=seed)
            losses.append(res.loss)
            cur_s, s_state = opt_step(cur_s, res.grad_s, s_state)
            cur_t, t_state = opt_step(cur_t, res.grad_t, t_state)
        except NumericError as exc:
            raise NumericError(f"alignment diverged at step {step}: {exc}") from None
    if cur_s is e_s:
        cur_s, cur_t = e_s.copy(), e_t.copy()
    return AlignTrainResult(cur_s, cur_t, losses)
