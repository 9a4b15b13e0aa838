"""Few-shot accuracy aggregation and cross-modal retrieval metrics."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import csvio
from .errors import ConfigError, NumericError
from .metalearn import (
    EpisodeResult,
    EvalProtocol,
    MetaConfig,
    Strategy,
    WorldAccess,
    evaluate_learner,
    run_strategy,
    train_strategy,
)
from .numkernel import MlpParams, mlp_apply
from .rng import derive_seed
from .synthworld import AlignSplit, ConceptWorld

EPISODE_HEADER = ("strategy", "k", "seed", "task_id", "accuracy")
SUMMARY_HEADER = ("strategy", "k", "mean", "std", "n")
RETRIEVAL_HEADER = ("strategy", "k", "R1", "R5", "R10", "median_rank", "cosine_loss")
RECALL_KS = (1, 5, 10)


@dataclass(frozen=True)
class AccuracySummary:
    mean: float
    std: float
    n: int


def aggregate_accuracy(results) -> dict[tuple[str, int], AccuracySummary]:
    """Mean and sample standard deviation (``n - 1``) per ``(strategy, k)``.

    Values are sorted before summing, so the output does not depend on the
    order of ``results``. A cell with one result has ``std = nan``.
    """
    cells: dict[tuple[str, int], list[float]] = defaultdict(list)
    for r in results:
        cells[(r.strategy, int(r.k_shot))].append(float(r.accuracy))
    out = {}
    for key in sorted(cells):
        vals = np.sort(np.array(cells[key]))
        n = len(vals)
        mean = math.fsum(vals) / n
        std = math.sqrt(math.fsum((vals - mean) ** 2) / (n - 1)) if n > 1 else float("nan")
        out[key] = AccuracySummary(mean, std, n)
    return out


@dataclass(frozen=True)
class RetrievalReport:
    recall_at: dict[int, float]
    median_rank: float
    mean_rank: float
    cosine_loss: float
    ranks: np.ndarray

    def row(self) -> tuple[float, ...]:
        return (*(self.recall_at[k] for k in RECALL_KS), self.median_rank, self.cosine_loss)


def _unit_rows(e: np.ndarray, side: str) -> np.ndarray:
    norms = np.linalg.norm(e, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise NumericError(f"{side} sample {int(bad[0])} has a zero-norm embedding")
    return e / norms[:, None]


def retrieval_from_embeddings(emb_s: np.ndarray, emb_t: np.ndarray) -> RetrievalReport:
    """Source-to-target retrieval where row ``i`` of each side is a true pair.

    Candidates are ranked by descending cosine; among equal cosines the lower
    candidate index ranks first.
    """
    emb_s, emb_t = np.asarray(emb_s, float), np.asarray(emb_t, float)
    if emb_s.shape != emb_t.shape or emb_s.ndim != 2:
        raise ConfigError(f"embedding shapes differ: {emb_s.shape} vs {emb_t.shape}")
    n = emb_s.shape[0]
    if n < 2:
        raise ConfigError("retrieval needs at least 2 pairs")
    S, T = _unit_rows(emb_s, "source"), _unit_rows(emb_t, "target")
    sims = S @ T.T
    true = np.diag(sims)
    idx = np.arange(n)
    ahead = (sims > true[:, None]) | ((sims == true[:, None]) & (idx[None, :] < idx[:, None]))
    ranks = 1 + ahead.sum(axis=1)
    recall = {k: float(np.mean(ranks <= k)) for k in RECALL_KS}
    cos_loss = float(np.mean(np.clip(1.0 - np.einsum("ij,ij->i", S, T), 0.0, 2.0)))
    return RetrievalReport(recall, float(np.median(ranks)), float(np.mean(ranks)), cos_loss, ranks)


def retrieval_metrics(e_s: MlpParams, e_t: MlpParams, pairs) -> RetrievalReport:
    """Embed a strong split (or row-aligned ``(xs, xt)``) and score retrieval."""
    xs, xt = pairs.pairs() if isinstance(pairs, AlignSplit) else pairs
    return retrieval_from_embeddings(mlp_apply(e_s, xs), mlp_apply(e_t, xt))


@dataclass(frozen=True)
class NoisePoint:
    rate: float
    mean_accuracy: float
    results: tuple[EpisodeResult, ...]


def noise_sweep(
    strategy: Strategy,
    world: ConceptWorld,
    rates,
    protocol: EvalProtocol,
    seed: int,
    cfg: MetaConfig = MetaConfig(),
) -> list[NoisePoint]:
    """Full train-and-evaluate run per noise rate, all with the same seeds.

    Noise corrupts the support labels at meta-test and, for strategies allowed
    to read them, the target labels seen during meta-training. A strategy that
    never reads target labels trains identically at every rate, so it is
    trained once per repeat and only re-evaluated; the results are the same
    as separate :func:`run_strategy` calls.
    """
    rates = [float(r) for r in rates]
    if any(not 0.0 <= r <= 1.0 for r in rates):
        raise ConfigError("noise rates must lie in [0, 1]")
    if strategy.policy.target_labels:
        per_rate = [run_strategy(strategy, world, protocol, seed, cfg, label_noise=r) for r in rates]
    else:
        per_rate = [[] for _ in rates]
        for rep in range(protocol.repeats):
            run_seed = derive_seed(seed, "repeat", rep)
            learner = train_strategy(strategy, world, cfg, run_seed, WorldAccess(world, strategy.policy, seed=run_seed))
            for out, rate in zip(per_rate, rates):
                out.extend(evaluate_learner(learner, world, protocol, cfg, strategy.name, run_seed, rep, rate))
    return [NoisePoint(r, float(np.mean([e.accuracy for e in res])), tuple(res)) for r, res in zip(rates, per_rate)]


def episode_rows(results):
    return [(r.strategy, r.k_shot, r.seed, r.task_id, r.accuracy) for r in results]


def summary_rows(summary: dict[tuple[str, int], AccuracySummary]):
    return [(s, k, v.mean, v.std, v.n) for (s, k), v in summary.items()]


def write_episodes_csv(path, results) -> None:
    csvio.write_csv(path, EPISODE_HEADER, episode_rows(results))


def write_summary_csv(path, summary) -> None:
    csvio.write_csv(path, SUMMARY_HEADER, summary_rows(summary))
