"""Synthetic worlds: a linear teacher model and a clustered-concept world.

The linear world has two modalities related by a full-rank map,
``x1 = W x2``, with scalar labels from consistent teachers
``y1 = u1 . x1 + noise`` and ``y2 = u2 . x2 + noise`` where ``u2 = W^T u1``.

The concept world draws latent samples around ``C`` unit-norm concept centers
and renders each latent into a linear source view and a tanh target view.
Every concept owns a fixed pool of latents; pool indices below
``n_classification`` feed classification episodes and the rest feed
alignment tasks, so the two never share a sample.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import csvio
from .errors import ConfigError, GenerationError
from .rng import make_rng

SPLITS = ("train", "val", "test")
MODALITIES = ("source", "target")


# ---------------------------------------------------------------------------
# linear teacher world


@dataclass(frozen=True)
class LinearWorldConfig:
    d: int = 20
    sigma: float = 1.0
    sigma_W: float = 0.1
    n1: int = 250
    n2: int = 40
    n_align: int = 100

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        for name in ("n1", "n2", "n_align"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.sigma < 0 or self.sigma_W < 0:
            raise ConfigError("noise levels must be non-negative")


@dataclass
class LinearWorld:
    d: int
    u1: np.ndarray
    u2: np.ndarray
    W: np.ndarray
    sigma: float
    sigma_W: float
    n1: int
    n2: int
    n_align: int
    cond: float

    @property
    def config(self) -> LinearWorldConfig:
        return LinearWorldConfig(self.d, self.sigma, self.sigma_W, self.n1, self.n2, self.n_align)


@dataclass
class LinearDatasets:
    """Row-major samples: ``x1`` is ``(n1, d)``, ``y1`` is ``(n1,)`` and so on."""

    x1: np.ndarray
    y1: np.ndarray
    x2: np.ndarray
    y2: np.ndarray
    align_x1: np.ndarray
    align_x2: np.ndarray


MAX_COND = 1e6


def _draw_transform(d: int, seed: int) -> tuple[np.ndarray, float]:
    for attempt in range(10):
        rng = make_rng(seed, "linear", "W", attempt)
        W = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
        cond = float(np.linalg.cond(W))
        if np.isfinite(cond) and cond <= MAX_COND:
            return W, cond
    raise GenerationError(f"could not draw a well-conditioned {d}x{d} transform in 10 attempts")


def gen_linear_world(cfg: LinearWorldConfig, seed: int) -> tuple[LinearWorld, LinearDatasets]:
    """Draw the teacher world and its three datasets.

    Each dataset comes from its own stream, and rows are drawn sequentially,
    so growing ``n_align`` only appends rows: the first ``n`` alignment pairs
    are shared across configs that differ only in ``n_align``.
    """
    d = cfg.d
    W, cond = _draw_transform(d, seed)
    u1 = make_rng(seed, "linear", "u1").standard_normal(d)
    u1 /= np.linalg.norm(u1)
    u2 = W.T @ u1

    rng1 = make_rng(seed, "linear", "D1")
    x1 = rng1.standard_normal((cfg.n1, d)) @ W.T
    y1 = x1 @ u1 + cfg.sigma * rng1.standard_normal(cfg.n1)

    rng2 = make_rng(seed, "linear", "D2")
    x2 = rng2.standard_normal((cfg.n2, d))
    y2 = x2 @ u2 + cfg.sigma * rng2.standard_normal(cfg.n2)

    rng_x = make_rng(seed, "linear", "align_x2")
    rng_eta = make_rng(seed, "linear", "align_eta")
    ax2 = rng_x.standard_normal((cfg.n_align, d))
    ax1 = ax2 @ W.T + cfg.sigma_W * rng_eta.standard_normal((cfg.n_align, d))

    world = LinearWorld(d, u1, u2, W, cfg.sigma, cfg.sigma_W, cfg.n1, cfg.n2, cfg.n_align, cond)
    return world, LinearDatasets(x1, y1, x2, y2, ax1, ax2)


def write_linear_bundle(directory, world: LinearWorld, data: LinearDatasets) -> list[Path]:
    """One CSV per object: ``world.csv`` (u1, u2), ``W.csv``, ``D1sup.csv``,
    ``D2sup.csv`` and ``Dunsup.csv``."""
    directory = Path(directory)
    d = world.d
    paths = [directory / n for n in ("world.csv", "W.csv", "D1sup.csv", "D2sup.csv", "Dunsup.csv")]
    csvio.write_csv(paths[0], ["i", "u1", "u2"], [(i, world.u1[i], world.u2[i]) for i in range(d)])
    csvio.write_matrix(paths[1], world.W, prefix="w")
    xs = [f"x{j}" for j in range(d)]
    csvio.write_csv(paths[2], xs + ["y"], np.column_stack([data.x1, data.y1]).tolist())
    csvio.write_csv(paths[3], xs + ["y"], np.column_stack([data.x2, data.y2]).tolist())
    csvio.write_csv(
        paths[4],
        [f"x1_{j}" for j in range(d)] + [f"x2_{j}" for j in range(d)],
        np.column_stack([data.align_x1, data.align_x2]).tolist(),
    )
    return paths


def read_linear_bundle(directory, sigma: float = float("nan"), sigma_W: float = float("nan")):
    directory = Path(directory)
    wt = csvio.read_matrix(directory / "world.csv")
    W = csvio.read_matrix(directory / "W.csv")
    d1 = csvio.read_matrix(directory / "D1sup.csv")
    d2 = csvio.read_matrix(directory / "D2sup.csv")
    du = csvio.read_matrix(directory / "Dunsup.csv")
    d = W.shape[0]
    world = LinearWorld(
        d, wt[:, 1].copy(), wt[:, 2].copy(), W, sigma, sigma_W, len(d1), len(d2), len(du), float(np.linalg.cond(W))
    )
    data = LinearDatasets(d1[:, :d], d1[:, d], d2[:, :d], d2[:, d], du[:, :d], du[:, d:])
    return world, data


# ---------------------------------------------------------------------------
# concept world


@dataclass(frozen=True)
class ConceptWorldConfig:
    n_concepts: int = 40
    latent_dim: int = 16
    concept_std: float = 0.3
    source_dim: int = 24
    target_dim: int = 20
    target_gain: float = 1.5
    nuisance_dim: int = 8
    nuisance_scale: float = 0.5
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    pool_size: int = 120
    n_classification: int = 60
    n_way: int = 5
    weak_set_count: int = 8
    query_per_class: int = 15

    def __post_init__(self):
        if self.n_concepts < 3 * self.n_way:
            raise ConfigError(
                f"n_concepts={self.n_concepts} too small: need at least 3 * n_way = {3 * self.n_way}"
            )
        if self.n_way < 2:
            raise ConfigError("n_way must be >= 2")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split must be three non-negative fractions summing to 1")
        if min(self.latent_dim, self.source_dim, self.target_dim) < 1:
            raise ConfigError("dimensions must be positive")
        if not 0 < self.n_classification < self.pool_size:
            raise ConfigError("need 0 < n_classification < pool_size")
        if self.concept_std < 0 or self.nuisance_scale < 0 or self.nuisance_dim < 0:
            raise ConfigError("concept_std, nuisance_dim and nuisance_scale must be non-negative")
        counts = split_counts(self.n_concepts, self.split)
        for name, c in zip(SPLITS, counts):
            if c < self.n_way:
                raise ConfigError(f"split {name!r} has {c} concepts, fewer than n_way={self.n_way}")


def split_counts(n: int, fractions) -> tuple[int, int, int]:
    val = int(round(n * fractions[1]))
    test = int(round(n * fractions[2]))
    return n - val - test, val, test


@dataclass
class ConceptWorld:
    config: ConceptWorldConfig
    seed: int
    centers: np.ndarray          # (C, p), unit-norm rows
    A_s: np.ndarray              # (d_s, p)
    A_t: np.ndarray              # (d_t, p)
    B_s: np.ndarray              # (d_s, q) source-only nuisance loading
    B_t: np.ndarray              # (d_t, q) target-only nuisance loading
    latents: np.ndarray          # (C, pool_size, p + 2q) records [z, n_s, n_t]
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def render(self, modality: str, record: np.ndarray) -> np.ndarray:
        """Map latent records ``[z, n_s, n_t]`` into one modality's observations.

        Source: ``A_s z + B_s n_s``. Target: ``tanh(gain * (A_t z + B_t n_t))``.
        The nuisance parts are private to each modality.
        """
        p, q = self.config.latent_dim, self.config.nuisance_dim
        z = record[..., :p]
        if modality == "source":
            return z @ self.A_s.T + record[..., p:p + q] @ self.B_s.T
        if modality == "target":
            return np.tanh(self.config.target_gain * (z @ self.A_t.T + record[..., p + q:] @ self.B_t.T))
        raise ConfigError(f"unknown modality {modality!r}")

    def dim(self, modality: str) -> int:
        return self.config.source_dim if modality == "source" else self.config.target_dim

    def observe(self, modality: str, concepts: np.ndarray, indices: np.ndarray) -> np.ndarray:
        return self.render(modality, self.latents[concepts, indices])

    def split_of(self, concept: int) -> str:
        for name, ids in self.splits.items():
            if concept in ids:
                return name
        raise ConfigError(f"concept {concept} not in any split")


def gen_concept_world(cfg: ConceptWorldConfig, seed: int) -> ConceptWorld:
    C, p = cfg.n_concepts, cfg.latent_dim
    rng = make_rng(seed, "concept", "structure")
    centers = rng.standard_normal((C, p))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    A_s = rng.standard_normal((cfg.source_dim, p)) / np.sqrt(p)
    A_t = rng.standard_normal((cfg.target_dim, p)) / np.sqrt(p)
    q = cfg.nuisance_dim
    scale = cfg.nuisance_scale / np.sqrt(max(q, 1))
    B_s = rng.standard_normal((cfg.source_dim, q)) * scale
    B_t = rng.standard_normal((cfg.target_dim, q)) * scale
    draws = make_rng(seed, "concept", "latents").standard_normal((C, cfg.pool_size, p + 2 * q))
    latents = np.concatenate(
        [centers[:, None, :] + cfg.concept_std * draws[..., :p], draws[..., p:]], axis=-1
    )
    n_tr, n_va, _ = split_counts(C, cfg.split)
    order = np.arange(C)
    splits = {"train": order[:n_tr], "val": order[n_tr:n_tr + n_va], "test": order[n_tr + n_va:]}
    return ConceptWorld(cfg, seed, centers, A_s, A_t, B_s, B_t, latents, splits)


def write_concept_bundle(directory, world: ConceptWorld) -> list[Path]:
    directory = Path(directory)
    paths = [directory / n for n in ("centers.csv", "A_s.csv", "A_t.csv", "splits.csv")]
    csvio.write_matrix(paths[0], world.centers, prefix="z")
    csvio.write_matrix(paths[1], world.A_s, prefix="a")
    csvio.write_matrix(paths[2], world.A_t, prefix="a")
    csvio.write_csv(
        paths[3], ["concept", "split"],
        sorted((int(c), name) for name, ids in world.splits.items() for c in ids),
    )
    return paths


# ---------------------------------------------------------------------------
# episodes


@dataclass
class ClassificationTask:
    modality: str
    n_way: int
    k_shot: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    concepts: np.ndarray          # episode label i -> world concept id
    support_index: np.ndarray     # pool indices, for bookkeeping
    query_index: np.ndarray
    split: str = "train"

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.concepts, self.support_index, self.query_index, self.support_y, self.query_y):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(np.ascontiguousarray(self.support_x).tobytes())
        return h.hexdigest()[:16]


def _check_split(world: ConceptWorld, split: str, n_way: int) -> np.ndarray:
    if split not in world.splits:
        raise ConfigError(f"unknown split {split!r}")
    ids = world.splits[split]
    if len(ids) < n_way:
        raise ConfigError(f"split {split!r} has {len(ids)} concepts, episode needs {n_way}")
    return ids


def sample_episode(
    world: ConceptWorld,
    modality: str,
    n_way: int,
    k_shot: int,
    split: str,
    stream_id: int,
    query_per_class: int | None = None,
) -> ClassificationTask:
    """An ``n_way``-way ``k_shot``-shot episode from one concept split."""
    if modality not in MODALITIES:
        raise ConfigError(f"unknown modality {modality!r}")
    if k_shot < 1 or n_way < 2:
        raise ConfigError("need k_shot >= 1 and n_way >= 2")
    q = world.config.query_per_class if query_per_class is None else query_per_class
    if k_shot + q > world.config.n_classification:
        raise ConfigError(f"k_shot + query ({k_shot + q}) exceeds the classification pool")
    ids = _check_split(world, split, n_way)
    # concepts and per-concept sample order ignore k_shot: query sets are shared
    # across shot counts and smaller supports are prefixes of larger ones
    rng = make_rng(world.seed, "episode", modality, split, n_way, stream_id)
    concepts = rng.choice(ids, size=n_way, replace=False)
    s_idx = np.empty((n_way, k_shot), dtype=np.int64)
    q_idx = np.empty((n_way, q), dtype=np.int64)
    for c in range(n_way):
        order = rng.permutation(world.config.n_classification)
        q_idx[c], s_idx[c] = order[:q], order[q:q + k_shot]
    labels = np.arange(n_way)
    s_con = np.repeat(concepts, k_shot)
    q_con = np.repeat(concepts, q)
    return ClassificationTask(
        modality=modality,
        n_way=n_way,
        k_shot=k_shot,
        support_x=world.observe(modality, s_con, s_idx.ravel()),
        support_y=np.repeat(labels, k_shot),
        query_x=world.observe(modality, q_con, q_idx.ravel()),
        query_y=np.repeat(labels, q),
        concepts=concepts,
        support_index=s_idx.ravel(),
        query_index=q_idx.ravel(),
        split=split,
    )


def corrupt_labels(task: ClassificationTask, rate: float, stream_id: int, seed: int = 0) -> ClassificationTask:
    """Symmetric label noise: each label is replaced, with probability ``rate``,
    by a uniform draw over the other ``n_way - 1`` labels."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"noise rate {rate} outside [0, 1]")
    if task.n_way < 2:
        raise ConfigError("label noise needs n_way >= 2")
    if rate == 0.0:
        return task
    rng = make_rng(seed, "noise", stream_id)

    def flip(y):
        hit = rng.random(y.shape[0]) < rate
        shift = rng.integers(1, task.n_way, size=y.shape[0])
        return np.where(hit, (y + shift) % task.n_way, y)

    return replace(task, support_y=flip(task.support_y), query_y=flip(task.query_y))


# ---------------------------------------------------------------------------
# alignment tasks


@dataclass
class AlignSplit:
    """Cross-modal samples grouped into pairs (strong) or sets (weak).

    ``xs_group[i]`` / ``xt_group[j]`` give the pair or set each row belongs
    to; in strong mode groups are singletons on both sides so the pairing is
    one-to-one.
    """

    xs: np.ndarray
    xt: np.ndarray
    xs_group: np.ndarray
    xt_group: np.ndarray
    group_concept: np.ndarray
    xs_index: np.ndarray
    xt_index: np.ndarray
    xs_latent: np.ndarray
    xt_latent: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.group_concept)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-aligned ``(xs, xt)`` for strong splits."""
        order_s = np.argsort(self.xs_group, kind="stable")
        order_t = np.argsort(self.xt_group, kind="stable")
        if not np.array_equal(self.xs_group[order_s], self.xt_group[order_t]):
            raise ConfigError("split is not one-to-one")
        return self.xs[order_s], self.xt[order_t]


@dataclass
class AlignmentTask:
    mode: str                  # "strong" | "weak"
    train: AlignSplit
    test: AlignSplit
    split: str = "train"

    @property
    def concepts(self) -> np.ndarray:
        return np.union1d(self.train.group_concept, self.test.group_concept)


def _strong_split(world: ConceptWorld, concepts: np.ndarray, idx: np.ndarray) -> AlignSplit:
    z = world.latents[concepts, idx]
    g = np.arange(len(concepts))
    return AlignSplit(
        xs=world.render("source", z), xt=world.render("target", z),
        xs_group=g, xt_group=g.copy(), group_concept=concepts,
        xs_index=idx, xt_index=idx.copy(), xs_latent=z, xt_latent=z.copy(),
    )


def _weak_split(world, concepts, s_idx, t_idx) -> AlignSplit:
    n_sets, m = s_idx.shape
    cs = np.repeat(concepts, m)
    zs = world.latents[cs, s_idx.ravel()]
    zt = world.latents[cs, t_idx.ravel()]
    g = np.repeat(np.arange(n_sets), m)
    return AlignSplit(
        xs=world.render("source", zs), xt=world.render("target", zt),
        xs_group=g, xt_group=g.copy(), group_concept=concepts,
        xs_index=s_idx.ravel(), xt_index=t_idx.ravel(), xs_latent=zs, xt_latent=zt,
    )


def sample_alignment_task(
    world: ConceptWorld,
    mode: str,
    size: int,
    stream_id: int,
    split: str = "train",
    test_size: int | None = None,
    set_size: int = 4,
    concepts_per_task: int | None = None,
) -> AlignmentTask:
    """Paired cross-modal data drawn from the alignment pool of one split.

    Strong mode: ``size`` training pairs sharing a latent, spread over
    ``concepts_per_task`` concepts (default ``n_way``). Weak mode: ``size``
    training sets, one concept each, holding ``set_size`` independently drawn
    samples per modality. ``test_size`` (default ``size``) more pairs or sets
    form the held-out split.
    """
    if mode not in ("strong", "weak"):
        raise ConfigError(f"unknown alignment mode {mode!r}")
    if size < 2:
        raise ConfigError("alignment tasks need size >= 2")
    test_size = size if test_size is None else test_size
    if test_size < 2:
        raise ConfigError("alignment test split needs at least 2 pairs or sets")
    ids = _check_split(world, split, 2)
    cfg = world.config
    lo, n_pool = cfg.n_classification, cfg.pool_size - cfg.n_classification
    rng = make_rng(world.seed, "align", mode, split, size, test_size, set_size, stream_id)

    if mode == "strong":
        n_con = min(concepts_per_task or cfg.n_way, len(ids))
        chosen = rng.choice(ids, size=n_con, replace=False)
        total = size + test_size
        concepts = chosen[np.arange(total) % n_con]
        rng.shuffle(concepts)
        idx = np.empty(total, dtype=np.int64)
        for c in chosen:
            rows = np.flatnonzero(concepts == c)
            if len(rows) > n_pool:
                raise ConfigError("alignment task larger than the alignment pool")
            idx[rows] = lo + rng.choice(n_pool, size=len(rows), replace=False)
        return AlignmentTask(
            "strong",
            _strong_split(world, concepts[:size], idx[:size]),
            _strong_split(world, concepts[size:], idx[size:]),
            split,
        )

    total = size + test_size
    if total > len(ids):
        raise ConfigError(f"weak task needs {total} distinct concepts, split {split!r} has {len(ids)}")
    if set_size < 1 or 4 * set_size > n_pool:
        raise ConfigError("set_size must be >= 1 and fit the alignment pool")
    concepts = rng.choice(ids, size=total, replace=False)
    picks = np.stack([rng.choice(n_pool, size=2 * set_size, replace=False) for _ in range(total)]) + lo
    s_idx, t_idx = picks[:, :set_size], picks[:, set_size:]
    return AlignmentTask(
        "weak",
        _weak_split(world, concepts[:size], s_idx[:size], t_idx[:size]),
        _weak_split(world, concepts[size:], s_idx[size:], t_idx[size:]),
        split,
    )
