"""Meta-training of aligned encoders and a shared classifier, plus baselines.

The CroMA loop alternates, once per iteration, an alignment task (adapt both
encoders with the contrastive loss, then Reptile-update them) and a
source-modality classification task (adapt the classifier on source
embeddings, then Reptile-update it). Meta-test embeds a target-modality
episode with the target encoder and fine-tunes on its support set.

The classifier's output layer is re-created for every episode because label
sets change between episodes; Reptile only moves the layers below it. During
meta-training the new layer is Glorot-random (a zero layer would pass no
gradient to the trunk on the first inner step); at meta-test it is zero, so
the untrained head starts neutral.

Every strategy reads the world through :class:`WorldAccess`, which counts
reads and refuses any the strategy is not entitled to.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import csvio
from .alignment import AlignLossConfig, OptConfig, _normalize, _normalize_backward, align_inner_train, task_loss
from .errors import ConfigError, ContractViolation, NumericError, ParseError
from .numkernel import (
    MlpParams,
    check_same_shape,
    init_mlp,
    mlp_backward,
    mlp_forward,
    opt_step,
    params_checksum,
)
from .rng import derive_seed, make_rng
from .synthworld import (
    AlignmentTask,
    ClassificationTask,
    ConceptWorld,
    corrupt_labels,
    sample_alignment_task,
    sample_episode,
)

STRATEGIES = (
    "croma",
    "align_classify",
    "align_meta_classify",
    "pretrain_finetune",
    "unsup_meta_reconstruct",
    "shared_encoder",
    "shared_encoder_align",
    "oracle_within_modality",
)


@dataclass(frozen=True)
class MetaConfig:
    """Sizes and optimization settings shared by every strategy."""

    iterations: int = 800
    inner_steps: int = 5
    meta_lr: float = 0.1
    align_lr: float = 1e-3
    cls_lr: float = 1e-3
    align_mode: str = "strong"
    align_task_size: int = 20
    weak_set_size: int = 4
    train_n_way: int = 5
    train_k_shot: int = 5
    hidden: int = 32
    embed_dim: int = 16
    cls_hidden: int = 32
    adapt_steps: int = 10
    adapt_lr: float = 1e-3
    adapt_encoder: bool = False
    normalize: bool = True
    loss: AlignLossConfig = AlignLossConfig()

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.inner_steps < 1:
            raise ConfigError("inner_steps must be >= 1")
        if not 0.0 <= self.meta_lr <= 1.0:
            raise ConfigError("meta_lr must be in [0, 1]")
        if self.align_mode not in ("strong", "weak"):
            raise ConfigError(f"unknown align_mode {self.align_mode!r}")
        if self.adapt_steps < 0:
            raise ConfigError("adapt_steps must be >= 0")


@dataclass
class MetaState:
    e_s_meta: MlpParams
    e_t_meta: MlpParams
    phi_meta: MlpParams
    iteration: int = 0

    def __post_init__(self):
        if self.e_s_meta.out_dim != self.e_t_meta.out_dim:
            raise ConfigError("encoder output dims differ")
        if self.phi_meta.in_dim != self.e_s_meta.out_dim:
            raise ConfigError("classifier input dim must equal the embedding dim")

    def checksum(self) -> str:
        return params_checksum(self.e_s_meta, self.e_t_meta, self.phi_meta)

    def copy(self) -> "MetaState":
        return MetaState(self.e_s_meta.copy(), self.e_t_meta.copy(), self.phi_meta.copy(), self.iteration)


@dataclass
class EpisodeResult:
    strategy: str
    k_shot: int
    accuracy: float
    adapt_steps: int
    seed: int
    repeat: int = 0
    task_id: int = 0
    fingerprint: str = ""


# ---------------------------------------------------------------------------
# parameter helpers


def reptile_update(meta: MlpParams, adapted: MlpParams, eps: float) -> MlpParams:
    """``meta + eps * (adapted - meta)`` per parameter."""
    if not 0.0 <= eps <= 1.0:
        raise ConfigError(f"eps={eps} outside [0, 1]")
    check_same_shape(meta, adapted)
    return meta.zip_map(adapted, lambda m, a: m + eps * (a - m))


def reptile_update_trunk(meta: MlpParams, adapted: MlpParams, eps: float) -> MlpParams:
    """Reptile on every layer except the output layer, which is kept from ``meta``."""
    moved = reptile_update(meta, adapted, eps)
    moved.weights[-1] = meta.weights[-1].copy()
    moved.biases[-1] = meta.biases[-1].copy()
    return moved


def fresh_head(phi: MlpParams, n_out: int, rng: np.random.Generator | None = None) -> MlpParams:
    """Copy of ``phi`` with a new output layer of width ``n_out``.

    The layer is zero when ``rng`` is None and Glorot-uniform otherwise;
    biases are always zero.
    """
    out = phi.copy()
    fan_in = phi.weights[-1].shape[1]
    if rng is None:
        out.weights[-1] = np.zeros((n_out, fan_in))
    else:
        limit = np.sqrt(6.0 / (fan_in + n_out))
        out.weights[-1] = rng.uniform(-limit, limit, size=(n_out, fan_in))
    out.biases[-1] = np.zeros((1, n_out))
    return out


def init_meta_state(world: ConceptWorld, cfg: MetaConfig, seed: int, n_out: int | None = None) -> MetaState:
    rng = make_rng(seed, "init")
    ds, dt = world.config.source_dim, world.config.target_dim
    e_s = init_mlp([ds, cfg.hidden, cfg.embed_dim], ["relu", "identity"], rng)
    e_t = init_mlp([dt, cfg.hidden, cfg.embed_dim], ["relu", "identity"], rng)
    phi = init_mlp([cfg.embed_dim, cfg.cls_hidden, n_out or cfg.train_n_way], ["relu", "identity"], rng)
    return MetaState(e_s, e_t, fresh_head(phi, n_out or cfg.train_n_way))


def init_shared_state(world: ConceptWorld, cfg: MetaConfig, seed: int) -> MetaState:
    """One encoder body with a separate linear input layer per modality."""
    rng = make_rng(seed, "init-shared")
    ds, dt = world.config.source_dim, world.config.target_dim
    in_s = init_mlp([ds, cfg.hidden], ["identity"], rng)
    in_t = init_mlp([dt, cfg.hidden], ["identity"], rng)
    body = init_mlp([cfg.hidden, cfg.hidden, cfg.embed_dim], ["relu", "identity"], rng)
    e_s = MlpParams(in_s.weights + body.weights, in_s.biases + body.biases, ("identity",) + body.activations)
    body_t = body.copy()
    e_t = MlpParams(in_t.weights + body_t.weights, in_t.biases + body_t.biases, ("identity",) + body.activations)
    phi = init_mlp([cfg.embed_dim, cfg.cls_hidden, cfg.train_n_way], ["relu", "identity"], rng)
    return MetaState(e_s, e_t, fresh_head(phi, cfg.train_n_way))


# ---------------------------------------------------------------------------
# classification loss


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def cross_entropy_loss(phi: MlpParams, feats: np.ndarray, labels: np.ndarray):
    """``(loss, grad_phi, grad_feats)`` of the classifier on fixed features."""
    trace = mlp_forward(phi, feats)
    loss, g = softmax_cross_entropy(trace.output, labels)
    if not np.isfinite(loss):
        raise NumericError("classification loss is not finite")
    grad_phi, grad_feats = mlp_backward(phi, trace, g)
    return loss, grad_phi, grad_feats


def encode(enc: MlpParams, x: np.ndarray, normalize: bool = True) -> np.ndarray:
    out = mlp_forward(enc, x).output
    return _normalize(out)[0] if normalize else out


def encoder_classify_loss(enc: MlpParams, phi: MlpParams, x: np.ndarray, labels: np.ndarray, normalize: bool = True):
    """Cross-entropy through encoder and classifier: ``(loss, grad_enc, grad_phi)``."""
    t_enc = mlp_forward(enc, x)
    if normalize:
        feats, norms = _normalize(t_enc.output)
    else:
        feats = t_enc.output
    loss, g_phi, g_feats = cross_entropy_loss(phi, feats, labels)
    if normalize:
        g_feats = _normalize_backward(g_feats, feats, norms)
    g_enc, _ = mlp_backward(enc, t_enc, g_feats)
    return loss, g_enc, g_phi


def accuracy(phi: MlpParams, feats: np.ndarray, labels: np.ndarray) -> float:
    pred = np.argmax(mlp_forward(phi, feats).output, axis=1)
    return float(np.mean(pred == labels))


def train_classifier(phi, feats, labels, steps: int, opt: OptConfig) -> tuple[MlpParams, list[float]]:
    state = opt.state()
    losses = []
    for step in range(steps):
        loss, g, _ = cross_entropy_loss(phi, feats, labels)
        losses.append(loss)
        try:
            phi, state = opt_step(phi, g, state)
        except NumericError as exc:
            raise NumericError(f"classifier step {step}: {exc}") from None
    return phi, losses


def train_encoder_classifier(enc, phi, x, labels, steps: int, opt: OptConfig, normalize: bool = True):
    s_enc, s_phi = opt.state(), opt.state()
    losses = []
    for step in range(steps):
        loss, g_enc, g_phi = encoder_classify_loss(enc, phi, x, labels, normalize)
        losses.append(loss)
        try:
            enc, s_enc = opt_step(enc, g_enc, s_enc)
            phi, s_phi = opt_step(phi, g_phi, s_phi)
        except NumericError as exc:
            raise NumericError(f"adaptation step {step}: {exc}") from None
    return enc, phi, losses


# ---------------------------------------------------------------------------
# data access


@dataclass(frozen=True)
class AccessPolicy:
    source_labels: bool = True
    pairs: bool = True
    target_unlabeled: bool = False
    target_labels: bool = False


class WorldAccess:
    """Meta-training view of a concept world that enforces an access policy.

    Only the ``train`` concept split is reachable. Every read is tallied in
    ``counts`` and every concept touched is recorded in ``concepts_seen``.
    """

    def __init__(self, world: ConceptWorld, policy: AccessPolicy, label_noise: float = 0.0, seed: int = 0):
        self.world = world
        self.policy = policy
        self.label_noise = label_noise
        self.seed = seed
        self.counts: Counter = Counter()
        self.concepts_seen: set[int] = set()

    def _check_split(self, split: str):
        if split != "train":
            raise ContractViolation(f"meta-training may only read the train split, not {split!r}")

    def episode(self, modality: str, n_way: int, k_shot: int, stream_id: int, split: str = "train"):
        self._check_split(split)
        if modality == "target" and not self.policy.target_labels:
            raise ContractViolation("strategy is not permitted to read target-modality labels")
        if modality == "source" and not self.policy.source_labels:
            raise ContractViolation("strategy is not permitted to read source-modality labels")
        ep = sample_episode(self.world, modality, n_way, k_shot, split, stream_id)
        if modality == "target" and self.label_noise > 0:
            ep = corrupt_labels(ep, self.label_noise, stream_id, seed=self.seed)
        self.counts[f"{modality}_labels"] += len(ep.support_y)
        self.concepts_seen.update(int(c) for c in ep.concepts)
        return ep

    def unlabeled(self, modality: str, n_way: int, k_shot: int, stream_id: int) -> np.ndarray:
        if modality == "target" and not (self.policy.target_unlabeled or self.policy.pairs):
            raise ContractViolation("strategy is not permitted to read target-modality samples")
        ep = sample_episode(self.world, modality, n_way, k_shot, "train", stream_id)
        self.counts[f"{modality}_unlabeled"] += len(ep.support_x)
        self.concepts_seen.update(int(c) for c in ep.concepts)
        return ep.support_x

    def alignment_task(self, mode: str, size: int, stream_id: int, set_size: int = 4) -> AlignmentTask:
        if not self.policy.pairs:
            raise ContractViolation("strategy is not permitted to read cross-modal pairs")
        task = sample_alignment_task(self.world, mode, size, stream_id, split="train", set_size=set_size)
        self.counts["pairs"] += len(task.train.xs) + len(task.test.xs)
        self.concepts_seen.update(int(c) for c in task.concepts)
        return task


# ---------------------------------------------------------------------------
# CroMA


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def to_csv(self, path) -> None:
        csvio.write_csv(path, ["iteration", "align_loss", "cls_loss"], self.rows)


def _align_step(access, state: MetaState, cfg: MetaConfig, it: int, seed: int, meta_align: bool, tie_body: bool = False):
    task = access.alignment_task(cfg.align_mode, cfg.align_task_size, derive_seed(seed, "align", it), cfg.weak_set_size)
    if tie_body:
        res_s, res_t, losses = _tied_align_train(state.e_s_meta, state.e_t_meta, task, cfg, it, seed)
    else:
        res = align_inner_train(
            state.e_s_meta, state.e_t_meta, task, cfg.inner_steps,
            OptConfig("adam", cfg.align_lr), cfg.loss, stream_id=it, seed=seed,
        )
        res_s, res_t, losses = res.e_s, res.e_t, res.losses
    eps = cfg.meta_lr if meta_align else 1.0
    state.e_s_meta = reptile_update(state.e_s_meta, res_s, eps)
    state.e_t_meta = reptile_update(state.e_t_meta, res_t, eps)
    return losses[0]


def _source_cls_step(access, state: MetaState, cfg: MetaConfig, it: int, seed: int) -> float:
    ep = access.episode("source", cfg.train_n_way, cfg.train_k_shot, derive_seed(seed, "src", it))
    feats = encode(state.e_s_meta, ep.support_x, cfg.normalize)
    phi0 = fresh_head(state.phi_meta, cfg.train_n_way, make_rng(seed, "head", "src", it))
    phi_fit, losses = train_classifier(phi0, feats, ep.support_y, cfg.inner_steps, OptConfig("adam", cfg.cls_lr))
    state.phi_meta = reptile_update_trunk(phi0, phi_fit, cfg.meta_lr)
    return losses[0]


def croma_meta_train(
    world: ConceptWorld,
    cfg: MetaConfig,
    seed: int,
    meta_align: bool = True,
    access: WorldAccess | None = None,
    log: TrainLog | None = None,
) -> MetaState:
    """Interleaved meta-alignment and source meta-classification.

    With ``meta_align=False`` the encoders take the adapted parameters
    directly (plain alignment training) instead of a Reptile step.
    """
    access = access or WorldAccess(world, STRATEGY_POLICIES["croma"])
    state = init_meta_state(world, cfg, seed)
    for it in range(cfg.iterations):
        try:
            a_loss = _align_step(access, state, cfg, it, seed, meta_align)
            c_loss = _source_cls_step(access, state, cfg, it, seed)
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}") from None
        state.iteration = it + 1
        if log is not None:
            log.rows.append((it, a_loss, c_loss))
    return state


# ---------------------------------------------------------------------------
# meta-test


@dataclass
class Learner:
    """What a trained strategy hands to meta-test."""

    state: MetaState
    adapt_encoder: bool = False
    normalize: bool = True


def meta_test(
    state: MetaState | Learner,
    episode: ClassificationTask,
    adapt_steps: int = 10,
    opt: OptConfig = OptConfig("adam", 1e-3),
    adapt_encoder: bool = False,
    reset_head: bool = True,
    normalize: bool = True,
    strategy: str = "croma",
    seed: int = 0,
) -> EpisodeResult:
    """Fine-tune a copy of the target encoder and classifier on the support set
    and score the query set. ``state`` is not modified."""
    if isinstance(state, Learner):
        adapt_encoder, normalize, state = state.adapt_encoder, state.normalize, state.state
    if episode.modality != "target":
        raise ConfigError("meta-test episodes must come from the target modality")
    if len(episode.support_y) != episode.n_way * episode.k_shot:
        raise ConfigError("support set does not hold n_way * k_shot samples")
    phi = fresh_head(state.phi_meta, episode.n_way) if reset_head else state.phi_meta.copy()
    enc = state.e_t_meta
    if adapt_steps > 0:
        if adapt_encoder:
            enc, phi, _ = train_encoder_classifier(enc, phi, episode.support_x, episode.support_y, adapt_steps, opt, normalize)
        else:
            feats = encode(enc, episode.support_x, normalize)
            phi, _ = train_classifier(phi, feats, episode.support_y, adapt_steps, opt)
    acc = accuracy(phi, encode(enc, episode.query_x, normalize), episode.query_y)
    return EpisodeResult(strategy, episode.k_shot, acc, adapt_steps, seed, fingerprint=episode.fingerprint())


# ---------------------------------------------------------------------------
# baselines


def _tied_step(e_s, e_t, g_s, g_t, st_s, st_t):
    """Optimizer step on encoders that share every layer but the first.

    The shared layers receive the summed gradient on both copies, so identical
    bodies stay bit-identical."""
    body = [a + b for a, b in zip(g_s.arrays()[2:], g_t.arrays()[2:])]
    g_s2 = MlpParams.from_arrays(g_s.arrays()[:2] + body, g_s.activations)
    g_t2 = MlpParams.from_arrays(g_t.arrays()[:2] + body, g_t.activations)
    e_s, st_s = opt_step(e_s, g_s2, st_s)
    e_t, st_t = opt_step(e_t, g_t2, st_t)
    return e_s, e_t, st_s, st_t


def _tied_align_train(e_s, e_t, task, cfg: MetaConfig, it: int, seed: int):
    opt = OptConfig("adam", cfg.align_lr)
    st_s, st_t = opt.state(), opt.state()
    losses = []
    for step in range(cfg.inner_steps):
        res = task_loss(e_s, e_t, task.train, task.mode, cfg.loss, stream_id=it * 1_000_003 + step, seed=seed)
        losses.append(res.loss)
        e_s, e_t, st_s, st_t = _tied_step(e_s, e_t, res.grad_s, res.grad_t, st_s, st_t)
    return e_s, e_t, losses


def _supervised_source_classifier(access, state: MetaState, cfg: MetaConfig, seed: int, log: TrainLog | None):
    """Train the classifier on all train-split source concepts at once."""
    world = access.world
    train_ids = world.splits["train"]
    n_cls = len(train_ids)
    position = {int(c): i for i, c in enumerate(train_ids)}
    phi = fresh_head(state.phi_meta, n_cls, make_rng(seed, "sup-head"))
    opt = OptConfig("adam", cfg.cls_lr)
    st = opt.state()
    for it in range(cfg.iterations):
        ep = access.episode("source", n_cls, 1, derive_seed(seed, "sup", it))
        labels = np.array([position[int(c)] for c in ep.concepts])[ep.support_y]
        feats = encode(state.e_s_meta, ep.support_x, cfg.normalize)
        for _ in range(cfg.inner_steps):
            loss, g, _ = cross_entropy_loss(phi, feats, labels)
            phi, st = opt_step(phi, g, st)
        if log is not None:
            log.rows.append((cfg.iterations + it, float("nan"), loss))
    state.phi_meta = fresh_head(phi, cfg.train_n_way)


def _reconstruction_loss(enc: MlpParams, dec: MlpParams, x: np.ndarray):
    t_enc = mlp_forward(enc, x)
    t_dec = mlp_forward(dec, t_enc.output)
    diff = t_dec.output - x
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    g_dec, g_z = mlp_backward(dec, t_dec, 2.0 * diff / x.shape[0])
    g_enc, _ = mlp_backward(enc, t_enc, g_z)
    return loss, g_enc, g_dec


def _init_decoder(world, cfg, seed):
    return init_mlp([cfg.embed_dim, cfg.hidden, world.config.target_dim], ["relu", "identity"], make_rng(seed, "decoder"))


def _pretrain_reconstruct(access, state, cfg, seed, log, meta: bool):
    dec = _init_decoder(access.world, cfg, seed)
    opt = OptConfig("adam", cfg.align_lr)
    st_e, st_d = opt.state(), opt.state()
    enc = state.e_t_meta
    for it in range(cfg.iterations):
        x = access.unlabeled("target", cfg.train_n_way, cfg.train_k_shot, derive_seed(seed, "recon", it))
        if meta:
            st_e, st_d = opt.state(), opt.state()
        e_i, d_i = enc, dec
        for _ in range(cfg.inner_steps):
            loss, g_e, g_d = _reconstruction_loss(e_i, d_i, x)
            e_i, st_e = opt_step(e_i, g_e, st_e)
            d_i, st_d = opt_step(d_i, g_d, st_d)
        eps = cfg.meta_lr if meta else 1.0
        enc, dec = reptile_update(enc, e_i, eps), reptile_update(dec, d_i, eps)
        if log is not None:
            log.rows.append((it, loss, float("nan")))
    state.e_t_meta = enc


def _oracle_train(access, state, cfg, seed, log):
    opt = OptConfig("adam", cfg.cls_lr)
    for it in range(cfg.iterations):
        ep = access.episode("target", cfg.train_n_way, cfg.train_k_shot, derive_seed(seed, "oracle", it))
        phi0 = fresh_head(state.phi_meta, cfg.train_n_way, make_rng(seed, "head", "oracle", it))
        enc, phi, losses = train_encoder_classifier(
            state.e_t_meta, phi0, ep.support_x, ep.support_y, cfg.inner_steps, opt, cfg.normalize
        )
        state.e_t_meta = reptile_update(state.e_t_meta, enc, cfg.meta_lr)
        state.phi_meta = reptile_update_trunk(phi0, phi, cfg.meta_lr)
        if log is not None:
            log.rows.append((it, float("nan"), losses[0]))


def _shared_train(access, state, cfg, seed, log, align: bool, target_labels: bool):
    opt = OptConfig("adam", cfg.cls_lr)
    for it in range(cfg.iterations):
        a_loss = float("nan")
        if align:
            a_loss = _align_step(access, state, cfg, it, seed, meta_align=False, tie_body=True)
        modalities = ["source"] + (["target"] if target_labels else [])
        for modality in modalities:
            ep = access.episode(modality, cfg.train_n_way, cfg.train_k_shot, derive_seed(seed, "shared", modality, it))
            phi = fresh_head(state.phi_meta, cfg.train_n_way, make_rng(seed, "head", modality, it))
            e_s, e_t = state.e_s_meta, state.e_t_meta
            st_s, st_t, st_p = opt.state(), opt.state(), opt.state()
            for _ in range(cfg.inner_steps):
                enc = e_s if modality == "source" else e_t
                loss, g_enc, g_phi = encoder_classify_loss(enc, phi, ep.support_x, ep.support_y, cfg.normalize)
                if modality == "source":
                    g_s, g_t = g_enc, e_t.zeros_like()
                else:
                    g_s, g_t = e_s.zeros_like(), g_enc
                e_s, e_t, st_s, st_t = _tied_step(e_s, e_t, g_s, g_t, st_s, st_t)
                phi, st_p = opt_step(phi, g_phi, st_p)
            state.e_s_meta = reptile_update(state.e_s_meta, e_s, cfg.meta_lr)
            state.e_t_meta = reptile_update(state.e_t_meta, e_t, cfg.meta_lr)
            state.phi_meta = reptile_update_trunk(state.phi_meta, phi, cfg.meta_lr)
        if log is not None:
            log.rows.append((it, a_loss, loss))


@dataclass(frozen=True)
class Strategy:
    kind: str
    use_target_labels: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}")
        if self.use_target_labels and not self.kind.startswith("shared"):
            raise ConfigError("use_target_labels is only available on shared-encoder strategies")

    @property
    def name(self) -> str:
        return self.kind + ("+target_labels" if self.use_target_labels else "")

    @property
    def policy(self) -> AccessPolicy:
        base = STRATEGY_POLICIES[self.kind]
        if self.use_target_labels:
            base = replace(base, target_labels=True)
        return base


STRATEGY_POLICIES = {
    "croma": AccessPolicy(),
    "align_classify": AccessPolicy(),
    "align_meta_classify": AccessPolicy(),
    "pretrain_finetune": AccessPolicy(source_labels=False, pairs=False, target_unlabeled=True),
    "unsup_meta_reconstruct": AccessPolicy(source_labels=False, pairs=False, target_unlabeled=True),
    "shared_encoder": AccessPolicy(pairs=False),
    "shared_encoder_align": AccessPolicy(),
    "oracle_within_modality": AccessPolicy(source_labels=False, pairs=False, target_labels=True),
}


def train_strategy(
    strategy: Strategy,
    world: ConceptWorld,
    cfg: MetaConfig,
    seed: int,
    access: WorldAccess | None = None,
    log: TrainLog | None = None,
) -> Learner:
    """Meta-train one strategy and return what meta-test needs."""
    access = access or WorldAccess(world, strategy.policy)
    kind = strategy.kind
    if kind == "croma":
        return Learner(croma_meta_train(world, cfg, seed, True, access, log), cfg.adapt_encoder, cfg.normalize)
    if kind == "align_meta_classify":
        return Learner(croma_meta_train(world, cfg, seed, False, access, log), cfg.adapt_encoder, cfg.normalize)
    if kind == "align_classify":
        state = init_meta_state(world, cfg, seed)
        for it in range(cfg.iterations):
            a_loss = _align_step(access, state, cfg, it, seed, meta_align=False)
            if log is not None:
                log.rows.append((it, a_loss, float("nan")))
        _supervised_source_classifier(access, state, cfg, seed, log)
        return Learner(state, cfg.adapt_encoder, cfg.normalize)
    if kind in ("pretrain_finetune", "unsup_meta_reconstruct"):
        state = init_meta_state(world, cfg, seed)
        _pretrain_reconstruct(access, state, cfg, seed, log, meta=kind == "unsup_meta_reconstruct")
        return Learner(state, True, cfg.normalize)
    if kind == "oracle_within_modality":
        state = init_meta_state(world, cfg, seed)
        _oracle_train(access, state, cfg, seed, log)
        return Learner(state, True, cfg.normalize)
    state = init_shared_state(world, cfg, seed)
    _shared_train(access, state, cfg, seed, log, align=kind == "shared_encoder_align",
                  target_labels=strategy.use_target_labels)
    return Learner(state, True, cfg.normalize)


@dataclass(frozen=True)
class EvalProtocol:
    n_eval_tasks: int = 8
    n_way: int = 5
    k_grid: tuple[int, ...] = (1, 5, 10)
    repeats: int = 10
    task_seed: int = 0

    def __post_init__(self):
        if min(self.n_eval_tasks, self.n_way, self.repeats) < 1 or not self.k_grid or min(self.k_grid) < 1:
            raise ConfigError("evaluation protocol fields must be positive")


def eval_tasks(world: ConceptWorld, protocol: EvalProtocol, k_shot: int) -> list[ClassificationTask]:
    """The fixed target-modality evaluation episodes for one shot count.

    Concepts and query sets depend only on ``(world, task_seed, task_id)``,
    so every strategy and every ``k`` sees the same tasks."""
    return [
        sample_episode(world, "target", protocol.n_way, k_shot, "test", derive_seed(protocol.task_seed, "eval", t))
        for t in range(protocol.n_eval_tasks)
    ]


def evaluate_learner(
    learner: Learner,
    world: ConceptWorld,
    protocol: EvalProtocol,
    cfg: MetaConfig,
    strategy: str,
    seed: int,
    repeat: int = 0,
    label_noise: float = 0.0,
) -> list[EpisodeResult]:
    out = []
    opt = OptConfig("adam", cfg.adapt_lr)
    for k in protocol.k_grid:
        for t, ep in enumerate(eval_tasks(world, protocol, k)):
            if label_noise > 0:
                noisy = corrupt_labels(ep, label_noise, derive_seed(seed, "eval-noise", k, t), seed=seed)
                ep = replace(noisy, query_y=ep.query_y)
            res = meta_test(learner, ep, cfg.adapt_steps, opt, strategy=strategy, seed=seed)
            res.repeat, res.task_id = repeat, t
            out.append(res)
    return out


def run_strategy(
    strategy: Strategy,
    world: ConceptWorld,
    protocol: EvalProtocol,
    seed: int,
    cfg: MetaConfig = MetaConfig(),
    label_noise: float = 0.0,
    accesses: list | None = None,
) -> list[EpisodeResult]:
    """Meta-train and evaluate ``protocol.repeats`` times with derived seeds."""
    results = []
    for r in range(protocol.repeats):
        run_seed = derive_seed(seed, "repeat", r)
        access = WorldAccess(world, strategy.policy, label_noise=label_noise, seed=run_seed)
        learner = train_strategy(strategy, world, cfg, run_seed, access)
        if accesses is not None:
            accesses.append(access)
        results.extend(evaluate_learner(learner, world, protocol, cfg, strategy.name, run_seed, r, label_noise))
    return results


# ---------------------------------------------------------------------------
# serialization


def save_state(state: MetaState | Learner, path) -> None:
    """Flat CSV weight dump: one row per scalar with its tensor, layer and index.

    Columns: ``tensor,layer,kind,row,col,value``. ``tensor`` is ``e_s``,
    ``e_t``, ``phi`` or ``meta``; ``kind`` is ``weight``, ``bias``,
    ``activation`` or a ``meta`` field name. Each layer's ``activation`` row
    is the shape manifest: the activation name in ``value`` and the weight
    shape in ``row``/``col``. A :class:`Learner` also records its meta-test
    flags.
    """
    learner = state if isinstance(state, Learner) else None
    state = learner.state if learner else state
    rows = [("meta", -1, "iteration", 0, 0, state.iteration)]
    if learner is not None:
        rows.append(("meta", -1, "adapt_encoder", 0, 0, learner.adapt_encoder))
        rows.append(("meta", -1, "normalize", 0, 0, learner.normalize))
    for name, p in (("e_s", state.e_s_meta), ("e_t", state.e_t_meta), ("phi", state.phi_meta)):
        for i, (w, b, act) in enumerate(zip(p.weights, p.biases, p.activations)):
            rows.append((name, i, "activation", w.shape[0], w.shape[1], act))
            rows.extend((name, i, "weight", r, c, w[r, c]) for r in range(w.shape[0]) for c in range(w.shape[1]))
            rows.extend((name, i, "bias", 0, c, b[0, c]) for c in range(b.shape[1]))
    csvio.write_csv(path, ["tensor", "layer", "kind", "row", "col", "value"], rows)


def _parse_state(path):
    header, rows = csvio.read_csv(path)
    if header != ["tensor", "layer", "kind", "row", "col", "value"]:
        raise ParseError(f"{path}:1: not a state dump (header {','.join(header)})")
    shapes: dict[str, dict[int, tuple[int, int, str]]] = {}
    values: dict[tuple[str, int, str], dict[tuple[int, int], float]] = {}
    meta: dict[str, str] = {}
    for line_no, (tensor, layer, kind, r, c, value) in enumerate(rows, start=2):
        try:
            if tensor == "meta":
                meta[kind] = value
            elif kind == "activation":
                shapes.setdefault(tensor, {})[int(layer)] = (int(r), int(c), value)
            else:
                values.setdefault((tensor, int(layer), kind), {})[(int(r), int(c))] = float(value)
        except ValueError as exc:
            raise ParseError(f"{path}:{line_no}: {exc}") from None
    params = {}
    for tensor, layers in shapes.items():
        ws, bs, acts = [], [], []
        for i in sorted(layers):
            out_d, in_d, act = layers[i]
            w = np.zeros((out_d, in_d))
            b = np.zeros((1, out_d))
            for (r, c), v in values.get((tensor, i, "weight"), {}).items():
                w[r, c] = v
            for (_, c), v in values.get((tensor, i, "bias"), {}).items():
                b[0, c] = v
            ws.append(w)
            bs.append(b)
            acts.append(act)
        params[tensor] = MlpParams(ws, bs, tuple(acts))
    missing = {"e_s", "e_t", "phi"} - set(params)
    if missing:
        raise ParseError(f"{path}: state dump lacks {sorted(missing)}")
    state = MetaState(params["e_s"], params["e_t"], params["phi"], int(float(meta.get("iteration", 0))))
    return state, meta


def load_state(path) -> MetaState:
    return _parse_state(path)[0]


def load_learner(path) -> Learner:
    """Inverse of ``save_state(learner, path)``; flags default to the
    :class:`Learner` defaults when absent."""
    state, meta = _parse_state(path)
    return Learner(state, meta.get("adapt_encoder", "false") == "true", meta.get("normalize", "true") == "true")
