"""Closed-form estimators, the linear-world risk tradeoff, set-count scaling and
the modality-task graph planner.

Linear world notation: source inputs ``x1 = W x2``, labels ``y_m = u_m^T x_m +
noise``, alignment pairs ``x1 = W x2 + eta``. Risks are excess risks, so the
irreducible label noise is never counted.
"""
from __future__ import annotations

import heapq
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.cluster.vq import kmeans2, vq
from scipy.optimize import nnls

from . import csvio
from .errors import ConfigError, ParseError, PlanningError
from .numkernel import as_mat
from .rng import make_rng
from .synthworld import LinearDatasets, LinearWorld, LinearWorldConfig, gen_linear_world

SUPERVISED_SOURCE = "SupervisedSource"
SUPERVISED_TARGET = "SupervisedTarget"
CROSS_MODAL_ALIGNED = "CrossModalAligned"
RISK_METHODS = (SUPERVISED_SOURCE, SUPERVISED_TARGET, CROSS_MODAL_ALIGNED)


class RankDeficientWarning(UserWarning):
    """Normal equations were singular; a pseudo-inverse solution was returned."""


# ---------------------------------------------------------------------------
# estimators


def ols_fit(X, Y, ridge: float = 1e-8) -> np.ndarray:
    """Minimize ``||X B - Y||^2 + ridge ||B||^2`` over ``B`` (shape ``d x m``).

    Solves the normal equations ``(X^T X + ridge I) B = X^T Y`` with a
    symmetric positive-definite solver. If that system is singular (only
    possible with ``ridge == 0`` and rank-deficient ``X``, or under severe
    ill-conditioning) the minimum-norm least-squares solution ``pinv(X) Y``
    is returned instead and a :class:`RankDeficientWarning` is issued. This is
    the ``ridge -> 0+`` limit of the ridge solution.

    A 1-D ``Y`` gives a 1-D result.
    """
    X = as_mat(X) if np.ndim(X) != 1 else np.asarray(X, dtype=np.float64)[:, None]
    vector = np.ndim(Y) == 1
    Y = np.asarray(Y, dtype=np.float64)
    Y = Y[:, None] if vector else Y
    if X.shape[0] < 1:
        raise ConfigError("ols_fit needs at least one row")
    if Y.shape[0] != X.shape[0]:
        raise ConfigError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if ridge < 0 or not np.isfinite(ridge):
        raise ConfigError("ridge must be finite and >= 0")
    d = X.shape[1]
    A = X.T @ X + ridge * np.eye(d)
    rhs = X.T @ Y
    B = None
    if ridge > 0 or np.linalg.matrix_rank(X) == d:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                B = scipy.linalg.solve(A, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
            B = None
    if B is None:
        warnings.warn(
            f"normal equations singular (n={X.shape[0]}, d={d}, ridge={ridge}); using pseudo-inverse",
            RankDeficientWarning,
            stacklevel=2,
        )
        B = np.linalg.pinv(X) @ Y
    return B[:, 0] if vector else B


def ridge_objective(X, Y, B, ridge: float) -> float:
    R = as_mat(X) @ np.asarray(B) - np.asarray(Y)
    return float(np.sum(R * R) + ridge * np.sum(np.asarray(B) ** 2))


def fit_alignment_matrix(pairs, ridge: float = 1e-8) -> np.ndarray:
    """Estimate ``W`` in ``x1 = W x2 + eta`` by regressing ``x1`` on ``x2``.

    ``pairs`` is a :class:`LinearDatasets` (its alignment pairs are used) or a
    tuple ``(x1, x2)``.
    """
    if isinstance(pairs, LinearDatasets):
        x1, x2 = pairs.align_x1, pairs.align_x2
    else:
        x1, x2 = pairs
    return ols_fit(x2, x1, ridge).T


# ---------------------------------------------------------------------------
# closed-form predictions


def _linear_cfg(cfg) -> LinearWorldConfig:
    if isinstance(cfg, LinearWorld):
        return cfg.config
    if isinstance(cfg, LinearWorldConfig):
        return cfg
    if isinstance(cfg, dict):
        return LinearWorldConfig(**cfg)
    raise ConfigError(f"expected a linear world config, got {type(cfg).__name__}")


@dataclass(frozen=True)
class ErrorPrediction:
    err_source: float
    err_target: float
    err_align: float

    @property
    def err_crossmodal(self) -> float:
        return self.err_align + self.err_source


def predicted_errors(cfg) -> ErrorPrediction:
    """``d s^2/n1``, ``d s^2/n2`` and ``d^2 s_W^2/n_align``.

    The cross-modal error is ``err_align + err_source``. The
    alignment term carries ``d^2`` here but ``d`` in :func:`choose_strategy`;
    both follow the published expressions as written.
    """
    c = _linear_cfg(cfg)
    d, s2, sw2 = c.d, c.sigma ** 2, c.sigma_W ** 2
    return ErrorPrediction(d * s2 / c.n1, d * s2 / c.n2, d * d * sw2 / c.n_align)


@dataclass(frozen=True)
class StrategyChoice:
    choice: str
    lhs: float
    rhs: float


def choose_strategy(cfg) -> StrategyChoice:
    """Rule of thumb: cross-modal when ``d s_W^2/n_align + s^2/n1 < s^2/n2``.

    Equality goes to ``Supervised``.
    """
    c = _linear_cfg(cfg)
    lhs = c.d * c.sigma_W ** 2 / c.n_align + c.sigma ** 2 / c.n1
    rhs = c.sigma ** 2 / c.n2
    return StrategyChoice("CrossModal" if lhs < rhs else "Supervised", lhs, rhs)


# ---------------------------------------------------------------------------
# Monte-Carlo risk


def fitted_weights(world: LinearWorld, data: LinearDatasets, method: str, ridge: float = 1e-8) -> np.ndarray:
    """Effective linear predictor for the method, in the method's input space.

    ``SupervisedSource`` acts on ``x1``; the other two act on ``x2``.
    """
    if method == SUPERVISED_SOURCE:
        return ols_fit(data.x1, data.y1, ridge)
    if method == SUPERVISED_TARGET:
        return ols_fit(data.x2, data.y2, ridge)
    if method == CROSS_MODAL_ALIGNED:
        w1 = ols_fit(data.x1, data.y1, ridge)
        W_hat = fit_alignment_matrix(data, ridge)
        return W_hat.T @ w1
    raise ConfigError(f"unknown method {method!r}; expected one of {RISK_METHODS}")


def measure_risk(
    world: LinearWorld,
    data: LinearDatasets,
    method: str,
    mc_samples: int = 4000,
    stream_id: int = 0,
    ridge: float = 1e-8,
) -> float:
    """Excess squared-error risk of ``method`` on fresh inputs.

    The method's predictor is fitted on ``data``; the risk is averaged over
    ``mc_samples`` fresh ``x2 ~ N(0, I)`` draws (mapped through ``W`` for the
    source task). The draws depend only on ``stream_id``, so all methods are
    scored on the same inputs.
    """
    if mc_samples < 1000:
        raise ConfigError("mc_samples must be >= 1000")
    w = fitted_weights(world, data, method, ridge)
    z = make_rng(0, "risk", stream_id).standard_normal((mc_samples, world.d))
    if method == SUPERVISED_SOURCE:
        x = z @ world.W.T
        diff = x @ (w - world.u1)
    else:
        diff = z @ (w - world.u2)
    return float(np.mean(diff * diff))


@dataclass(frozen=True)
class RiskRow:
    n_align: int
    sigma_W: float
    seed: int
    method: str
    risk: float


def tradeoff_sweep(
    base: LinearWorldConfig,
    n_align_grid,
    sigma_W_grid,
    seeds,
    mc_samples: int = 4000,
    methods=RISK_METHODS,
) -> list[RiskRow]:
    """Measured risk for every ``(n_align, sigma_W, seed, method)``.

    The world seed is the same across grid points, so curves are paired.
    """
    rows = []
    for sigma_W in sigma_W_grid:
        for n_align in n_align_grid:
            cfg = LinearWorldConfig(base.d, base.sigma, sigma_W, base.n1, base.n2, n_align)
            for seed in seeds:
                world, data = gen_linear_world(cfg, seed)
                for method in methods:
                    risk = measure_risk(world, data, method, mc_samples, stream_id=seed)
                    rows.append(RiskRow(n_align, sigma_W, seed, method, risk))
    return rows


# ---------------------------------------------------------------------------
# weak-alignment set counts


def optimal_set_count(N: float, c1: float, c2: float) -> float:
    """``S* = sqrt(c1 N / c2)``, the minimizer of ``c1/S + c2 S/N``."""
    if min(N, c1, c2) <= 0:
        raise ConfigError("N, c1 and c2 must be positive")
    return math.sqrt(c1 * N / c2)


def weak_alignment_preferred(S: int, N_t: int, c_s: float, c_t: float) -> bool:
    """``c_s/S < c_t/N_t``; equality is False."""
    if S < 1 or N_t < 1:
        raise ConfigError("S and N_t must be >= 1")
    if c_s <= 0 or c_t <= 0:
        raise ConfigError("c_s and c_t must be positive")
    return c_s * N_t < c_t * S


@dataclass(frozen=True)
class SetCountConfig:
    """Weak alignment by clustering: ``N`` unlabeled source points are grouped
    into ``S`` sets by k-means, each set's target is estimated by the mean of
    its noisy targets, and a test point is mapped to its set's estimate.

    Coarse sets have large within-set spread (error ~ 1/S); fine sets average
    few noisy targets (error ~ S/N).
    """

    N_grid: tuple[int, ...] = (200, 800, 3200)
    n_S: int = 14
    n_seeds: int = 10
    dim: int = 2
    noise: float = 0.5
    n_test: int = 2000

    def __post_init__(self):
        if not self.N_grid or min(self.N_grid) < 8:
            raise ConfigError("every N must be >= 8")
        if self.n_S < 3 or self.n_seeds < 1 or self.dim < 1 or self.n_test < 1:
            raise ConfigError("n_S >= 3, n_seeds, dim and n_test >= 1 required")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")

    def s_grid(self, N: int) -> np.ndarray:
        """Geometric grid of set counts from 2 to N/8."""
        return np.unique(np.round(np.geomspace(2, N // 8, self.n_S)).astype(int))


def _target_map(dim: int) -> np.ndarray:
    return make_rng(0, "setcount", "map").standard_normal((dim, dim)) / math.sqrt(dim)


def set_count_error(N: int, S: int, seed: int, cfg: SetCountConfig = SetCountConfig()) -> float:
    """Mean squared error of the set-mean predictor for one ``(N, S, seed)``."""
    if not 1 <= S <= N:
        raise ConfigError(f"need 1 <= S <= N, got S={S}, N={N}")
    A = _target_map(cfg.dim)
    rng = make_rng(seed, "setcount", N)
    x = rng.uniform(size=(N, cfg.dim))
    t = x @ A.T + cfg.noise * rng.standard_normal((N, cfg.dim))
    x_test = rng.uniform(size=(cfg.n_test, cfg.dim))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        centers, labels = kmeans2(x, S, minit="++", seed=make_rng(seed, "kmeans", N, S))
    counts = np.bincount(labels, minlength=S)
    sums = np.zeros((S, cfg.dim))
    np.add.at(sums, labels, t)
    est = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], t.mean(axis=0))
    nearest, _ = vq(x_test, centers)
    err = est[nearest] - x_test @ A.T
    return float(np.mean(np.sum(err * err, axis=1)))


@dataclass(frozen=True)
class SetCountRow:
    N: int
    S: int
    seed: int
    error: float


def sweep_setcount(cfg: SetCountConfig = SetCountConfig(), seed: int = 0) -> list[SetCountRow]:
    rows = []
    for N in cfg.N_grid:
        for S in cfg.s_grid(N):
            for r in range(cfg.n_seeds):
                rows.append(SetCountRow(N, int(S), r, set_count_error(N, int(S), seed * 1_000_003 + r, cfg)))
    return rows


def fit_set_constants(S, error, N: float) -> tuple[float, float]:
    """Non-negative least-squares fit of ``error ~ c1/S + c2 S/N``."""
    S = np.asarray(S, dtype=np.float64)
    design = np.column_stack([1.0 / S, S / N])
    (c1, c2), _ = nnls(design, np.asarray(error, dtype=np.float64))
    return float(c1), float(c2)


@dataclass(frozen=True)
class SetCountFit:
    N: int
    c1: float
    c2: float
    s_star: float
    s_best: int


def fit_setcount_sweep(rows: list[SetCountRow]) -> list[SetCountFit]:
    """Per-``N`` constants, fitted ``S*`` and the grid point with least mean error."""
    out = []
    for N in sorted({r.N for r in rows}):
        cell = [r for r in rows if r.N == N]
        S_vals = sorted({r.S for r in cell})
        means = [np.mean([r.error for r in cell if r.S == s]) for s in S_vals]
        c1, c2 = fit_set_constants(S_vals, means, N)
        s_star = optimal_set_count(N, c1, c2) if c1 > 0 and c2 > 0 else float("nan")
        out.append(SetCountFit(N, c1, c2, s_star, int(S_vals[int(np.argmin(means))])))
    return out


def scaling_slope(N, s_star) -> float:
    """Slope of ``log S*`` against ``log N``."""
    return float(np.polyfit(np.log(np.asarray(N, float)), np.log(np.asarray(s_star, float)), 1)[0])


# ---------------------------------------------------------------------------
# modality-task graph

EDGE_KINDS = ("classify", "align", "taskrel")


@dataclass(frozen=True)
class Edge:
    kind: str
    src: str
    dst: str
    error: float


@dataclass
class ModalityTaskGraph:
    """Bipartite modality/task graph with non-negative error weights.

    ``classify`` edges run modality -> task; ``align`` (modality-modality)
    and ``taskrel`` (task-task) edges are traversable both ways. Between any
    ordered vertex pair only the lowest-error edge is kept for planning.
    """

    modalities: set[str] = field(default_factory=set)
    tasks: set[str] = field(default_factory=set)
    edges: list[Edge] = field(default_factory=list)

    def add_edge(self, kind: str, src: str, dst: str, error: float) -> None:
        if kind not in EDGE_KINDS:
            raise ConfigError(f"unknown edge kind {kind!r}")
        error = float(error)
        if not np.isfinite(error) or error < 0:
            raise ConfigError(f"edge {src}->{dst}: error must be finite and >= 0, got {error}")
        if src == dst:
            raise ConfigError(f"self-loop on {src!r}")
        roles = {"classify": ("m", "t"), "align": ("m", "m"), "taskrel": ("t", "t")}[kind]
        for name, role in zip((src, dst), roles):
            own, other = (self.modalities, self.tasks) if role == "m" else (self.tasks, self.modalities)
            if name in other:
                raise ConfigError(f"vertex {name!r} used as both modality and task")
            own.add(name)
        self.edges.append(Edge(kind, src, dst, error))

    def adjacency(self) -> dict[str, dict[str, Edge]]:
        adj: dict[str, dict[str, Edge]] = {v: {} for v in self.modalities | self.tasks}
        for e in self.edges:
            arcs = [(e.src, e.dst)] if e.kind == "classify" else [(e.src, e.dst), (e.dst, e.src)]
            for a, b in arcs:
                old = adj[a].get(b)
                if old is None or e.error < old.error:
                    adj[a][b] = Edge(e.kind, a, b, e.error)
        return adj

    def visibility_violations(self, low_error: float) -> list[str]:
        """Vertices breaking minimum visibility at threshold ``low_error``.

        Every modality needs an outgoing classify edge and every task an
        incoming edge with error at most ``low_error``.
        """
        ok_m = {e.src for e in self.edges if e.kind == "classify" and e.error <= low_error}
        ok_t = {e.dst for e in self.edges if e.kind == "classify" and e.error <= low_error}
        ok_t |= {v for e in self.edges if e.kind == "taskrel" and e.error <= low_error for v in (e.src, e.dst)}
        return sorted(self.modalities - ok_m) + sorted(self.tasks - ok_t)


@dataclass(frozen=True)
class PathPlan:
    path: tuple[Edge, ...]
    total_error: float
    direct_error: float | None

    @property
    def vertices(self) -> tuple[str, ...]:
        return (self.path[0].src,) + tuple(e.dst for e in self.path)


def _check_endpoints(g: ModalityTaskGraph, x_t: str, y_t: str) -> None:
    if x_t not in g.modalities:
        raise PlanningError(f"{x_t!r} is not a modality vertex")
    if y_t not in g.tasks:
        raise PlanningError(f"{y_t!r} is not a task vertex")


def _plan_from(g, adj, vertices, x_t, y_t) -> PathPlan:
    path = tuple(adj[a][b] for a, b in zip(vertices[:-1], vertices[1:]))
    total = 0.0
    for e in path:
        total += e.error
    direct = adj[x_t].get(y_t)
    return PathPlan(path, total, None if direct is None else direct.error)


def plan_path(g: ModalityTaskGraph, x_t: str, y_t: str) -> PathPlan:
    """Lowest-total-error path from modality ``x_t`` to task ``y_t``.

    Dijkstra over labels ``(total, n_edges, vertex sequence)``: ties in total
    error go to fewer edges, then to the lexicographically smaller vertex
    sequence. All three components only grow along a path, so the search is
    exact and the result is always a simple path.
    """
    _check_endpoints(g, x_t, y_t)
    adj = g.adjacency()
    best: dict[str, tuple] = {}
    heap = [(0.0, 0, (x_t,))]
    while heap:
        cost, n, seq = heapq.heappop(heap)
        v = seq[-1]
        if v in best:
            continue
        best[v] = (cost, n, seq)
        if v == y_t:
            return _plan_from(g, adj, seq, x_t, y_t)
        for w, e in adj[v].items():
            if w not in best:
                heapq.heappush(heap, (cost + e.error, n + 1, seq + (w,)))
    raise PlanningError(f"task {y_t!r} is unreachable from {x_t!r}")


def simple_paths(g: ModalityTaskGraph, x_t: str, y_t: str):
    """Every simple vertex path from ``x_t`` to ``y_t`` (depth-first)."""
    adj = g.adjacency()

    def walk(seq):
        v = seq[-1]
        if v == y_t:
            yield seq
            return
        for w in sorted(adj[v]):
            if w not in seq:
                yield from walk(seq + (w,))

    yield from walk((x_t,))


def brute_force_plan(g: ModalityTaskGraph, x_t: str, y_t: str) -> PathPlan:
    """Reference planner: exhaustive enumeration with the same tie rules."""
    _check_endpoints(g, x_t, y_t)
    adj = g.adjacency()
    best = None
    for seq in simple_paths(g, x_t, y_t):
        cost = 0.0
        for a, b in zip(seq[:-1], seq[1:]):
            cost += adj[a][b].error
        key = (cost, len(seq) - 1, seq)
        if best is None or key < best:
            best = key
    if best is None:
        raise PlanningError(f"task {y_t!r} is unreachable from {x_t!r}")
    return _plan_from(g, adj, best[2], x_t, y_t)


def read_graph_csv(path) -> ModalityTaskGraph:
    """Parse a ``kind,src,dst,error`` edge list."""
    header, rows = csvio.read_csv(path)
    if header != ["kind", "src", "dst", "error"]:
        raise ParseError(f"{path}:1: expected header kind,src,dst,error, got {','.join(header)}")
    g = ModalityTaskGraph()
    for line_no, (kind, src, dst, err) in enumerate(rows, start=2):
        try:
            g.add_edge(kind.strip(), src.strip(), dst.strip(), float(err))
        except (ValueError, ConfigError) as exc:
            raise ParseError(f"{path}:{line_no}: {exc}") from None
    return g


def write_plan_csv(path, plan: PathPlan) -> None:
    rows = [(i, e.kind, e.src, e.dst, e.error) for i, e in enumerate(plan.path)]
    direct = "" if plan.direct_error is None else plan.direct_error
    rows.append(("total", "", "", "", plan.total_error))
    rows.append(("direct", "classify", plan.path[0].src, plan.path[-1].dst, direct))
    csvio.write_csv(path, ["step", "kind", "src", "dst", "error"], rows)


def random_graph(rng: np.random.Generator, n_vertices: int, p_edge: float = 0.5, zero_prob: float = 0.1):
    """Random modality/task graph for property tests; errors are rounded so ties occur."""
    if n_vertices < 2:
        raise ConfigError("need at least two vertices")
    n_m = int(rng.integers(1, n_vertices))
    mods = [f"m{i}" for i in range(n_m)]
    tasks = [f"t{i}" for i in range(n_vertices - n_m)]
    g = ModalityTaskGraph(set(mods), set(tasks))

    def weight():
        return 0.0 if rng.uniform() < zero_prob else float(np.round(rng.uniform(0, 1), 1))

    for kind, pairs in (
        ("classify", itertools.product(mods, tasks)),
        ("align", itertools.combinations(mods, 2)),
        ("taskrel", itertools.combinations(tasks, 2)),
    ):
        for a, b in pairs:
            if rng.uniform() < p_edge:
                g.add_edge(kind, a, b, weight())
    return g


# ---------------------------------------------------------------------------
# discrete strong-alignment world


@dataclass(frozen=True)
class DiscreteWorld:
    """Finite source symbols ``0..n-1`` with labels, and a bijection ``pairing``
    onto target symbols (strong alignment)."""

    labels: np.ndarray
    pairing: np.ndarray
    n_classes: int

    @property
    def n_symbols(self) -> int:
        return len(self.labels)


def gen_discrete_world(n_symbols: int, n_classes: int, seed: int) -> DiscreteWorld:
    if n_symbols < 1 or n_classes < 1:
        raise ConfigError("n_symbols and n_classes must be >= 1")
    rng = make_rng(seed, "discrete")
    return DiscreteWorld(rng.integers(0, n_classes, n_symbols), rng.permutation(n_symbols), n_classes)


def compose_strong_alignment(pairs, source_labeled) -> dict[int, int]:
    """Target-symbol classifier: invert the observed pairing, then look up the
    majority source label (ties to the smaller label)."""
    inverse: dict[int, int] = {}
    for s, t in pairs:
        if inverse.setdefault(int(t), int(s)) != int(s):
            raise ConfigError(f"target symbol {t} paired with two source symbols")
    votes: dict[int, dict[int, int]] = {}
    for s, y in source_labeled:
        counts = votes.setdefault(int(s), {})
        counts[int(y)] = counts.get(int(y), 0) + 1
    table = {s: min(c, key=lambda y: (-c[y], y)) for s, c in votes.items()}
    return {t: table[s] for t, s in inverse.items() if s in table}


def discrete_test_error(world: DiscreteWorld, classifier: dict[int, int]) -> float:
    """Fraction of target symbols the classifier mislabels (missing = wrong)."""
    wrong = 0
    for s in range(world.n_symbols):
        t = int(world.pairing[s])
        if classifier.get(t) != int(world.labels[s]):
            wrong += 1
    return wrong / world.n_symbols
