"""Command-line experiment runner.

    crossmodal tradeoff       --config tradeoff.ini [--seed N] [--out DIR]
    crossmodal train          --config train.ini    [--seed N] [--out DIR]
    crossmodal evaluate       --config eval.ini     [--state metastate.csv]
    crossmodal retrieve       --config retr.ini     [--state metastate.csv]
    crossmodal plan           --graph graph.csv --source X --task Y [--out DIR]
    crossmodal sweep-setcount --config setcount.ini
    crossmodal default-config COMMAND

Exit codes: 0 success, 2 configuration or input error, 3 numeric error,
4 I/O error. Every output is a CSV written atomically; reruns with the same
config and seed are byte-identical.
"""
from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, csvio
from .alignment import OptConfig, align_inner_train
from .config import COMMAND_SECTIONS, ExperimentConfig, default_config_text, parse_config
from .errors import ConfigError, ContractViolation, GenerationError, NumericError, ParseError, PlanningError
from .metalearn import (
    Strategy,
    TrainLog,
    eval_tasks,
    evaluate_learner,
    init_meta_state,
    load_learner,
    run_strategy,
    save_state,
    train_strategy,
)
from .metrics import (
    aggregate_accuracy,
    episode_rows,
    retrieval_from_embeddings,
    retrieval_metrics,
    write_episodes_csv,
    write_summary_csv,
)
from .rng import derive_seed
from .synthworld import AlignmentTask, AlignSplit, gen_concept_world, sample_alignment_task

RETRIEVAL_COLUMNS = ("strategy", "k", "R@1", "R@5", "R@10", "Rank", "Cos")


def _out_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    return Path(override if override is not None else cfg["experiment"].out)


# ---------------------------------------------------------------------------
# tradeoff


def cmd_tradeoff(cfg: ExperimentConfig, out: Path) -> list[Path]:
    base = cfg["linear_world"]
    t = cfg["tradeoff"]
    seeds = [derive_seed(cfg.seed, "world", i) for i in range(t.n_seeds)]
    rows = analysis.tradeoff_sweep(base, t.n_align_grid, t.sigma_W_grid, seeds, t.mc_samples)

    pred_rows, preds = [], {}
    for sigma_W in t.sigma_W_grid:
        for n_align in t.n_align_grid:
            c = replace(base, sigma_W=sigma_W, n_align=n_align)
            p = analysis.predicted_errors(c)
            rule = analysis.choose_strategy(c)
            preds[(n_align, sigma_W)] = p
            pred_rows.append((n_align, sigma_W, p.err_source, p.err_target, p.err_align, p.err_crossmodal,
                              rule.lhs, rule.rhs, rule.choice))

    cells = defaultdict(list)
    for r in rows:
        cells[(r.n_align, r.sigma_W, r.method)].append(r.risk)
    predicted_for = {
        analysis.SUPERVISED_SOURCE: lambda p: p.err_source,
        analysis.SUPERVISED_TARGET: lambda p: p.err_target,
        analysis.CROSS_MODAL_ALIGNED: lambda p: p.err_crossmodal,
    }
    fig_rows = []
    for (n_align, sigma_W, method), vals in cells.items():
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")
        fig_rows.append((n_align, sigma_W, method, float(np.mean(vals)), std,
                         predicted_for[method](preds[(n_align, sigma_W)])))

    paths = [out / "predictions.csv", out / "measured.csv", out / "figure_syn_data.csv"]
    csvio.write_csv(paths[0], ["n_align", "sigma_W", "err_source", "err_target", "err_align",
                               "err_crossmodal", "rule_lhs", "rule_rhs", "choice"], pred_rows)
    csvio.write_csv(paths[1], ["n_align", "sigma_W", "seed", "method", "risk"],
                    [(r.n_align, r.sigma_W, r.seed, r.method, r.risk) for r in rows])
    csvio.write_csv(paths[2], ["n_align", "sigma_W", "method", "mean_risk", "std_risk", "predicted"], fig_rows)
    return paths


# ---------------------------------------------------------------------------
# train / evaluate


def cmd_train(cfg: ExperimentConfig, out: Path) -> list[Path]:
    world = gen_concept_world(cfg["concept_world"], cfg.seed)
    log = TrainLog()
    learner = train_strategy(Strategy(cfg["train"].strategy), world, cfg.meta(), cfg.seed, log=log)
    paths = [out / "metastate.csv", out / "training_log.csv"]
    save_state(learner, paths[0])
    log.to_csv(paths[1])
    return paths


def cmd_evaluate(cfg: ExperimentConfig, out: Path, state_path: str | None = None) -> list[Path]:
    """Evaluate a saved state, or train and evaluate every configured strategy."""
    world = gen_concept_world(cfg["concept_world"], cfg.seed)
    meta, protocol, p = cfg.meta(), cfg.protocol(), cfg["protocol"]
    learner = load_learner(state_path) if state_path else None

    def run(name: str, rate: float):
        if learner is not None:
            return evaluate_learner(learner, world, protocol, meta, "state", cfg.seed, 0, rate)
        return run_strategy(Strategy(name), world, protocol, cfg.seed, meta, label_noise=rate)

    names = ["state"] if learner is not None else list(p.strategies)
    results = [r for name in names for r in run(name, 0.0)]
    paths = [out / "episodes.csv", out / "summary.csv", out / "tasks.csv"]
    write_episodes_csv(paths[0], results)
    write_summary_csv(paths[1], aggregate_accuracy(results))
    csvio.write_csv(paths[2], ["k", "task_id", "fingerprint"], [
        (k, t, ep.fingerprint()) for k in protocol.k_grid for t, ep in enumerate(eval_tasks(world, protocol, k))
    ])

    if p.noise_rates:
        noise_rows, summary_rows = [], []
        for name in names:
            clean = [r for r in results if r.strategy == name]
            for rate in p.noise_rates:
                res = clean if rate == 0.0 else run(name, rate)
                noise_rows.extend((rate, *row) for row in episode_rows(res))
                summary_rows.append((name, rate, float(np.mean([r.accuracy for r in res]))))
        paths += [out / "noise.csv", out / "noise_summary.csv"]
        csvio.write_csv(paths[-2], ["rate", "strategy", "k", "seed", "task_id", "accuracy"], noise_rows)
        csvio.write_csv(paths[-1], ["strategy", "rate", "mean_accuracy"], summary_rows)
    return paths


# ---------------------------------------------------------------------------
# retrieve


def _strong_prefix(split: AlignSplit, n: int) -> AlignSplit:
    keep_s = split.xs_group < n
    keep_t = split.xt_group < n
    return AlignSplit(
        split.xs[keep_s], split.xt[keep_t], split.xs_group[keep_s], split.xt_group[keep_t],
        split.group_concept[:n], split.xs_index[keep_s], split.xt_index[keep_t],
        split.xs_latent[keep_s], split.xt_latent[keep_t],
    )


def cmd_retrieve(cfg: ExperimentConfig, out: Path, state_path: str | None = None) -> list[Path]:
    """Source-to-target retrieval on held-out strong pairs of the test concepts.

    For ``k > 0`` both encoders are first adapted on ``k`` further test-split
    pairs. Mode ``state`` also reports the untrained encoders as a baseline;
    mode ``identity`` embeds the source observations on both sides.
    """
    r, meta = cfg["retrieve"], cfg.meta()
    world = gen_concept_world(cfg["concept_world"], cfg.seed)
    n_test = len(world.splits["test"])
    task = sample_alignment_task(
        world, "strong", max(max(r.k_grid), 2), derive_seed(cfg.seed, "retrieve"), split="test",
        test_size=r.pool_size, concepts_per_task=n_test,
    )
    pool = task.test
    rows = []
    if r.mode == "identity":
        xs, _ = pool.pairs()
        rows.append(("identity", 0, *retrieval_from_embeddings(xs, xs).row()))
    else:
        if r.mode == "state" and not state_path:
            raise ConfigError("[retrieve] mode: 'state' needs --state PATH")
        init = init_meta_state(world, meta, cfg.seed)
        encoders = [("untrained", init.e_s_meta, init.e_t_meta)]
        if r.mode == "state":
            st = load_learner(state_path).state
            encoders.append(("state", st.e_s_meta, st.e_t_meta))
        for name, e_s, e_t in encoders:
            for k in r.k_grid:
                a_s, a_t = e_s, e_t
                if k > 0 and r.adapt_steps > 0:
                    shot = AlignmentTask("strong", _strong_prefix(task.train, k), pool, "test")
                    res = align_inner_train(e_s, e_t, shot, r.adapt_steps, OptConfig("adam", meta.align_lr),
                                            meta.loss, stream_id=k, seed=cfg.seed)
                    a_s, a_t = res.e_s, res.e_t
                rows.append((name, k, *retrieval_metrics(a_s, a_t, pool).row()))
    path = out / "retrieval.csv"
    csvio.write_csv(path, RETRIEVAL_COLUMNS, rows)
    return [path]


# ---------------------------------------------------------------------------
# plan / set count


def cmd_plan(graph_path: str, x_t: str, y_t: str, out: Path) -> tuple[analysis.PathPlan, list[Path]]:
    g = analysis.read_graph_csv(graph_path)
    plan = analysis.plan_path(g, x_t, y_t)
    path = out / "plan.csv"
    analysis.write_plan_csv(path, plan)
    return plan, [path]


def format_plan(plan: analysis.PathPlan) -> str:
    lines = ["path: " + " -> ".join(plan.vertices)]
    lines += [f"  {e.kind:8s} {e.src} -> {e.dst}  error {e.error:.6g}" for e in plan.path]
    lines.append(f"total_error: {plan.total_error:.6g}")
    lines.append("direct_error: " + ("none" if plan.direct_error is None else f"{plan.direct_error:.6g}"))
    return "\n".join(lines)


def cmd_sweep_setcount(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows = analysis.sweep_setcount(cfg["setcount"], cfg.seed)
    fits = analysis.fit_setcount_sweep(rows)
    paths = [out / "setcount.csv", out / "setcount_fit.csv"]
    csvio.write_csv(paths[0], ["N", "S", "seed", "error"], [(r.N, r.S, r.seed, r.error) for r in rows])
    fit_rows = [(f.N, f.c1, f.c2, f.s_star, f.s_best) for f in fits]
    if len(fits) >= 2 and all(np.isfinite(f.s_star) for f in fits):
        slope = analysis.scaling_slope([f.N for f in fits], [f.s_star for f in fits])
        fit_rows.append(("slope", "", "", slope, ""))
    csvio.write_csv(paths[1], ["N", "c1", "c2", "s_star", "s_best"], fit_rows)
    return paths


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossmodal", description="Cross-modal meta-alignment experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("tradeoff", "train", "evaluate", "retrieve", "sweep-setcount"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
        p.add_argument("--out", default=None, help="override [experiment] out")
        if name in ("evaluate", "retrieve"):
            p.add_argument("--state", default=None, help="metastate.csv written by 'train'")
    p = sub.add_parser("plan")
    p.add_argument("--graph", required=True, help="edge list CSV: kind,src,dst,error")
    p.add_argument("--source", required=True, help="target modality vertex")
    p.add_argument("--task", required=True, help="target task vertex")
    p.add_argument("--out", default="out")
    p = sub.add_parser("default-config")
    p.add_argument("for_command", choices=sorted(COMMAND_SECTIONS))
    return parser


def _load_config(args) -> ExperimentConfig:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text, args.command, source=args.config)
    if args.seed is not None:
        cfg.sections["experiment"] = replace(cfg["experiment"], seed=args.seed)
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(default_config_text(args.for_command))
        return 0
    if args.command == "plan":
        plan, paths = cmd_plan(args.graph, args.source, args.task, Path(args.out))
        print(format_plan(plan))
        return 0
    cfg = _load_config(args)
    out = _out_dir(cfg, args.out)
    if args.command == "tradeoff":
        paths = cmd_tradeoff(cfg, out)
    elif args.command == "train":
        paths = cmd_train(cfg, out)
    elif args.command == "evaluate":
        paths = cmd_evaluate(cfg, out, args.state)
    elif args.command == "retrieve":
        paths = cmd_retrieve(cfg, out, args.state)
    else:
        paths = cmd_sweep_setcount(cfg, out)
    for p in paths:
        print(p)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ConfigError, ParseError, PlanningError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, GenerationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
