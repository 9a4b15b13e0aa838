import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossmodal.errors import ConfigError, NumericError
from crossmodal.metalearn import EpisodeResult, EvalProtocol, Strategy, run_strategy
from crossmodal.metrics import (
    SUMMARY_HEADER,
    aggregate_accuracy,
    noise_sweep,
    retrieval_from_embeddings,
    retrieval_metrics,
    summary_rows,
    write_summary_csv,
)
from crossmodal.numkernel import MlpParams
from crossmodal.synthworld import sample_alignment_task


def results(accs, strategy="croma", k=5):
    return [EpisodeResult(strategy, k, a, 10, 0, task_id=i) for i, a in enumerate(accs)]


def test_aggregate_examples():
    s = aggregate_accuracy(results([1.0, 1.0, 1.0]))[("croma", 5)]
    assert (s.mean, s.std, s.n) == (1.0, 0.0, 3)
    s = aggregate_accuracy(results([0.4, 0.6]))[("croma", 5)]
    assert s.mean == pytest.approx(0.5) and s.std == pytest.approx(0.1414, abs=1e-4)


def test_single_result_has_nan_std():
    assert np.isnan(aggregate_accuracy(results([0.3]))[("croma", 5)].std)


def test_aggregate_keys_by_strategy_and_k():
    rows = results([0.2, 0.4], "a", 1) + results([0.6], "b", 5)
    assert sorted(aggregate_accuracy(rows)) == [("a", 1), ("b", 5)]


@given(accs=st.lists(st.floats(0, 1), min_size=2, max_size=30), seed=st.integers(0, 1000))
def test_aggregate_permutation_invariant(accs, seed):
    perm = np.random.default_rng(seed).permutation(len(accs))
    a = aggregate_accuracy(results(accs))[("croma", 5)]
    b = aggregate_accuracy(results([accs[i] for i in perm]))[("croma", 5)]
    assert a == b


def test_summary_csv(tmp_path):
    summary = aggregate_accuracy(results([0.4, 0.6]))
    write_summary_csv(tmp_path / "s.csv", summary)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ",".join(SUMMARY_HEADER) and lines[1].startswith("croma,5,0.5,")
    assert summary_rows(summary)[0][:2] == ("croma", 5)


# -- retrieval --------------------------------------------------------------


def test_identity_retrieval():
    e = np.random.default_rng(0).standard_normal((30, 8))
    rep = retrieval_from_embeddings(e, e)
    assert rep.recall_at == {1: 1.0, 5: 1.0, 10: 1.0}
    assert rep.median_rank == 1.0 and rep.cosine_loss == pytest.approx(0.0, abs=1e-15)


def test_random_retrieval_median_rank():
    medians = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        medians.append(retrieval_from_embeddings(rng.standard_normal((200, 16)),
                                                 rng.standard_normal((200, 16))).median_rank)
    assert abs(np.mean(medians) - 100) <= 15


@given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 100))
def test_retrieval_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((12, 4)), rng.standard_normal((12, 4))
    r1, r2 = retrieval_from_embeddings(a, b), retrieval_from_embeddings(scale * a, b)
    assert np.array_equal(r1.ranks, r2.ranks)


def test_recall_monotone_in_k():
    rng = np.random.default_rng(1)
    rep = retrieval_from_embeddings(rng.standard_normal((50, 4)), rng.standard_normal((50, 4)))
    assert rep.recall_at[1] <= rep.recall_at[5] <= rep.recall_at[10]


def test_ties_break_by_index():
    e = np.ones((4, 2))
    assert retrieval_from_embeddings(e, e).ranks.tolist() == [1, 2, 3, 4]


def test_zero_norm_names_sample():
    e = np.eye(3)
    z = e.copy()
    z[2] = 0
    with pytest.raises(NumericError, match="target sample 2"):
        retrieval_from_embeddings(e, z)
    with pytest.raises(ConfigError):
        retrieval_from_embeddings(e, e[:2])


def test_retrieval_metrics_on_split(small_world):
    task = sample_alignment_task(small_world, "strong", 10, 0)
    src = MlpParams([np.eye(small_world.config.source_dim)], [np.zeros((1, small_world.config.source_dim))],
                    ("identity",))
    rep = retrieval_metrics(src, src, (task.train.xs, task.train.xs))
    assert rep.recall_at[1] == 1.0


# -- noise ------------------------------------------------------------------


def test_noise_zero_matches_clean_run(small_world, quick_cfg):
    prot = EvalProtocol(n_eval_tasks=2, k_grid=(5,), repeats=2)
    clean = run_strategy(Strategy("croma"), small_world, prot, 0, quick_cfg)
    sweep = noise_sweep(Strategy("croma"), small_world, [0.0, 0.5], prot, 0, quick_cfg)
    assert list(sweep[0].results) == clean
    assert sweep[0].rate == 0.0 and sweep[1].rate == 0.5


def test_noise_sweep_matches_separate_runs(small_world, quick_cfg):
    prot = EvalProtocol(n_eval_tasks=2, k_grid=(5,), repeats=1)
    sweep = noise_sweep(Strategy("align_classify"), small_world, [0.4], prot, 0, quick_cfg)
    direct = run_strategy(Strategy("align_classify"), small_world, prot, 0, quick_cfg, label_noise=0.4)
    assert list(sweep[0].results) == direct


def test_noise_sweep_for_label_reading_strategy(small_world, quick_cfg):
    prot = EvalProtocol(n_eval_tasks=1, k_grid=(1,), repeats=1)
    pts = noise_sweep(Strategy("oracle_within_modality"), small_world, [0.0, 0.3], prot, 0, quick_cfg)
    assert len(pts) == 2 and all(0 <= p.mean_accuracy <= 1 for p in pts)


def test_near_total_noise_hurts(world, quick_cfg):
    prot = EvalProtocol(n_eval_tasks=8, k_grid=(5,), repeats=1)
    pts = noise_sweep(Strategy("align_classify"), world, [0.0, 0.95], prot, 0, quick_cfg)
    assert pts[1].mean_accuracy < pts[0].mean_accuracy


def test_noise_rate_validation(small_world, quick_cfg):
    with pytest.raises(ConfigError):
        noise_sweep(Strategy("croma"), small_world, [1.5], EvalProtocol(repeats=1), 0, quick_cfg)
