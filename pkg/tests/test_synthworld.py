import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossmodal import synthworld as sw
from crossmodal.errors import ConfigError, GenerationError
from crossmodal.synthworld import (
    ConceptWorldConfig,
    LinearWorldConfig,
    corrupt_labels,
    gen_concept_world,
    gen_linear_world,
    read_linear_bundle,
    sample_alignment_task,
    sample_episode,
    split_counts,
    write_linear_bundle,
)

# -- linear world -----------------------------------------------------------


def test_linear_dataset_sizes():
    _, data = gen_linear_world(LinearWorldConfig(d=20, n1=250, n2=40, n_align=70), 0)
    assert (len(data.y1), len(data.y2), len(data.align_x1)) == (250, 40, 70)
    assert data.x1.shape == (250, 20) and data.align_x2.shape == (70, 20)


def test_noiseless_linear_world_is_exact():
    world, data = gen_linear_world(LinearWorldConfig(d=6, sigma=0.0, sigma_W=0.0), 4)
    assert np.array_equal(data.y1, data.x1 @ world.u1)
    assert np.array_equal(data.align_x1, data.align_x2 @ world.W.T)


def test_teacher_consistency():
    world, data = gen_linear_world(LinearWorldConfig(d=8), 1)
    x2 = np.random.default_rng(0).standard_normal((30, 8))
    assert np.allclose((x2 @ world.W.T) @ world.u1, x2 @ world.u2, atol=1e-12)
    assert world.cond <= sw.MAX_COND


def test_linear_world_deterministic():
    a = gen_linear_world(LinearWorldConfig(), 9)[1]
    b = gen_linear_world(LinearWorldConfig(), 9)[1]
    for name in ("x1", "y1", "x2", "y2", "align_x1", "align_x2"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_growing_n_align_appends_rows():
    small = gen_linear_world(LinearWorldConfig(n_align=30), 2)[1]
    big = gen_linear_world(LinearWorldConfig(n_align=80), 2)[1]
    assert np.array_equal(small.align_x1, big.align_x1[:30])


def test_degenerate_transform_raises(monkeypatch):
    monkeypatch.setattr(sw, "MAX_COND", 0.5)
    with pytest.raises(GenerationError):
        gen_linear_world(LinearWorldConfig(d=3), 0)


@pytest.mark.parametrize("bad", [dict(d=0), dict(n1=0), dict(sigma=-1.0), dict(sigma_W=-0.1)])
def test_linear_config_validation(bad):
    with pytest.raises(ConfigError):
        LinearWorldConfig(**bad)


def test_linear_bundle_round_trip(tmp_path):
    world, data = gen_linear_world(LinearWorldConfig(d=4, n1=10, n2=6, n_align=5), 0)
    write_linear_bundle(tmp_path, world, data)
    w2, d2 = read_linear_bundle(tmp_path)
    assert np.array_equal(w2.W, world.W) and np.array_equal(d2.align_x1, data.align_x1)
    assert np.array_equal(d2.y2, data.y2)


# -- concept world ----------------------------------------------------------


def test_split_arithmetic():
    assert split_counts(30, (0.6, 0.2, 0.2)) == (18, 6, 6)


def test_splits_disjoint_and_cover(world):
    ids = np.concatenate([world.splits[s] for s in sw.SPLITS])
    assert sorted(ids.tolist()) == list(range(world.config.n_concepts))


def test_too_few_concepts_rejected():
    with pytest.raises(ConfigError):
        ConceptWorldConfig(n_concepts=14, n_way=5)


def test_centers_unit_norm(world):
    assert np.allclose(np.linalg.norm(world.centers, axis=1), 1.0)


def test_zero_spread_collapses_to_center_image():
    w = gen_concept_world(ConceptWorldConfig(concept_std=0.0, nuisance_dim=0), 1)
    xs = w.observe("source", np.zeros(10, int), np.arange(10))
    assert np.allclose(xs, w.centers[0] @ w.A_s.T, atol=1e-12)


def test_concept_world_deterministic():
    a, b = gen_concept_world(ConceptWorldConfig(), 7), gen_concept_world(ConceptWorldConfig(), 7)
    assert a.centers.tobytes() == b.centers.tobytes() and a.A_t.tobytes() == b.A_t.tobytes()
    assert a.latents.tobytes() == b.latents.tobytes()


def test_target_view_bounded(world):
    xt = world.observe("target", np.arange(5), np.arange(5))
    assert np.all(np.abs(xt) < 1.0)


# -- episodes ---------------------------------------------------------------


def test_one_shot_episode(world):
    ep = sample_episode(world, "target", 5, 1, "test", 0)
    assert ep.support_x.shape == (5, world.config.target_dim)
    assert sorted(ep.support_y.tolist()) == [0, 1, 2, 3, 4]


@pytest.mark.parametrize("k", [1, 5, 10])
def test_shot_grid_supported(world, k):
    ep = sample_episode(world, "source", 5, k, "train", 3)
    assert len(ep.support_y) == 5 * k
    assert np.array_equal(np.bincount(ep.support_y), np.full(5, k))


def test_episode_deterministic(world):
    a = sample_episode(world, "target", 5, 5, "test", 11)
    b = sample_episode(world, "target", 5, 5, "test", 11)
    assert a.fingerprint() == b.fingerprint() and a.query_x.tobytes() == b.query_x.tobytes()


@given(stream=st.integers(0, 10_000), k=st.integers(1, 20))
def test_support_query_disjoint(world, stream, k):
    ep = sample_episode(world, "target", 5, k, "train", stream)
    for c in range(5):
        s = ep.support_index[ep.support_y == c]
        q = ep.query_index[ep.query_y == c]
        assert not set(s) & set(q)
    assert len(set(ep.concepts.tolist())) == 5
    assert set(ep.concepts.tolist()) <= set(world.splits["train"].tolist())


def test_queries_shared_across_shots(world):
    eps = [sample_episode(world, "target", 5, k, "test", 2) for k in (1, 5, 10)]
    assert all(np.array_equal(eps[0].query_x, e.query_x) for e in eps)
    assert np.array_equal(eps[1].concepts, eps[2].concepts)


def test_split_too_small(world):
    with pytest.raises(ConfigError):
        sample_episode(world, "target", 9, 1, "test", 0)


# -- alignment tasks --------------------------------------------------------


def test_strong_pairs_share_latent(world):
    task = sample_alignment_task(world, "strong", 10, 0)
    assert len(task.train.xs) == 10
    assert np.array_equal(task.train.xs_latent, task.train.xt_latent)
    assert np.allclose(task.train.xs, world.render("source", task.train.xs_latent))


def test_strong_pairs_one_to_one(world):
    task = sample_alignment_task(world, "strong", 12, 1)
    assert sorted(task.train.xs_group.tolist()) == list(range(12))
    assert np.array_equal(task.train.xs_group, task.train.xt_group)


def test_weak_sets_share_concept_only(world):
    task = sample_alignment_task(world, "weak", 4, 2, set_size=3)
    tr = task.train
    assert tr.n_groups == 4
    for g in range(4):
        assert np.sum(tr.xs_group == g) == 3 and np.sum(tr.xt_group == g) == 3
    assert not np.array_equal(tr.xs_latent, tr.xt_latent)
    assert len(set(task.concepts.tolist())) == len(task.concepts)


def test_weak_singletons_behave_like_strong_sampling(world):
    task = sample_alignment_task(world, "weak", 3, 4, set_size=1)
    assert len(task.train.xs) == len(task.train.xt) == 3
    assert np.array_equal(task.train.xs_group, np.arange(3))


@pytest.mark.parametrize("mode", ["strong", "weak"])
def test_alignment_pool_disjoint_from_classification(world, mode):
    task = sample_alignment_task(world, mode, 4, 5)
    lo = world.config.n_classification
    for split in (task.train, task.test):
        assert split.xs_index.min() >= lo and split.xt_index.min() >= lo


def test_alignment_size_validation(world):
    with pytest.raises(ConfigError):
        sample_alignment_task(world, "strong", 1, 0)


# -- label noise ------------------------------------------------------------


def test_zero_noise_unchanged(world):
    ep = sample_episode(world, "target", 5, 5, "test", 0)
    assert corrupt_labels(ep, 0.0, 1) is ep


def test_full_noise_two_way_flips_all(world):
    ep = sample_episode(world, "target", 2, 10, "test", 0)
    noisy = corrupt_labels(ep, 1.0, 1)
    assert np.array_equal(noisy.support_y, 1 - ep.support_y)
    assert np.array_equal(noisy.query_y, 1 - ep.query_y)


def test_noise_rate_monte_carlo(world):
    flipped = total = 0
    for s in range(80):
        ep = sample_episode(world, "target", 5, 10, "train", s)
        noisy = corrupt_labels(ep, 0.3, s)
        for a, b in ((ep.support_y, noisy.support_y), (ep.query_y, noisy.query_y)):
            flipped += int(np.sum(a != b))
            total += len(a)
    assert total >= 10_000
    assert abs(flipped / total - 0.3) < 0.05


def test_noise_targets_other_labels_uniformly(world):
    ep = sample_episode(world, "target", 5, 10, "train", 0)
    counts = np.zeros(5)
    for s in range(300):
        noisy = corrupt_labels(ep, 1.0, s)
        assert not np.any(noisy.query_y == ep.query_y)
        counts += np.bincount((noisy.query_y - ep.query_y) % 5, minlength=5)
    assert counts[0] == 0
    assert np.all(np.abs(counts[1:] / counts[1:].sum() - 0.25) < 0.02)


@pytest.mark.parametrize("rate", [-0.1, 1.1])
def test_noise_rate_range(world, rate):
    with pytest.raises(ConfigError):
        corrupt_labels(sample_episode(world, "target", 5, 1, "test", 0), rate, 0)
