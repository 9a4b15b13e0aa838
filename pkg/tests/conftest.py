import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crossmodal.metalearn import MetaConfig
from crossmodal.synthworld import ConceptWorldConfig, gen_concept_world

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def world():
    return gen_concept_world(ConceptWorldConfig(), 0)


@pytest.fixture(scope="session")
def small_world():
    cfg = ConceptWorldConfig(n_concepts=25, latent_dim=4, source_dim=6, target_dim=5, nuisance_dim=2,
                             pool_size=40, n_classification=25, query_per_class=5)
    return gen_concept_world(cfg, 3)


@pytest.fixture
def quick_cfg():
    return MetaConfig(iterations=5, hidden=8, embed_dim=4, cls_hidden=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance report: one line per criterion, printed after the run

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """``record(criterion, part, ok, detail)`` for the end-of-run report."""
    store = request.config.stash[_ACCEPTANCE]

    def record(criterion: int, part: str, ok: bool, detail: str) -> None:
        store.setdefault(criterion, {})[part] = (bool(ok), detail)
        print(f"criterion {criterion}{part}: {'PASS' if ok else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(store):
        parts = store[criterion]
        ok = all(p[0] for p in parts.values())
        detail = "; ".join(f"{name + ' ' if name else ''}{'PASS' if p[0] else 'FAIL'}: {p[1]}"
                           for name, p in sorted(parts.items()))
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} [{detail}]")
