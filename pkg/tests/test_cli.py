import filecmp

import pytest

from crossmodal.cli import main
from crossmodal.config import default_config_text

SMALL = {
    "tradeoff": dict(linear_world={"d": 4, "n1": 30, "n2": 12},
                     tradeoff={"n_align_grid": (8, 16), "sigma_W_grid": (0.1,), "n_seeds": 2, "mc_samples": 1000}),
    "train": dict(meta={"iterations": 3, "hidden": 8, "embed_dim": 4, "cls_hidden": 8}),
    "evaluate": dict(meta={"iterations": 2, "hidden": 8, "embed_dim": 4, "cls_hidden": 8},
                     protocol={"n_eval_tasks": 2, "k_grid": (1, 5), "repeats": 1, "strategies": ("croma",),
                               "noise_rates": (0.0, 0.5)}),
    "retrieve": dict(meta={"hidden": 8, "embed_dim": 4, "cls_hidden": 8},
                     retrieve={"mode": "state", "k_grid": (0, 4), "pool_size": 20, "adapt_steps": 3}),
    "sweep-setcount": dict(setcount={"N_grid": (64, 256), "n_S": 4, "n_seeds": 2, "n_test": 200}),
}
GRAPH = "kind,src,dst,error\nalign,x_t,x_s,0.1\nclassify,x_s,y_s,0\ntaskrel,y_s,y_t,0.05\nclassify,x_t,y_t,0.5\n"


def write_config(tmp_path, command, **extra):
    overrides = {k: dict(v) for k, v in SMALL[command].items()}
    for sec, vals in extra.items():
        overrides.setdefault(sec, {}).update(vals)
    path = tmp_path / f"{command}.ini"
    path.write_text(default_config_text(command, **overrides))
    return str(path)


def trained_state(tmp_path):
    cfg = write_config(tmp_path, "train", meta={"hidden": 8, "embed_dim": 4, "cls_hidden": 8})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "state")]) == 0
    return str(tmp_path / "state" / "metastate.csv")


def assert_identical(a, b):
    names = sorted(p.name for p in a.iterdir())
    assert names and names == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


@pytest.mark.parametrize("command", ["tradeoff", "train", "sweep-setcount"])
def test_reruns_byte_identical(tmp_path, command):
    cfg = write_config(tmp_path, command)
    for run in ("a", "b"):
        assert main([command, "--config", cfg, "--out", str(tmp_path / run)]) == 0
    assert_identical(tmp_path / "a", tmp_path / "b")


@pytest.mark.parametrize("command", ["evaluate", "retrieve"])
def test_state_commands_byte_identical(tmp_path, command):
    state = trained_state(tmp_path)
    cfg = write_config(tmp_path, command)
    for run in ("a", "b"):
        assert main([command, "--config", cfg, "--state", state, "--out", str(tmp_path / run)]) == 0
    assert_identical(tmp_path / "a", tmp_path / "b")


def test_plan_byte_identical_and_printed(tmp_path, capsys):
    graph = tmp_path / "g.csv"
    graph.write_text(GRAPH)
    for run in ("a", "b"):
        assert main(["plan", "--graph", str(graph), "--source", "x_t", "--task", "y_t",
                     "--out", str(tmp_path / run)]) == 0
    assert_identical(tmp_path / "a", tmp_path / "b")
    out = capsys.readouterr().out
    assert "path: x_t -> x_s -> y_s -> y_t" in out and "total_error: 0.15" in out


def test_plan_direct_only(tmp_path, capsys):
    graph = tmp_path / "g.csv"
    graph.write_text("kind,src,dst,error\nclassify,x_t,y_t,0.3\n")
    assert main(["plan", "--graph", str(graph), "--source", "x_t", "--task", "y_t", "--out", str(tmp_path)]) == 0
    assert "path: x_t -> y_t" in capsys.readouterr().out


def test_plan_malformed_graph(tmp_path, capsys):
    graph = tmp_path / "g.csv"
    graph.write_text("kind,src,dst,error\nalign,a,b,zero\n")
    assert main(["plan", "--graph", str(graph), "--source", "a", "--task", "t", "--out", str(tmp_path)]) == 2
    assert "g.csv:2" in capsys.readouterr().err


def test_plan_unreachable(tmp_path):
    graph = tmp_path / "g.csv"
    graph.write_text("kind,src,dst,error\nclassify,a,t,0.1\nclassify,b,u,0.1\n")
    assert main(["plan", "--graph", str(graph), "--source", "a", "--task", "u", "--out", str(tmp_path)]) == 2


def test_train_zero_iterations_dumps_init(tmp_path):
    from crossmodal.metalearn import MetaConfig, init_meta_state, load_state
    from crossmodal.synthworld import ConceptWorldConfig, gen_concept_world

    cfg = write_config(tmp_path, "train", meta={"iterations": 0})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    expect = init_meta_state(gen_concept_world(ConceptWorldConfig(), 0),
                             MetaConfig(iterations=0, hidden=8, embed_dim=4, cls_hidden=8), 0)
    assert load_state(tmp_path / "o" / "metastate.csv").checksum() == expect.checksum()


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path, "tradeoff")
    main(["tradeoff", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["tradeoff", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "measured.csv").read_bytes() != (tmp_path / "b" / "measured.csv").read_bytes()


def test_evaluate_outputs(tmp_path):
    cfg = write_config(tmp_path, "evaluate")
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert names == {"episodes.csv", "summary.csv", "tasks.csv", "noise.csv", "noise_summary.csv"}
    summary = (tmp_path / "o" / "summary.csv").read_text().splitlines()
    assert summary[0] == "strategy,k,mean,std,n" and len(summary) == 3


def test_retrieve_identity_smoke(tmp_path):
    cfg = write_config(tmp_path, "retrieve", retrieve={"mode": "identity"})
    assert main(["retrieve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    header, row = (tmp_path / "o" / "retrieval.csv").read_text().splitlines()
    assert header == "strategy,k,R@1,R@5,R@10,Rank,Cos"
    assert row.split(",")[2] == "1"


def test_retrieve_state_mode_needs_state(tmp_path):
    cfg = write_config(tmp_path, "retrieve")
    assert main(["retrieve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(default_config_text("train").replace("iterations = 800\n", ""))
    assert main(["train", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "missing key 'iterations'" in capsys.readouterr().err


def test_missing_config_file_exit_code(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.ini")]) == 4


def test_default_config_command(capsys):
    assert main(["default-config", "train"]) == 0
    assert "[meta]" in capsys.readouterr().out
