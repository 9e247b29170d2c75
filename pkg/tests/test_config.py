import numpy as np
import pytest

from mvlevy import Ball, Box, Polyhedron
from mvlevy.config import (ConfigError, build_problem, git_blob_hash, load, manifest_text,
                           parse_text)

BASE = """
run.T = 1.0
run.dt = 0.1
run.seed = 1
task.name = limit
"""


def test_defaults_filled():
    cfg = parse_text(BASE)
    assert cfg["problem.dim"] == 1
    assert cfg["output.dir"] == "out"
    assert cfg["run.epsilon"] == (0.1,)


def test_comments_and_blank_lines():
    cfg = parse_text("# header\n\n" + BASE + "problem.x0 = 0.5  # trailing\n")
    assert cfg["problem.x0"] == (0.5,)


@pytest.mark.parametrize("text, needle", [
    (BASE + "problem.dimm = 2\n", "unknown key"),
    (BASE.replace("run.seed = 1\n", ""), "run.seed"),
    (BASE.replace("run.dt = 0.1", "run.dt = 0.3"), "does not divide"),
    (BASE + "run.T = 2.0\n", "given twice"),
    (BASE + "problem.domain = sphere\n", "problem.domain"),
    (BASE + "run.replicas = many\n", "run.replicas"),
    (BASE + "no equals sign\n", "line"),
    (BASE.replace("task.name = limit", "task.name = rate") + "task.control_cells = 3\n", "control_cells"),
    (BASE + "problem.domain = box\n", "domain"),
])
def test_invalid_configs(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_text(text)


def test_missing_control_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(BASE.replace("limit", "skeleton-ldp") + "task.phi_file = nowhere.csv\n")
    with pytest.raises(ConfigError, match="nowhere.csv"):
        load(p)


def test_canonical_text_roundtrip():
    cfg = parse_text(BASE + "problem.x0 = 0.25\nproblem.diffusion_sigma = 1.5\nrun.epsilon = 0.5, 0.25\n")
    again = parse_text(cfg.canonical_text())
    assert again.values == cfg.values
    assert again.canonical_text() == cfg.canonical_text()


def test_with_overrides():
    cfg = parse_text(BASE).with_overrides(**{"output.dir": "elsewhere"})
    assert cfg["output.dir"] == "elsewhere"


def test_build_domains():
    box = build_problem(parse_text(BASE + "problem.dim = 2\nproblem.domain = box\nproblem.domain_lo = -1\n"
                                          "problem.domain_hi = 1\nproblem.x0 = 0\n"))
    assert isinstance(box.domain, Box) and box.dim == 2
    ball = build_problem(parse_text(BASE + "problem.domain = ball\nproblem.domain_center = 0\n"
                                           "problem.domain_radius = 2\n"))
    assert isinstance(ball.domain, Ball)
    poly = build_problem(parse_text(BASE + "problem.dim = 2\nproblem.domain = polyhedron\n"
                                           "problem.domain_normals = 1, 0; 0, 1\nproblem.domain_offsets = 1, 1\n"
                                           "problem.domain_interior = 0, 0\nproblem.x0 = 0, 0\n"))
    assert isinstance(poly.domain, Polyhedron)


def test_build_x0_outside_domain_is_config_error():
    with pytest.raises(ConfigError):
        build_problem(parse_text(BASE + "problem.domain = ball\nproblem.domain_center = 0\n"
                                        "problem.domain_radius = 1\nproblem.x0 = 3\n"))


def test_build_jump_problem():
    pb = build_problem(parse_text(BASE + "problem.jump = jump_kernel\nproblem.marks = interval\n"
                                         "problem.marks_nodes = 4\n"))
    assert pb.has_jumps and pb.jump_model.n_marks == 4


def test_git_blob_hash_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_manifest_reparses(tmp_path):
    cfg = parse_text(BASE)
    text = manifest_text(cfg, {}, {"a.csv": "0" * 40})
    assert text.startswith("#")
    assert parse_text(text).values == cfg.values
    assert "# output a.csv" in text


def test_matrix_values():
    cfg = parse_text(BASE + "problem.dim = 2\nproblem.drift = linear\nproblem.drift_A = 1, 2; 3, 4\n"
                            "problem.drift_B = 0, 0; 0, 0\nproblem.drift_c = 0, 0\nproblem.x0 = 0, 0\n")
    pb = build_problem(cfg)
    assert np.array_equal(pb.coeffs.drift.A, [[1.0, 2.0], [3.0, 4.0]])
