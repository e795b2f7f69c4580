import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.core.geometry import mean, unit_square
from app.core.monotone import GraphKind, PerturbationKind
from app.schemas.config import GraphConfig, MeshConfig, OutputConfig, Problem, RunConfig, SolveConfig
from app.services.sources import ManufacturedStefan, build_initial, build_source
from app.utils.config_parser import RunConfigParser, load_config, load_config_file, render_config

EXAMPLE = """\
# demo run
experiment = run

[mesh]
size = 9
lumped = true

[solve]
problem = StefanLimit
dt = 0.01   # step
T = 1/4
m0 = 1.25

[graph]
kind = StefanPiecewiseLinear
k_s = 2
L = 1.5

[output]
dir = "runs/demo #1"
"""


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("true", True),
        ("False", False),
        ("33", 33),
        ("-4", -4),
        ("0.5", 0.5),
        ("1e-3", 1e-3),
        ("1/16", 0.0625),
        ("3 / 4", 0.75),
        ('"quoted # text"', "quoted # text"),
        ("CH  # trailing comment", "CH"),
    ],
)
def test_parse_value(raw, expected):
    value = RunConfigParser.parse_value(raw)
    assert value == expected
    assert type(value) is type(expected)


def test_parse_nests_graph_under_solve():
    data, lines = RunConfigParser.parse(EXAMPLE)
    assert data["solve"]["graph"] == {"kind": "StefanPiecewiseLinear", "k_s": 2, "L": 1.5}
    assert data["output"]["dir"] == "runs/demo #1"
    assert lines["graph.k_s"] == 16
    assert lines["solve.T"] == 11
    assert lines["experiment"] == 2


def test_load_example():
    config = load_config(EXAMPLE)
    assert config.mesh == MeshConfig(size=9, lumped=True)
    assert config.solve.problem == Problem.STEFAN_LIMIT
    assert config.solve.T == 0.25
    assert config.solve.graph.k_s == 2.0
    assert config.solve.graph_spec.L == 1.5
    assert config.solve.perturbation_spec.L == 1.5


def test_render_round_trip():
    default = RunConfig()
    assert load_config(render_config(default)) == default

    custom = RunConfig(
        mesh=MeshConfig(size=17, lumped=True),
        solve=SolveConfig(
            problem=Problem.CH,
            epsilon=1 / 8,
            dt=0.002,
            T=0.3,
            m0=-0.25,
            graph=GraphConfig(kind=GraphKind.STEFAN, k_s=0.7, k_l=1.3, L=0.9),
            perturbation={"kind": PerturbationKind.ZERO},
        ),
        output=OutputConfig(dir='out/"odd" name', field_stride=5),
    )
    assert load_config(render_config(custom)) == custom


def test_lambda_alias_is_rendered():
    config = RunConfig(solve=SolveConfig(problem=Problem.REGULARIZED_CH, lam=0.01))
    text = render_config(config)
    assert "lambda = 0.01" in text
    assert load_config(text).solve.lam == 0.01


def test_unknown_key_points_at_its_line():
    with pytest.raises(ConfigError) as info:
        load_config("[solve]\ndt = 0.01\nfoo = 1\n")
    assert info.value.key == "solve.foo"
    assert info.value.line == 3


def test_validator_message_points_at_the_key():
    text = "[solve]\nproblem = CH\nepsilon = 0.5\n"
    with pytest.raises(ConfigError) as info:
        load_config(text)
    assert info.value.key == "solve.epsilon"
    assert info.value.line == 3
    assert "(0, 1/4]" in str(info.value)


def test_graph_error_points_into_the_graph_section():
    text = "[solve]\nproblem = StefanLimit\n\n[graph]\nkind = Cubic\nk_s = -1\n"
    with pytest.raises(ConfigError) as info:
        load_config(text)
    assert info.value.key == "graph.k_s"
    assert info.value.line == 6


@pytest.mark.parametrize(
    "text",
    [
        "[physics]\nx = 1\n",
        "[solve]\njust words\n",
        "[solve]\n= 3\n",
        "[solve]\ndt = 0.1\ndt = 0.2\n",
    ],
)
def test_malformed_text(text):
    with pytest.raises(ConfigError):
        load_config(text)


def test_duplicate_key_reports_both_lines():
    with pytest.raises(ConfigError) as info:
        RunConfigParser.parse("[mesh]\nsize = 5\n\nsize = 9\n")
    assert info.value.line == 4
    assert "line 2" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.cfg")


def test_mms_source_needs_stefan_limit():
    config = load_config("[solve]\nproblem = CH\n\n[source]\npreset = mms\n")
    with pytest.raises(ConfigError):
        build_source(unit_square(3), config)


MMS_RUN = """\
[mesh]
size = 9

[solve]
problem = StefanLimit
m0 = 3.5

[graph]
L = 1.5

[source]
preset = mms

[initial]
preset = mms
"""


def test_mms_initial_is_the_manufactured_profile():
    mesh = unit_square(9)
    config = load_config(MMS_RUN)
    u0 = build_initial(mesh, config)
    exact = ManufacturedStefan(config.solve.graph_spec).exact(mesh, 0.0)

    # equal up to the constant that pins the discrete mean
    shift = u0.bulk - exact.bulk
    assert np.ptp(shift) < 1e-12
    assert abs(shift[0]) < 1e-2
    assert np.allclose(u0.boundary, u0.bulk[mesh.boundary_nodes])
    assert mean(mesh, u0) == pytest.approx(3.5, abs=1e-12)


def test_mms_initial_rejects_a_foreign_mean():
    config = load_config(MMS_RUN.replace("m0 = 3.5", "m0 = 0.5"))
    with pytest.raises(ConfigError) as info:
        build_initial(unit_square(5), config)
    assert info.value.key == "m0"


def test_mms_initial_needs_the_stefan_graph():
    text = "[solve]\nproblem = RegularizedCH\nlambda = 0.01\n\n[graph]\nkind = Cubic\n\n[initial]\npreset = mms\n"
    config = load_config(text)
    with pytest.raises(ConfigError):
        build_initial(unit_square(5), config)
