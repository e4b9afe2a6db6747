import pytest

from fracpx.config import ConfigError, bundled_config_text, function_from_config, load_config, parse_config


def test_bundled_configs_load():
    for name in ("default", "negative_control", "resolution_sweep"):
        cfg = load_config(name)
        assert cfg.grid().size == 33
    assert load_config("negative_control").get("nonlinearity", "kind") == "zero"
    assert load_config("resolution_sweep").get("suite", "sweep_nodes") == [17, 33, 65]


def test_defaults_fill_missing_sections():
    cfg = parse_config("[run]\nseed = 4\n")
    assert cfg.seed == 4
    assert cfg.pair_exponent().p_plus == 2.0
    assert cfg.get("suite", "subspace_n") == [1, 2, 3]


def test_two_dimensional_domain_and_inline_comment():
    cfg = parse_config("[domain]\nintervals = 0, 1; -1, 1  # a rectangle\n[grid]\nnodes = 9, 5\n"
                       "[exponent.p]\nkind = example\np0 = 1.8\nR = 3\ns = 0.4\n")
    g = cfg.grid()
    assert g.dim == 2 and g.size == 45
    assert cfg.pair_exponent().name == "example"


@pytest.mark.parametrize("text,line,fragment", [
    ("seed = 1\n", 1, "section"),
    ("[run]\nseed = 1\n[bogus]\nx = 1\n", 3, "unknown section"),
    ("[run]\n\nspeed = 3\n", 3, "unknown key"),
    ("[grid]\nnodes = many\n", 2, "bad value"),
    ("[grid]\nnodes = 1000\n", 2, "nodes must lie"),
    ("[solver]\nproblem = fancy\n", 2, "must be one of"),
    ("[exponent.p]\nkind = constant\nvalue = 0.9\ns = 0.5\n", 1, "exponent"),
    ("[exponent.q]\nkind = wavy\nvalue = 2\n", 2, "unknown exponent kind"),
    ("[exponent.p]\nkind = example\ns = 0.5\n", 1, "needs 'p0'"),
    ("[cutoff]\nbeta = lots\n", 2, "beta"),
    ("[run]\nseed = 1\n[run]\nseed = 2\n", 3, "duplicate section"),
    ("[run]\nseed = 1\nseed = 2\n", 3, "duplicate key"),
])
def test_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text, source="bad.ini")
    assert info.value.line == line
    assert str(info.value).startswith(f"bad.ini:{line}: ")
    assert fragment in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")


def test_function_from_config():
    cfg = parse_config(bundled_config_text() + "\n")
    u = function_from_config(cfg, cfg.grid())
    assert u.values[-1] == pytest.approx(1.0)
    cfg = parse_config("[function]\nkind = random\nseed = 3\n")
    u = function_from_config(cfg, cfg.grid())
    assert u.values[0] == 0.0 and u.values[-1] == 0.0
