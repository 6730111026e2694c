import textwrap

import pytest

from skelsim.config import check_ratio_bounded, make_function, parse_config, parse_text
from skelsim.errors import ConfigError
from skelsim.mechanism import LevyKernel


def cfg(s):
    return parse_text(textwrap.dedent(s))


def test_minimal():
    c = cfg("""
        [run]
        card = inward-ou-quadratic
        T = 2
        times = 0.5, 1 2
        [functions]
        f1 = indicator -1 1
        f2 = phi
    """)
    assert c.T == 2.0 and tuple(c.snapshot_times) == (0.5, 1.0, 2.0)
    assert [f.name for f in c.functions] == ["f1", "f2"]
    assert c.echo()["card"] == "inward-ou-quadratic"


def test_motion_and_mechanism_keys():
    c = cfg("""
        [mechanism]
        beta = 2
        pi.family = tempered-power-law
        pi.a = 0.5
        pi.c = 0.3
        [motion]
        kind = ou-inward
        dt = 0.02
        [run]
        T = 1
    """)
    assert c.card_name == "inward-ou-quadratic" and c.dt == 0.02
    assert isinstance(c.params["pi"], LevyKernel) and c.params["beta"] == 2.0
    assert c.card.mech.pi.describe()


@pytest.mark.parametrize("text, line", [
    ("[run]\ncard = inward-ou-quadratic\n[motion]\ndt = -0.1\n", 4),
    ("[run]\ncard = inward-ou-quadratic\nT = 0\n", 3),
    ("[run]\ncard = inward-ou-quadratic\n[bogus]\n", 3),
    ("[run]\ncard = inward-ou-quadratic\nfoo = 1\n", 3),
    ("[run]\ncard = inward-ou-quadratic\ncard = wright-fisher\n", 3),
    ("[run]\ncard = inward-ou-quadratic\nreplicas = 2.5\n", 3),
    ("[run]\ncard = inward-ou-quadratic\ntimes = 2 1\n", 3),
    ("[run]\ncard = inward-ou-quadratic\n[functions]\nf = poly 0 0 1\n", 4),
    ("[run]\ncard = inward-ou-quadratic\n[functions]\nf = wobble 1\n", 4),
    ("[run]\ncard = wright-fisher\n[motion]\nkind = ou-inward\n", 4),
    ("[mechanism]\npi.family = gamma\n[run]\ncard = inward-ou-quadratic\n", 2),
    ("[mechanism]\npi.modulation = linear\n[run]\ncard = inward-ou-quadratic\n", 2),
    ("just text\n", 1),
])
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError) as ei:
        parse_text(text)
    assert ei.value.line == line
    assert f"line {line}" in str(ei.value)


def test_missing_card_and_bad_card():
    with pytest.raises(ConfigError, match="missing"):
        parse_text("[run]\nT = 1\n")
    with pytest.raises(ConfigError, match="cannot build"):
        parse_text("[run]\ncard = no-such-card\n")


def test_quadratic_function_rejected_message():
    with pytest.raises(ConfigError, match="f/phi bounded"):
        parse_text("[run]\ncard = inward-ou-quadratic\n[functions]\nsq = poly 0 0 1\n")


def test_ratio_check_on_cards(quad):
    assert check_ratio_bounded(make_function("gaussian-bump 1"), quad)
    assert check_ratio_bounded(make_function("constant 2"), quad)
    assert not check_ratio_bounded(make_function("poly 0 1"), quad)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.ini")
    p = tmp_path / "ok.ini"
    p.write_text("[run]\ncard = wright-fisher\n")
    assert parse_config(p).card_name == "wright-fisher"
