import numpy as np
import pytest

from app.core.errors import FormulaError
from app.formula import FALSE, TRUE, And, Compare, Not, cmp, conj, disj, eq, le, ne, neg, parse_formula


def test_compare_holds_against_constant_and_variable():
    """Test comparisons with an integer and with another variable on the right."""
    valuation = {"robotX": 1, "humanX": 2, "energy": 25}
    assert eq("energy", 25).holds(valuation)
    assert not eq("energy", 24).holds(valuation)
    assert ne("robotX", "humanX").holds(valuation)
    assert cmp("robotX", "<", "humanX").holds(valuation)
    assert cmp("energy", "≥", 25).holds(valuation)


def test_unknown_variable_raises():
    """Test that evaluating a formula over a missing variable raises FormulaError."""
    with pytest.raises(FormulaError, match="speed"):
        eq("speed", 1).holds({"energy": 3})
    with pytest.raises(FormulaError, match="Unknown variable"):
        eq("energy", 1).validate(["robotX"])


def test_conj_flattens_and_drops_true():
    """Test that conj/disj build flat nodes and simplify constants."""
    f = conj(eq("a", 1), conj(eq("b", 2), eq("c", 3)), TRUE)
    assert isinstance(f, And)
    assert len(f.parts) == 3
    assert conj() == TRUE
    assert conj(eq("a", 1)) == eq("a", 1)
    assert disj(FALSE, eq("a", 1)) == eq("a", 1)


def test_negation_flips_comparisons():
    """Test that negating a comparison flips its operator and double negation cancels."""
    assert neg(eq("serviceHuman", 1)) == ne("serviceHuman", 1)
    assert neg(le("serviceTimer", 3)) == Compare("serviceTimer", ">", 3)
    inner = conj(eq("a", 1), eq("b", 1))
    assert neg(neg(inner)) == inner
    assert isinstance(~inner, Not)
    assert neg(TRUE) == FALSE


def test_rendering_uses_prism_style():
    """Test the text form of compound formulas."""
    f = conj(eq("energy", 25), eq("tick", 0))
    assert str(f) == "energy=25 & tick=0"
    g = conj(disj(ne("robotX", "humanX"), ne("robotY", "humanY")), eq("tick", 0))
    assert str(g) == "(robotX!=humanX | robotY!=humanY) & tick=0"


def test_parse_formula_round_trip():
    """Test that parsing a rendered formula gives the same formula back."""
    text = "((serviceHuman=1 & serviceTimer=0) | serviceHuman=0) & energy=25 & tick=0"
    f = parse_formula(text)
    assert parse_formula(str(f)) == f
    assert f.holds({"serviceHuman": 1, "serviceTimer": 0, "energy": 25, "tick": 0})
    assert not f.holds({"serviceHuman": 1, "serviceTimer": 1, "energy": 25, "tick": 0})


def test_parse_formula_bare_variables_and_aliases():
    """Test boolean shorthand, unicode operators and '=='."""
    assert parse_formula("serviceHuman") == ne("serviceHuman", 0)
    assert parse_formula("!serviceHuman") == eq("serviceHuman", 0)
    assert parse_formula("energy ≤ 3 ∧ tick == 0") == conj(le("energy", 3), eq("tick", 0))
    assert parse_formula("true") == TRUE


@pytest.mark.parametrize("text", ["", "   ", "energy =", "(tick=0", "tick=0)", "tick=0 $", "& tick=0"])
def test_parse_formula_rejects_malformed_text(text):
    """Test that malformed formula text raises FormulaError."""
    with pytest.raises(FormulaError):
        parse_formula(text)


def test_mask_matches_holds():
    """Test that vectorised evaluation agrees with per-valuation evaluation."""
    rng = np.random.default_rng(7)
    table = rng.integers(0, 4, size=(50, 3))
    columns = {name: table[:, i] for i, name in enumerate(("x", "y", "z"))}
    f = parse_formula("(x<=y & !z=2) | x=3")
    mask = f.mask(columns, 50)
    expected = [f.holds({"x": int(r[0]), "y": int(r[1]), "z": int(r[2])}) for r in table]
    assert mask.tolist() == expected
