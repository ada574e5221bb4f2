import itertools
import operator
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from pubsdn.filter_expr import (
    And, Comparison, FieldPath, FilterExpression, MissingField, Not, Or, ParseError,
    TypeMismatch, evaluate, parse, print_canonical, referenced_fields,
)


def cmp(field, op, lit):
    return Comparison(FieldPath.of(field), op, lit)


# -- parse ---------------------------------------------------------------------

def test_single_comparison():
    assert parse("temperature > 50").root == cmp("temperature", ">", 50)


def test_and_binds_tighter_than_or():
    e = parse("a = 1 OR b = 2 AND c = 3")
    assert e == FilterExpression(Or(cmp("a", "=", 1), And(cmp("b", "=", 2), cmp("c", "=", 3))))


def test_not_binds_tighter_than_and():
    e = parse("NOT a = 1 AND b = 2")
    assert e == FilterExpression(And(Not(cmp("a", "=", 1)), cmp("b", "=", 2)))


def test_parentheses_override():
    e = parse("(a = 1 OR b = 2) AND c = 3")
    assert e == FilterExpression(And(Or(cmp("a", "=", 1), cmp("b", "=", 2)), cmp("c", "=", 3)))


def test_binary_operators_left_associative():
    e = parse("a = 1 OR b = 2 OR c = 3")
    assert e.root == Or(Or(cmp("a", "=", 1), cmp("b", "=", 2)), cmp("c", "=", 3))


def test_missing_literal_offset():
    with pytest.raises(ParseError) as err:
        parse("temperature >")
    assert err.value.offset == 14
    assert "integer" in err.value.expected


@pytest.mark.parametrize("text, offset", [
    ("", 1),
    ("a = ", 5),
    ("a = 1 AND", 10),
    ("(a = 1", 7),
    ("a = 1)", 6),
    ("a == 1", 4),
    ("a = 1 and b = 2", 7),
    ("a ! 1", 3),
])
def test_error_offsets(text, offset):
    with pytest.raises(ParseError) as err:
        parse(text)
    assert err.value.offset == offset


def test_offsets_count_bytes_not_characters():
    # 'é' is two bytes in UTF-8
    with pytest.raises(ParseError) as err:
        parse("s = 'é' AND")
    assert err.value.offset == 13


def test_literal_kinds():
    assert parse("x = 3").root.literal == 3
    assert parse("x = -3").root.literal == -3
    assert parse("x = 2.50").root.literal == Decimal("2.50")
    assert parse("x = 'it''s'").root.literal == "it's"


def test_keywords_are_case_sensitive():
    # lowercase "or" lexes as a field path and then needs an operator
    with pytest.raises(ParseError):
        parse("a = 1 or b = 2")


def test_int_and_decimal_literals_are_structurally_distinct():
    assert parse("x = 1") != parse("x = 1.0")
    assert parse("x = 1") == parse("x   =   1")


# -- evaluate ------------------------------------------------------------------

def test_threshold_examples():
    e = parse("temperature > 50")
    assert evaluate(e, {"temperature": 72}) is True
    assert evaluate(e, {"temperature": 50}) is False


def test_threshold_over_full_range():
    # values 0..100, filter keeps exactly those above the threshold
    e = parse("temperature > 50")
    kept = [v for v in range(101) if evaluate(e, {"temperature": v})]
    assert kept == list(range(51, 101))


def test_integer_promotes_against_decimal():
    assert evaluate(parse("t >= 20.5"), {"t": 21})
    assert not evaluate(parse("t >= 20.5"), {"t": 20})
    assert evaluate(parse("t = 3"), {"t": Decimal("3.0")})


def test_strings_support_equality_only():
    assert evaluate(parse("type = 'alert'"), {"type": "alert"})
    assert evaluate(parse("type <> 'alert'"), {"type": "info"})
    with pytest.raises(TypeMismatch):
        evaluate(parse("type < 'b'"), {"type": "a"})


def test_type_mismatch_between_string_and_number():
    with pytest.raises(TypeMismatch):
        evaluate(parse("t > 5"), {"t": "hot"})
    with pytest.raises(TypeMismatch):
        evaluate(parse("t = 'hot'"), {"t": 5})


def test_missing_field_is_an_error():
    with pytest.raises(MissingField):
        evaluate(parse("humidity > 1"), {"temperature": 3})


def test_evaluation_is_strict():
    # the right operand is inspected even when the left decides the result
    with pytest.raises(MissingField):
        evaluate(parse("a = 1 OR b = 2"), {"a": 1})
    with pytest.raises(MissingField):
        evaluate(parse("a = 1 AND b = 2"), {"a": 0})


def test_dotted_paths_flat_and_nested():
    e = parse("x.y = 'k'")
    assert evaluate(e, {"x.y": "k"})
    assert evaluate(e, {"x": {"y": "k"}})
    with pytest.raises(MissingField):
        evaluate(e, {"x": {"z": "k"}})


# -- referenced_fields / print_canonical ---------------------------------------

@pytest.mark.parametrize("text, fields", [
    ("temperature > 50", {"temperature"}),
    ("a=1 AND a=2", {"a"}),
    ("x.y = 'k' OR z < 3", {"x.y", "z"}),
])
def test_referenced_fields(text, fields):
    assert {str(f) for f in referenced_fields(parse(text))} == fields


@pytest.mark.parametrize("root, text", [
    (cmp("t", ">", 50), "(t > 50)"),
    (Or(cmp("a", "=", 1), cmp("b", "=", 2)), "((a = 1) OR (b = 2))"),
    (Not(cmp("a", "=", 1)), "(NOT (a = 1))"),
    (cmp("s", "=", "o'k"), "(s = 'o''k')"),
    (cmp("d", "<", Decimal("2.5")), "(d < 2.5)"),
])
def test_canonical_text(root, text):
    assert print_canonical(FilterExpression(root)) == text


def test_field_path_rejects_bad_segments():
    with pytest.raises(ValueError):
        FieldPath.of("a..b")
    with pytest.raises(ValueError):
        FieldPath.of("1a")


# -- properties ----------------------------------------------------------------

KEYWORDS = {"AND", "OR", "NOT"}
ident = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True).filter(
    lambda s: s not in KEYWORDS)
paths = st.lists(ident, min_size=1, max_size=3).map(".".join)
literals = st.one_of(
    st.integers(-10**6, 10**6),
    st.decimals(min_value=-1000, max_value=1000, places=3, allow_nan=False,
                allow_infinity=False),
    st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=8),
)
leaves = st.builds(lambda p, op, lit: cmp(p, op, lit), paths,
                   st.sampled_from(["=", "<>", "<", "<=", ">", ">="]), literals)
trees = st.recursive(
    leaves,
    lambda sub: st.one_of(st.builds(And, sub, sub), st.builds(Or, sub, sub),
                          st.builds(Not, sub)),
    max_leaves=12,
)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_canonical_round_trip(root):
    e = FilterExpression(root)
    again = parse(print_canonical(e))
    assert again == e
    assert print_canonical(again) == print_canonical(e)


# Truth-table oracle: each generated tree comes with a Python predicate built
# from the same random choices, never from the parser.
PY_OPS = {"=": operator.eq, "<>": operator.ne, "<": operator.lt, "<=": operator.le,
          ">": operator.gt, ">=": operator.ge}


@st.composite
def bool_formula(draw, depth=0):
    kind = draw(st.sampled_from(["cmp", "cmp", "and", "or", "not"] if depth < 4 else ["cmp"]))
    if kind == "cmp":
        f = draw(st.sampled_from("abc"))
        op = draw(st.sampled_from(sorted(PY_OPS)))
        k = draw(st.integers(-1, 2))
        return f"{f} {op} {k}", (lambda env, f=f, op=op, k=k: PY_OPS[op](env[f], k))
    if kind == "not":
        text, fn = draw(bool_formula(depth + 1))
        return f"NOT ({text})", (lambda env: not fn(env))
    lt, lf = draw(bool_formula(depth + 1))
    rt, rf = draw(bool_formula(depth + 1))
    if kind == "and":
        return f"({lt}) AND ({rt})", (lambda env: lf(env) and rf(env))
    return f"({lt}) OR ({rt})", (lambda env: lf(env) or rf(env))


@settings(max_examples=300, deadline=None)
@given(bool_formula())
def test_agrees_with_truth_table(formula):
    text, oracle = formula
    e = parse(text)
    for bits in itertools.product((0, 1), repeat=3):
        env = dict(zip("abc", bits))
        assert evaluate(e, env) == oracle(env), (text, env)


@settings(max_examples=100, deadline=None)
@given(st.integers(-500, 500))
def test_monotone_threshold_sweep(k):
    e = parse(f"f > {k}")
    for v in range(k - 3, k + 4):
        assert evaluate(e, {"f": v}) == (v > k)
