import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from price_audit.config import GENERIC_CRITERIA, AttributeMode
from price_audit.errors import ConfigError, GatewayError, ParseError
from price_audit.llm_gateway import MOCK_TABLE_ATTRIBUTES
from price_audit.types import AttributeComparison
from price_audit.utility_agent import (
    bootstrap_static_table,
    build_utility_prompt,
    compare_pair,
    net_utility,
    parse_comparisons,
    recompute_net_utility,
)


def _mice(make_product):
    target = make_product("t", "Glide Gaming Mouse", 150.0, brand="Glide", quantity="1", dpi="1600", buttons="6", weight="90 g")
    neighbor = make_product("n", "Glide Gaming Mouse Pro", 100.0, brand="Glide", quantity="1", dpi="3200", buttons="8", weight="90 g")
    return target, neighbor


def test_net_utility_examples() -> None:
    cs = [AttributeComparison("a", "better"), AttributeComparison("b", "better"), AttributeComparison("c", "worse")]
    assert net_utility(cs, weighted=False) == 1
    weighted = [AttributeComparison("a", "better", 3), AttributeComparison("b", "worse", 1)]
    assert net_utility(weighted, weighted=True) == 2
    assert net_utility([AttributeComparison("a", "mixed", 3)], weighted=True) == 0
    assert net_utility([], weighted=False) == 0


def test_generic_mode_prompt_lists_criteria(make_product) -> None:
    target, neighbor = _mice(make_product)
    req = build_utility_prompt(AttributeMode(), target, neighbor)
    for criterion in GENERIC_CRITERIA:
        assert criterion in req.system_prompt
    assert req.payload["mode"]["mode"] == "generic"


def test_static_mode_compares_only_table_attributes(mock_gateway, make_product) -> None:
    target, neighbor = _mice(make_product)
    mode = AttributeMode(mode="static", static_table={"computer mice": ["brand", "quantity", "dpi"]})
    req = build_utility_prompt(mode, target, neighbor)
    assert "NO selection or substitution" in req.system_prompt
    assert "dpi" in req.system_prompt

    report = compare_pair(mock_gateway, mode, target, neighbor)
    assert [c.attribute for c in report.comparisons] == ["brand", "quantity", "dpi"]
    assert report.net_utility == 1
    assert report.mode["static_categories"] == ["computer mice"]


def test_static_mode_without_category_entry(make_product) -> None:
    target, neighbor = _mice(make_product)
    mode = AttributeMode(mode="static", static_table={"keyboards": ["brand"]})
    with pytest.raises(ConfigError):
        build_utility_prompt(mode, target, neighbor)


def test_dynamic_mode_selects_top_n(mock_gateway, make_product) -> None:
    target, neighbor = _mice(make_product)
    report = compare_pair(mock_gateway, AttributeMode(mode="dynamic", top_n=3), target, neighbor)
    assert [c.attribute for c in report.comparisons] == ["brand", "quantity", "buttons"]
    assert report.net_utility == 1
    assert not report.weighted


def test_weighted_dynamic_uses_weights(mock_gateway, make_product) -> None:
    target, neighbor = _mice(make_product)
    report = compare_pair(mock_gateway, AttributeMode(mode="weighted_dynamic"), target, neighbor)
    # dpi and buttons better at weight 2 each; the rest same.
    assert report.net_utility == 4
    assert report.weighted
    assert recompute_net_utility(report) == report.net_utility


def test_degenerate_report_is_valid(mock_gateway, make_product) -> None:
    target = make_product("t", "Glide Gaming Mouse", 150.0, dpi="1600")
    neighbor = make_product("n", "Glide Gaming Mouse Pro", 100.0, color="black")
    report = compare_pair(mock_gateway, AttributeMode(), target, neighbor)
    assert report.valid
    assert report.degenerate
    assert report.net_utility == 0


def test_unparsable_reply_marks_report_invalid(scripted_gateway, make_product) -> None:
    target, neighbor = _mice(make_product)
    gateway = scripted_gateway(["no idea", '{"comparisons": "all better"}'])
    report = compare_pair(gateway, AttributeMode(), target, neighbor)
    assert not report.valid
    assert report.error.startswith("parse-failure")
    assert len(report.usage) == 2


def test_parse_comparisons_validates_and_clamps() -> None:
    got = parse_comparisons(
        {
            "comparisons": [
                {"attribute": "dpi", "verdict": "better", "weight": 7},
                {"attribute": "brand", "verdict": "same", "weight": "heavy"},
            ]
        }
    )
    assert got[0].verdict == "better"
    assert got[0].weight == 3
    assert got[1].weight == 1
    with pytest.raises(ParseError):
        parse_comparisons({"comparisons": [{"attribute": "dpi", "verdict": "superior"}]})
    with pytest.raises(ParseError):
        parse_comparisons({"comparisons": [{"attribute": "dpi", "verdict": "Better"}]})
    with pytest.raises(ParseError):
        parse_comparisons({"items": []})


def test_bootstrap_static_table(mock_gateway, scripted_gateway) -> None:
    table = bootstrap_static_table(mock_gateway, ["mice", "lamps", "mice"])
    assert sorted(table) == ["lamps", "mice"]
    assert table["mice"] == MOCK_TABLE_ATTRIBUTES

    failing = scripted_gateway([GatewayError("HTTP 500 fatal")])
    fallback = bootstrap_static_table(failing, ["mice"])
    assert fallback["mice"][: len(GENERIC_CRITERIA)] == list(GENERIC_CRITERIA)
    assert "brand" in fallback["mice"]


def test_custom_reply_weights_are_read(scripted_gateway, make_product) -> None:
    target, neighbor = _mice(make_product)
    reply = json.dumps({"comparisons": [{"attribute": "dpi", "verdict": "better", "weight": 3, "analysis": "x"}]})
    report = compare_pair(scripted_gateway([reply]), AttributeMode(mode="weighted_dynamic"), target, neighbor)
    assert report.net_utility == 3


comparisons = st.lists(
    st.builds(
        AttributeComparison,
        attribute=st.sampled_from(["brand", "quantity", "dpi", "size", "color"]),
        verdict=st.sampled_from(["better", "worse", "same", "mixed"]),
        weight=st.integers(min_value=1, max_value=3),
    ),
    max_size=12,
)
FLIP = {"better": "worse", "worse": "better", "same": "same", "mixed": "mixed"}


@settings(max_examples=100, deadline=None)
@given(comparisons, st.booleans(), st.randoms())
def test_net_utility_properties(cs, weighted, rnd) -> None:
    total = net_utility(cs, weighted)
    shuffled = list(cs)
    rnd.shuffle(shuffled)
    assert net_utility(shuffled, weighted) == total

    flipped = [AttributeComparison(c.attribute, FLIP[c.verdict], c.weight) for c in cs]
    assert net_utility(flipped, weighted) == -total

    bound = sum(c.weight for c in cs) if weighted else len(cs)
    assert -bound <= total <= bound


def test_bootstrapped_table_saves_and_drives_static_mode(mock_gateway, tmp_path) -> None:
    from price_audit.config import load_static_table, save_static_table

    table = bootstrap_static_table(mock_gateway, ["computer mice"])
    path = save_static_table(table, str(tmp_path / "static.jsonl"), version="boot-1")
    loaded = load_static_table(str(path))
    assert loaded == table
    mode = AttributeMode(mode="static", static_table=loaded)
    assert mode.attributes_for("computer mice") == table["computer mice"]
