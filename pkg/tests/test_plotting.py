import json
from dataclasses import asdict

from price_audit.config import PaddingConfig, PipelineConfig
from price_audit.pipeline import assess_target
from price_audit.plotting import plot_quadrants
from price_audit.synthetic import voting_mouse_fixture


def test_plot_writes_svg_and_matching_twin(tmp_path) -> None:
    fx = voting_mouse_fixture()
    config = PipelineConfig(padding=PaddingConfig(price_padding=0.30), strategy="voting")
    record = assess_target(fx.catalog, config, fx.target_id)

    svg, twin = plot_quadrants(record, str(tmp_path / "charts" / "glide.svg"))
    text = svg.read_text(encoding="utf-8")
    assert text.lstrip().startswith("<?xml")
    assert "Verdict: Yes" in text

    data = json.loads(twin.read_text(encoding="utf-8"))
    assert twin.name == "glide.json"
    assert data["points"] == [asdict(p) for p in record.points]
    assert data["decision"]["verdict"] == "Yes"
    assert data["padding_used"]["fraction"] == 0.30
