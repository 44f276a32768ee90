import json

import pytest

from prmkit.errors import EmptyInput, MissingN, MissingScope
from prmkit.rerank import Aggregation, CurvePoint, EvalCurve, Method
from prmkit.report import (
    ImprovementCell,
    curves_svg,
    improvement_table,
    render,
    table_svg,
)


def curve(method=Method.WMV, agg=Aggregation.MIN, scope="all", points=((1, 0.5, 0.0),),
          seed=0, trials=5):
    return EvalCurve(
        method=method,
        aggregation=agg,
        scope=scope,
        seed=seed,
        trials=trials,
        points=tuple(CurvePoint(n, acc, err) for n, acc, err in points),
    )


class TestImprovementTable:
    def test_delta_arithmetic(self):
        baseline = [curve(method=Method.MV, points=((128, 0.500, 0.0),))]
        config = {"ours": [curve(points=((128, 0.565, 0.0),))]}
        table = improvement_table(config, baseline, at_n=128)
        cell = table.cells[0][0]
        assert cell == ImprovementCell(row="ours", column="all", delta=pytest.approx(6.5), at_n=128)

    def test_self_difference_is_zero(self):
        baseline = [curve(method=Method.MV, points=((8, 0.431, 0.0),))]
        config = {"same": [curve(points=((8, 0.431, 0.0),))]}
        table = improvement_table(config, baseline, at_n=8)
        assert table.cells[0][0].delta == 0.0

    def test_matrix_shape_and_order(self):
        scopes = ["math_adjacent", "all", "non_math_adjacent"]
        baseline = [
            curve(method=Method.MV, scope=s, points=((4, 0.4, 0.0),)) for s in scopes
        ]
        configs = {
            tag: [curve(scope=s, points=((4, acc, 0.0),)) for s in scopes]
            for tag, acc in (("b-model", 0.5), ("a-model", 0.6), ("c-model", 0.3))
        }
        table = improvement_table(configs, baseline, at_n=4)
        assert table.rows == ("a-model", "b-model", "c-model")
        assert table.columns == ("all", "math_adjacent", "non_math_adjacent")
        assert len(table.cells) == 3 and len(table.cells[0]) == 3

    def test_missing_n(self):
        baseline = [curve(method=Method.MV, points=((4, 0.4, 0.0),))]
        with pytest.raises(MissingN):
            improvement_table({"x": [curve(points=((4, 0.5, 0.0),))]}, baseline, at_n=8)

    def test_missing_scope(self):
        baseline = [curve(method=Method.MV, scope="all", points=((4, 0.4, 0.0),))]
        config = {"x": [curve(scope="law", points=((4, 0.5, 0.0),))]}
        with pytest.raises(MissingScope):
            improvement_table(config, baseline, at_n=4)

    def test_normalized_variant(self):
        baseline = [curve(method=Method.MV, points=((4, 0.4, 0.0),))]
        configs = {
            "big": [curve(points=((4, 0.6, 0.0),))],
            "small": [curve(points=((4, 0.5, 0.0),))],
        }
        raw = improvement_table(configs, baseline, at_n=4)
        norm = improvement_table(configs, baseline, at_n=4, normalize=True)
        assert not raw.normalized and norm.normalized
        assert norm.cells[0][0].delta == pytest.approx(1.0)
        assert norm.cells[1][0].delta == pytest.approx(0.5)

    def test_deltas_recomputable_from_serialized_curves(self):
        baseline = [curve(method=Method.MV, points=((2, 0.41, 0.0), (4, 0.44, 0.0)))]
        config = {"m": [curve(points=((2, 0.47, 0.0), (4, 0.52, 0.0)))]}
        table = improvement_table(config, baseline, at_n=4)
        base_again = EvalCurve.from_json(baseline[0].to_json())
        conf_again = EvalCurve.from_json(config["m"][0].to_json())
        independent = (conf_again.point_at(4).acc - base_again.point_at(4).acc) * 100
        assert table.cells[0][0].delta == independent


class TestRender:
    def test_csv_header_and_rows(self, tmp_path):
        files = render(curves=[curve(points=((1, 0.25, 0.01), (2, 0.5, 0.02)))],
                       formats=["csv"], outdir=tmp_path)
        assert len(files) == 1
        text = files[0].read_text()
        assert text.splitlines()[0] == "n,acc,stderr"
        assert text.splitlines()[1] == "1,0.25,0.01"

    def test_manifest_lists_all_files(self, tmp_path):
        baseline = [curve(method=Method.MV, points=((4, 0.4, 0.0),))]
        table = improvement_table({"x": [curve(points=((4, 0.5, 0.0),))]}, baseline, 4)
        files = render(table=table, formats=["svg", "json"], outdir=tmp_path)
        assert sorted(f.name for f in files) == ["improvement.json", "improvement.svg"]

    def test_byte_determinism(self, tmp_path):
        curves = [
            curve(points=((1, 1 / 3, 0.017), (2, 0.5, 0.013), (4, 0.625, 0.0))),
            curve(method=Method.MV, points=((1, 1 / 3, 0.02), (2, 0.45, 0.01), (4, 0.5, 0.0))),
        ]
        table = improvement_table(
            {"ours": [curves[0]]}, [curves[1]], at_n=4
        )
        out1 = render(curves=curves, table=table, outdir=tmp_path / "run1")
        out2 = render(curves=curves, table=table, outdir=tmp_path / "run2")
        for f1, f2 in zip(sorted(out1), sorted(out2)):
            assert f1.name == f2.name
            assert f1.read_bytes() == f2.read_bytes()

    def test_empty_input_rejected(self, tmp_path):
        with pytest.raises(EmptyInput):
            render(curves=None, table=None, outdir=tmp_path)

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            render(curves=[curve()], formats=["pdf"], outdir=tmp_path)

    def test_curve_json_round_trips(self, tmp_path):
        c = curve(points=((1, 0.2, 0.0), (2, 0.9, 0.1)))
        (path,) = render(curves=[c], formats=["json"], outdir=tmp_path)
        from prmkit.rerank import EvalCurve as EC

        assert EC.from_json(path.read_text()) == c


class TestSvgContent:
    def test_line_chart_structure(self):
        svg = curves_svg([curve(points=((1, 0.3, 0.01), (4, 0.6, 0.0)))])
        assert svg.startswith("<svg")
        assert svg.rstrip().endswith("</svg>")
        assert "polyline" in svg
        assert "number of sampled CoTs" in svg

    def test_heatmap_embeds_n_and_cells(self):
        baseline = [curve(method=Method.MV, points=((16, 0.50, 0.0),))]
        table = improvement_table({"m": [curve(points=((16, 0.565, 0.0),))]}, baseline, 16)
        svg = table_svg(table)
        assert "at N=16" in svg
        assert "6.50" in svg

    def test_heatmap_normalized_labelled(self):
        baseline = [curve(method=Method.MV, points=((4, 0.5, 0.0),))]
        table = improvement_table(
            {"m": [curve(points=((4, 0.6, 0.0),))]}, baseline, 4, normalize=True
        )
        assert "normalized" in table_svg(table)

    def test_empty_table_rejected(self):
        with pytest.raises(EmptyInput):
            curves_svg([])


def test_table_json_is_sorted_and_stable():
    baseline = [curve(method=Method.MV, points=((4, 0.4, 0.0),))]
    table = improvement_table({"x": [curve(points=((4, 0.5, 0.0),))]}, baseline, 4)
    from prmkit.report import _table_json

    payload = json.loads(_table_json(table))
    assert payload["rows"] == ["x"]
    assert payload["columns"] == ["all"]
    assert payload["deltas"][0][0] == pytest.approx(10.0)
