import xml.etree.ElementTree as ET

from dgfem import report
from dgfem.inequalities import InequalityRecord


def test_summary_lists_violations():
    recs = [InequalityRecord("a", 1, 1.0, 2.0), InequalityRecord("b", 2, 3.0, 0.0),
            InequalityRecord("c", 3, 0.0, 0.0, status="skipped")]
    text = report.summarize("title", [("k", 1)], recs)
    assert text.splitlines()[:3] == ["title", "=====", "k: 1"]
    assert "records: 3 (1 violations, 1 skipped)" in text
    assert "violation: b level 2" in text


def test_table_alignment():
    text = report.table(["level", "alpha"], [[5, 0.123456789], [10, None]])
    lines = text.splitlines()
    assert len({len(line) for line in lines}) == 1
    assert lines[1].split() == ["5", "0.123457"] and lines[2].split() == ["10", "-"]


def test_svg_is_well_formed():
    svg = report.loglog_svg({"level 5": ([0.5, 0.25, 0.125], [1.0, 0.7, 0.5]), "empty": ([], [])},
                            title="decay <test>")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert svg.count("<polyline") == 1
    assert "decay &lt;test&gt;" in svg


def test_write_report(tmp_path):
    paths = report.write_report(tmp_path / "out", "stem", [InequalityRecord("a", 1, 1.0, 2.0)], "hello\n", "<svg/>")
    assert paths["csv"].read_text().startswith("name,level,lhs,rhs,ratio,param_json")
    assert paths["summary"].read_text() == "hello\n"
    assert paths["svg"].exists()
