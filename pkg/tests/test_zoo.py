import csv
import json

import numpy as np
import pytest

from alphamine.errors import DataError
from alphamine.panel import DateRange
from alphamine.synthetic import make_synthetic
from alphamine.zoo import FactorZoo, write_metrics_report


@pytest.fixture(scope="module")
def panel():
    return make_synthetic(
        10, 160, ["ts_mean(volume,5)", "ts_std(close,10)"], [0.7, 0.3], 0.2, seed=1
    )


def test_from_expressions_signs_and_values(panel):
    zoo = FactorZoo.from_expressions(
        ["ts_mean(volume,5)", "Neg(ts_std(close,10))"], panel
    )
    assert [e.factor_id for e in zoo.entries] == [1, 2]
    assert zoo.entries[0].sign == 1
    assert zoo.entries[1].sign == -1  # negated planted factor anti-aligns
    signed = zoo.entries[1].signed_values
    np.testing.assert_array_equal(
        signed[np.isfinite(signed)], (-zoo.entries[1].values)[np.isfinite(signed)]
    )


def test_duplicate_expression_rejected(panel):
    zoo = FactorZoo.from_expressions(["ts_mean(volume,5)"], panel)
    from alphamine.zoo import ZooEntry

    with pytest.raises(DataError):
        zoo.add(ZooEntry(9, None, "ts_mean(volume,5)", None, 1, None, None))


def test_json_round_trip(tmp_path, panel):
    train = DateRange(panel.dates[0], panel.dates[119])
    zoo = FactorZoo.from_expressions(
        ["ts_mean(volume,5)", "S_log1p(ts_cov(high,volume,20))"], panel, train
    )
    path = tmp_path / "zoo.json"
    zoo.save_json(path)
    doc = json.loads(path.read_text())
    assert doc["vocabulary"] == zoo.vocab.to_json()
    assert doc["train_range"] == {
        "start": train.start.isoformat(), "end": train.end.isoformat(),
    }
    assert [f["expr"] for f in doc["factors"]] == [e.text for e in zoo.entries]

    back = FactorZoo.load_json(path)
    assert [e.text for e in back.entries] == [e.text for e in zoo.entries]
    assert [e.sign for e in back.entries] == [e.sign for e in zoo.entries]
    assert back.train_range == train
    assert back.entries[0].values is None  # values are recomputed on demand
    revalued = back.revalue(panel)
    np.testing.assert_array_equal(
        np.isfinite(revalued.entries[0].values), np.isfinite(zoo.entries[0].values)
    )


def test_off_menu_expression_survives_round_trip(tmp_path, panel):
    zoo = FactorZoo.from_expressions(["Ref(open,3)"], panel)  # window 3 off menu
    assert zoo.entries[0].program is None
    path = tmp_path / "zoo.json"
    zoo.save_json(path)
    back = FactorZoo.load_json(path)
    assert back.entries[0].text == "Ref(open,3)"


def test_metrics_report_csv(tmp_path, panel):
    zoo = FactorZoo.from_expressions(["ts_mean(volume,5)", "ts_std(close,10)"], panel)
    path = tmp_path / "report.csv"
    write_metrics_report(zoo, panel, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["factor_id"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"factor_id", "expr", "ic", "rank_ic", "icir", "rank_icir", "psi"}
    assert abs(float(rows[0]["ic"])) > 0.3
    assert 0.0 <= float(rows[0]["psi"]) <= 1.0
