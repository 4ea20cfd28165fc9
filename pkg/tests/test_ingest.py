import numpy as np
import pytest

from ipdlab.game import PlayerHistory
from ipdlab.ingest import (
    HEADER,
    export_context_table,
    format_percentage,
    histories_by_treatment,
    load_sessions,
    parse_csv,
    parse_json,
    parse_session_csv,
    write_csv,
    write_json,
)
from ipdlab.simulator import SimConfig, parse_roster, run_session

GOOD = """session_id,treatment,round,player_id,partner_id,action
s1,FP,1,a,b,C
s1,FP,1,b,a,C
s1,FP,2,a,b,D
s1,FP,2,b,a,C
s1,FP,3,a,b,C
s1,FP,3,b,a,D
"""


def errors(text):
    _, diag = parse_csv(text)
    return [d.message for d in diag.errors]


def test_parse_well_formed():
    session, diag = parse_session_csv(GOOD)
    assert len(diag) == 0
    assert session.treatment == "FP" and session.rounds == 3
    a, b = session.players
    assert "".join(map(str, a.actions)) == "CDC"
    assert "".join(map(str, a.opp_actions)) == "CCD"
    assert a.partner_ids == ("b", "b", "b")
    assert session.consistency_errors() == []


def test_invalid_action_reported_with_line():
    text = GOOD.replace("s1,FP,2,a,b,D", "s1,FP,2,a,b,X")
    sessions, diag = parse_csv(text)
    assert sessions == []
    assert any(d.message == "invalid action 'X'" and d.location == "line 4" for d in diag.errors)


def test_self_pairing():
    text = GOOD.replace("s1,FP,1,a,b,C", "s1,FP,1,a,a,C")
    assert any("self-pairing" in m for m in errors(text))


def test_duplicate_record():
    text = GOOD + "s1,FP,3,a,b,C\n"
    assert any("duplicate record" in m for m in errors(text))


def test_missing_reciprocal():
    text = GOOD.replace("s1,FP,3,b,a,D\n", "")
    msgs = errors(text)
    assert any("missing reciprocal" in m for m in msgs)


def test_non_reciprocal_partner():
    text = GOOD + "s1,FP,1,c,b,C\ns1,FP,1,d,c,C\n"
    assert errors(text)


def test_non_contiguous_rounds():
    text = GOOD.replace(",2,", ",4,")
    assert any("non-contiguous" in m for m in errors(text))


def test_odd_player_count():
    text = GOOD + "s1,FP,1,c,a,C\n"
    assert any("odd number of players" in m for m in errors(text))


def test_bad_header_and_empty():
    assert errors("a,b,c\n1,2,3\n")
    assert errors("")
    assert errors(",".join(HEADER) + "\n")


def test_fixed_partner_change_rejected():
    rows = [",".join(HEADER)]
    for r, pairs in ((1, [("a", "b"), ("c", "d")]), (2, [("a", "c"), ("b", "d")])):
        for x, y in pairs:
            rows += [f"s,FP,{r},{x},{y},C", f"s,FP,{r},{y},{x},C"]
    assert any("changes partners" in m for m in errors("\n".join(rows) + "\n"))


def test_round_trip_csv_and_json():
    s = run_session(SimConfig(6, 12, "shuffled", 0.1, seed=3), parse_roster("2xTFT,2xWSLS,AllD,AllC"))
    text = write_csv([s])
    parsed, diag = parse_csv(text)
    assert diag.ok and parsed == [s]
    assert write_csv(parsed) == text
    parsed_json, diag = parse_json(write_json([s]))
    assert diag.ok and parsed_json == [s]


def test_round_trip_up_to_row_order():
    lines = GOOD.strip().split("\n")
    shuffled = "\n".join([lines[0]] + lines[1:][::-1]) + "\n"
    parsed, diag = parse_csv(shuffled)
    assert diag.ok
    assert sorted(write_csv(parsed).split("\n")) == sorted(GOOD.split("\n"))


def test_load_sessions_by_suffix(tmp_path):
    s = run_session(SimConfig(2, 5, seed=1), parse_roster("2xTFT"))
    (tmp_path / "a.csv").write_text(write_csv([s]))
    (tmp_path / "a.json").write_text(write_json([s]))
    assert load_sessions(tmp_path / "a.csv")[0] == [s]
    assert load_sessions(tmp_path / "a.json")[0] == [s]
    assert not parse_json("{}")[1].ok


def test_context_table_layout():
    a = PlayerHistory.from_strings("CCDD", "CDCD")
    table = export_context_table({"FP": [a]}).strip().split("\n")
    assert table[0] == "treatment,context,frequency,cooperation,percentage"
    assert table[1:] == ["FP,CC,1,1,100.00%", "FP,CD,1,0,0.00%", "FP,DC,1,0,0.00%", "FP,DD,0,0,NA"]


def test_context_table_empty_treatment():
    rows = export_context_table({"SP": []}).strip().split("\n")[1:]
    assert rows == ["SP,CC,0,0,NA", "SP,CD,0,0,NA", "SP,DC,0,0,NA", "SP,DD,0,0,NA"]


def test_percentages_from_raw_counts():
    assert format_percentage(626, 4878) == "12.83%"
    assert format_percentage(1127, 1910) == "59.01%"
    assert format_percentage(0, 0) == "NA"


def test_histories_by_treatment():
    fp = run_session(SimConfig(2, 5, seed=1, session_id="a"), parse_roster("2xTFT"))
    sp = run_session(SimConfig(4, 5, "shuffled", seed=1, session_id="b"), parse_roster("4xTFT"))
    grouped = histories_by_treatment([fp, sp])
    assert {k: len(v) for k, v in grouped.items()} == {"FP": 2, "SP": 4}


def test_parsed_sessions_are_cross_consistent():
    rng = np.random.default_rng(0)
    for seed in rng.integers(0, 10_000, 5):
        s = run_session(SimConfig(8, 10, "shuffled", 0.3, seed=int(seed)), parse_roster("8xRandomCoin(0.5)"))
        parsed, diag = parse_csv(write_csv([s]))
        assert diag.ok and parsed[0].consistency_errors() == []


def test_multiple_sessions_need_single_session_parser():
    a = run_session(SimConfig(2, 3, seed=1, session_id="x"), parse_roster("2xTFT"))
    b = run_session(SimConfig(2, 3, seed=1, session_id="y"), parse_roster("2xTFT"))
    session, diag = parse_session_csv(write_csv([a, b]))
    assert session is None and not diag.ok
    with pytest.raises(ValueError):
        SimConfig(2, 3, matching="bogus")
