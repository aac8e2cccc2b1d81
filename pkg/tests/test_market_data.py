from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optbt.errors import DegenerateDeltas, DuplicateKey, GapInSeries, MissingLeg, NoEligibleStrike, ParseError
from optbt.market_data import (
    OPTION_COLUMNS,
    StockPrice,
    StraddleDefinition,
    apply_filters,
    build_straddle_series,
    delta_neutral_weights,
    define_straddle,
    is_third_friday,
    make_series,
    next_month_expiry,
    read_options_csv,
    read_stocks_csv,
    select_atm_pair,
    third_friday,
    write_options_csv,
)

from conftest import quote

DAY = date(2020, 1, 17)
CLOSES = {(DAY, "AAA"): 100.0}


def test_third_friday_calendar():
    assert third_friday(2020, 1) == date(2020, 1, 17)
    assert third_friday(2023, 12) == date(2023, 12, 15)
    assert is_third_friday(date(2020, 2, 21))
    assert not is_third_friday(date(2020, 2, 14))
    assert next_month_expiry(date(2020, 12, 18)) == date(2021, 1, 15)


def test_filter_drops_zero_bid_call():
    assert apply_filters([quote(bid=0.0, ask=0.5)], CLOSES) == []


def test_filter_drops_put_above_strike_bound():
    q = quote("P", strike=90.0, bid=94.9, ask=95.1)   # mid 95 > K = 90
    assert apply_filters([q], CLOSES) == []


def test_filter_keeps_clean_quote():
    q = quote(bid=1.0, ask=1.2)
    assert apply_filters([q], CLOSES) == [q]


def test_filter_other_rejections():
    rejected = [
        quote(bid=1.2, ask=1.2),                       # ask must exceed bid
        quote(std=False),                              # non-standard settlement
        quote(expiry=date(2020, 2, 14)),               # not a monthly expiry
        quote(strike=90.0, bid=5.0, ask=6.0),          # call below intrinsic 10
        quote(strike=90.0, bid=100.5, ask=101.0),      # call above spot
    ]
    assert apply_filters(rejected, CLOSES) == []


quote_strategy = st.builds(
    quote,
    opt_type=st.sampled_from("CP"),
    strike=st.sampled_from([90.0, 95.0, 100.0, 105.0, 110.0]),
    bid=st.floats(0.0, 20.0),
    ask=st.floats(0.0, 20.0),
    std=st.booleans(),
    expiry=st.sampled_from([date(2020, 2, 21), date(2020, 2, 14)]),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(quote_strategy, max_size=30), st.randoms())
def test_filters_idempotent_and_order_invariant(quotes, rnd):
    once = apply_filters(quotes, CLOSES)
    assert apply_filters(once, CLOSES) == once
    shuffled = list(quotes)
    rnd.shuffle(shuffled)
    assert sorted(apply_filters(shuffled, CLOSES), key=repr) == sorted(once, key=repr)


def _chain(strikes, oi=10):
    out = []
    for k in strikes:
        out.append(quote("C", strike=k, oi=oi))
        out.append(quote("P", strike=k, oi=oi))
    return out


def test_atm_picks_closest_shared_strike():
    c, p = select_atm_pair(_chain([90.0, 95.0, 100.5, 105.0]), 100.0)
    assert c.strike == p.strike == 100.5
    # brute force over the same candidates
    best = min([90.0, 95.0, 100.5, 105.0], key=lambda k: abs(100.0 / k - 1))
    assert best == 100.5


def test_atm_single_strike():
    c, p = select_atm_pair(_chain([100.0]), 100.0)
    assert (c.strike, c.option_type, p.option_type) == (100.0, "C", "P")


def test_atm_no_eligible_strike():
    with pytest.raises(NoEligibleStrike):
        select_atm_pair(_chain([80.0, 130.0]), 100.0)


def test_atm_requires_open_interest_and_both_legs():
    chain = _chain([100.0], oi=0) + _chain([102.0])
    assert select_atm_pair(chain, 100.0)[0].strike == 102.0
    with pytest.raises(MissingLeg):
        select_atm_pair([quote("C", strike=100.0)], 100.0)


def test_atm_tie_goes_to_lower_strike():
    # S/K - 1 is equal in magnitude only by construction: pick S so both sides tie
    k_lo, k_hi = 100.0, 104.0
    s = 2 * k_lo * k_hi / (k_lo + k_hi)     # 1 - s/k_hi == s/k_lo - 1
    assert select_atm_pair(_chain([k_hi, k_lo]), s)[0].strike in (k_lo, k_hi)
    d_lo, d_hi = abs(s / k_lo - 1), abs(s / k_hi - 1)
    expected = k_lo if d_lo <= d_hi else k_hi
    assert select_atm_pair(_chain([k_hi, k_lo]), s)[0].strike == expected


@pytest.mark.parametrize("dc,dp,expected", [
    (0.5, -0.5, (0.5, 0.5)),
    (0.6, -0.4, (0.4, 0.6)),
])
def test_delta_neutral_weights(dc, dp, expected):
    assert delta_neutral_weights(dc, dp) == pytest.approx(expected, abs=1e-15)


def test_degenerate_deltas():
    with pytest.raises(DegenerateDeltas):
        delta_neutral_weights(0.55, 0.0)
    with pytest.raises(DegenerateDeltas):
        delta_neutral_weights(0.0, -0.5)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(-1.0, -1e-3))
def test_weights_sum_to_one_and_zero_delta(dc, dp):
    wc, wp = delta_neutral_weights(dc, dp)
    assert wc + wp == 1.0
    assert wc == pytest.approx(-dp / (dc - dp), rel=1e-12)
    assert wc * dc + wp * dp == pytest.approx(0.0, abs=1e-12)


def _defn(wc=0.5, wp=0.5, strike=100.0):
    return StraddleDefinition("AAA", date(2020, 1, 17), date(2020, 1, 21), strike, wc, wp, 0.5, -0.5)


def test_series_price_and_returns():
    days = [date(2020, 1, 17), date(2020, 1, 20), date(2020, 1, 21)]
    s = make_series(_defn(), days, [4.0, 10.0, 11.0], [6.0, 10.0, 11.0], [100.0, 100.0, 100.0])
    assert s.price[0] == 5.0
    assert s.returns[1] == pytest.approx(0.10, abs=1e-15)
    assert np.isnan(s.returns[-1])
    assert s.log_moneyness_call[0] == s.log_moneyness_put[0] == 0.0
    assert s.dte_years[0] == pytest.approx(4 / 365)
    with pytest.raises(ValueError):
        s.price[0] = 1.0


def test_series_gap_raises():
    defn = _defn()
    days = [date(2020, 1, 17), date(2020, 1, 20), date(2020, 1, 21)]
    closes = {(d, "AAA"): 100.0 for d in days}
    legs = {}
    for d in (days[0], days[2]):
        legs[(d, "C")] = quote("C", day=d, expiry=defn.expiry)
        legs[(d, "P")] = quote("P", day=d, expiry=defn.expiry)
    with pytest.raises(GapInSeries):
        build_straddle_series(defn, legs, closes, days)


def test_define_straddle_uses_formation_quotes():
    d = define_straddle(quote("C", delta=0.6), quote("P", delta=-0.4))
    assert (d.w_call_norm, d.w_put_norm) == pytest.approx((0.4, 0.6))
    assert d.initial_delta == pytest.approx(0.0, abs=1e-15)


HEADER = ",".join(OPTION_COLUMNS)


def _write(tmp_path, lines, name="options.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def test_read_well_formed_and_unfiltered(tmp_path):
    rows = [
        "2020-01-17,AAA,C,100,2020-02-21,1.0,1.2,0.5,10,1",
        "2020-01-17,AAA,P,100,2020-02-21,1.0,1.2,-0.5,10,1",
        "2020-01-17,AAA,C,105,2020-02-21,1.2,1.0,0.3,10,1",   # ask < bid kept at ingest
    ]
    qs = read_options_csv(_write(tmp_path, [HEADER, *rows]))
    assert len(qs) == 3
    assert apply_filters(qs, CLOSES) == qs[:2]


def test_read_rejects_bad_date(tmp_path):
    rows = ["2020-01-17,AAA,C,100,2020-02-21,1.0,1.2,0.5,10,1",
            "17/01/2020,AAA,P,100,2020-02-21,1.0,1.2,-0.5,10,1"]
    with pytest.raises(ParseError) as e:
        read_options_csv(_write(tmp_path, [HEADER, *rows]))
    assert e.value.row == 3 and e.value.column == "date"


def test_read_rejects_duplicate(tmp_path):
    row = "2020-01-17,AAA,C,100,2020-02-21,1.0,1.2,0.5,10,1"
    with pytest.raises(DuplicateKey):
        read_options_csv(_write(tmp_path, [HEADER, row, row]))


def test_csv_round_trip(tmp_path):
    qs = [quote("C"), quote("P", strike=101.5, bid=0.3, ask=0.35, delta=-0.45)]
    p = tmp_path / "o.csv"
    write_options_csv(p, qs)
    assert read_options_csv(p) == qs


def test_read_stocks(tmp_path):
    p = _write(tmp_path, ["date,underlying,close", "2020-01-17,AAA,100.5"], "stocks.csv")
    assert read_stocks_csv(p) == [StockPrice(DAY, "AAA", 100.5)]
