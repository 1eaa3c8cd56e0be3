from datetime import datetime

import pytest

from roadrisk.errors import WeatherLoadError
from roadrisk.road_network import GeoPoint
from roadrisk.weather import (
    HourlyObservation,
    StationSeries,
    WeatherStation,
    interpolate,
    parse_weather_csv,
    risky_binary,
    update_ema,
)

H = [datetime(2021, 1, 1, h) for h in range(24)]


def obs(hour: int, phenomena=(), **kw) -> HourlyObservation:
    return HourlyObservation(
        station_id="A", timestamp=H[hour], phenomena=tuple(phenomena), **kw
    )


def series(observations, lat=45.5, lon=-73.6, sid="A") -> StationSeries:
    return StationSeries(
        station=WeatherStation(station_id=sid, location=GeoPoint(lat, lon)),
        observations=tuple(observations),
    )


class TestRiskyBinary:
    @pytest.mark.parametrize(
        "phenomena,expected",
        [
            (("Snow",), 1),
            (("snow",), 1),
            (("  Freezing    Rain ",), 1),
            (("Blowing Snow",), 1),
            (("SNOW GRAINS",), 1),
            (("Ice Fog",), 1),
            (("Rain",), 0),
            (("Drizzle",), 0),
            (("Thunderstorms",), 0),
            ((), 0),
            (("Rain", "Ice Pellets"), 1),
        ],
    )
    def test_classification(self, phenomena, expected):
        assert risky_binary(obs(0, phenomena)) == expected


class TestObservationValidation:
    def test_rejects_off_hour_timestamp(self):
        with pytest.raises(ValueError, match="not on the hour"):
            HourlyObservation(station_id="A", timestamp=datetime(2021, 1, 1, 0, 30))

    def test_rejects_bad_humidity(self):
        with pytest.raises(ValueError, match="humidity"):
            obs(0, humidity_pct=101.0)

    def test_rejects_negative_visibility(self):
        with pytest.raises(ValueError, match="visibility"):
            obs(0, visibility_km=-1.0)


class TestEma:
    """Hand-computed EMA traces with alpha = 0.5."""

    def test_consecutive_hours(self):
        s = series([obs(0, ("Snow",)), obs(1), obs(2)])
        assert update_ema(s, 0.5).risky_ema == (1.0, 0.5, 0.25)

    def test_one_hour_gap_decays_once(self):
        # risky at h0 and h2: carry 1.0 through the missing hour as
        # 1.0 * (1-a)^(2-1) = 0.5, then blend: 0.5*1 + 0.5*0.5 = 0.75
        s = series([obs(0, ("Snow",)), obs(2, ("Snow",))])
        assert update_ema(s, 0.5).risky_ema == (1.0, 0.75)

    def test_two_hour_gap_decays_twice(self):
        # 1.0 * 0.5^2 = 0.25 carried, then 0.5*1 + 0.5*0.25 = 0.625
        s = series([obs(0, ("Snow",)), obs(3, ("Snow",))])
        assert update_ema(s, 0.5).risky_ema == (1.0, 0.625)

    def test_alpha_one_tracks_binary_exactly(self):
        s = series([obs(0, ("Snow",)), obs(1), obs(2, ("Ice Fog",))])
        assert update_ema(s, 1.0).risky_ema == (1.0, 0.0, 1.0)

    def test_calm_start_stays_zero(self):
        s = series([obs(0), obs(1), obs(5)])
        assert update_ema(s, 0.5).risky_ema == (0.0, 0.0, 0.0)

    def test_alpha_validated(self):
        with pytest.raises(ValueError, match="alpha"):
            update_ema(series([obs(0)]), 0.0)

    def test_value_at_requires_update(self):
        s = series([obs(0, ("Snow",))])
        with pytest.raises(ValueError, match="update_ema"):
            s.value_at(H[0], "risky_ema")
        assert update_ema(s).value_at(H[0], "risky_ema") == 1.0

    def test_unknown_field_lists_valid_ones(self):
        with pytest.raises(ValueError, match="temperature"):
            series([obs(0)]).value_at(H[0], "barometric_drift")


def temp_series(lat: float, value: float, sid: str) -> StationSeries:
    return series([HourlyObservation(station_id=sid, timestamp=H[0], temperature_c=value)],
                  lat=lat, sid=sid)


class TestInterpolate:
    Q = GeoPoint(45.5, -73.6)

    def test_equidistant_stations_average(self):
        # pure-latitude offsets: both stations exactly the same distance away
        stations = [temp_series(45.51, 10.0, "N"), temp_series(45.49, 20.0, "S")]
        assert interpolate(stations, self.Q, H[0], "temperature") == pytest.approx(15.0)

    def test_inverse_square_weighting(self):
        # distances in exact ratio 1:2 (haversine is linear in pure-lat
        # offsets), so weights are 4:1 -> (4*2 + 1*7) / 5 = 3
        stations = [temp_series(45.51, 2.0, "N"), temp_series(45.52, 7.0, "F")]
        v = interpolate(stations, self.Q, H[0], "temperature", exponent=2.0)
        assert v == pytest.approx(3.0, abs=1e-9)

    def test_exponent_zero_is_unweighted_mean(self):
        stations = [temp_series(45.51, 2.0, "N"), temp_series(45.52, 7.0, "F")]
        v = interpolate(stations, self.Q, H[0], "temperature", exponent=0.0)
        assert v == pytest.approx(4.5)

    def test_query_at_station_location(self):
        stations = [temp_series(45.5, 10.0, "HERE"), temp_series(45.51, 0.0, "N")]
        v = interpolate(stations, self.Q, H[0], "temperature")
        assert v == pytest.approx(10.0, rel=1e-4)

    def test_cutoff_excludes_far_stations(self):
        # 0.5 deg of latitude is ~55.6 km, beyond the 50 km default cutoff
        stations = [temp_series(46.0, 99.0, "FAR")]
        assert interpolate(stations, self.Q, H[0], "temperature") is None

    def test_missing_values_do_not_contribute(self):
        missing = series([HourlyObservation(station_id="M", timestamp=H[0])],
                         lat=45.501, sid="M")
        stations = [missing, temp_series(45.52, 7.0, "F")]
        assert interpolate(stations, self.Q, H[0], "temperature") == pytest.approx(7.0)
        assert interpolate([missing], self.Q, H[0], "temperature") is None

    def test_no_observation_at_hour(self):
        stations = [temp_series(45.51, 10.0, "N")]
        assert interpolate(stations, self.Q, H[5], "temperature") is None

    def test_constant_field_is_exact(self):
        stations = [temp_series(45.51 + 0.003 * i, 6.25, f"S{i}") for i in range(4)]
        v = interpolate(stations, self.Q, H[0], "temperature")
        assert v == pytest.approx(6.25, abs=1e-12)


CSV_HEADER = (
    "station_id,timestamp,latitude,longitude,temperature,humidity,visibility,"
    "pressure,phenomena"
)


def weather_csv(*rows: str) -> str:
    return "\n".join([CSV_HEADER, *rows]) + "\n"


class TestParseWeatherCsv:
    def test_basic_row(self):
        table = parse_weather_csv(
            weather_csv("A,2021-01-01 00:00,45.5,-73.6,-3.5,81,24.1,101.2,Snow")
        )
        assert len(table) == 1
        s = table.get("A")
        assert s.station.location == GeoPoint(45.5, -73.6)
        (o,) = s.observations
        assert o.temperature_c == -3.5
        assert o.humidity_pct == 81.0
        assert o.visibility_km == 24.1
        assert o.pressure_kpa == 101.2
        assert o.phenomena == ("Snow",)
        assert table.warnings == ()

    def test_missing_mandatory_columns_named(self):
        bad = "timestamp,temperature\n2021-01-01 00:00,5\n"
        with pytest.raises(WeatherLoadError) as err:
            parse_weather_csv(bad)
        assert "station_id" in str(err.value)
        assert "latitude" in str(err.value)
        assert "longitude" in str(err.value)

    def test_empty_input(self):
        with pytest.raises(WeatherLoadError, match="empty"):
            parse_weather_csv("")

    def test_missing_tokens_become_none(self):
        table = parse_weather_csv(
            weather_csv("A,2021-01-01 00:00,45.5,-73.6,M,,na,NaN,")
        )
        (o,) = table.get("A").observations
        assert o.temperature_c is None
        assert o.humidity_pct is None
        assert o.visibility_km is None
        assert o.pressure_kpa is None
        assert o.phenomena == ()

    def test_bad_optional_value_warns(self):
        table = parse_weather_csv(
            weather_csv("A,2021-01-01 00:00,45.5,-73.6,cold,50,10,101,")
        )
        (o,) = table.get("A").observations
        assert o.temperature_c is None
        assert len(table.warnings) == 1
        assert "temperature" in table.warnings[0]
        assert "row 2" in table.warnings[0]

    def test_bad_mandatory_value_raises_with_row(self):
        with pytest.raises(WeatherLoadError, match="row 3"):
            parse_weather_csv(
                weather_csv(
                    "A,2021-01-01 00:00,45.5,-73.6,1,50,10,101,",
                    "A,yesterday,45.5,-73.6,1,50,10,101,",
                )
            )

    def test_out_of_range_humidity_raises(self):
        with pytest.raises(WeatherLoadError, match="row 2"):
            parse_weather_csv(weather_csv("A,2021-01-01 00:00,45.5,-73.6,1,150,10,101,"))

    def test_duplicate_keeps_last_and_warns(self):
        table = parse_weather_csv(
            weather_csv(
                "A,2021-01-01 00:00,45.5,-73.6,1.0,50,10,101,",
                "A,2021-01-01 00:00,45.5,-73.6,2.0,50,10,101,",
            )
        )
        (o,) = table.get("A").observations
        assert o.temperature_c == 2.0
        assert any("duplicate" in w for w in table.warnings)

    def test_rows_sorted_within_station(self):
        table = parse_weather_csv(
            weather_csv(
                "A,2021-01-01 02:00,45.5,-73.6,2,50,10,101,",
                "A,2021-01-01 00:00,45.5,-73.6,0,50,10,101,",
                "A,2021-01-01 01:00,45.5,-73.6,1,50,10,101,",
            )
        )
        temps = [o.temperature_c for o in table.get("A").observations]
        assert temps == [0.0, 1.0, 2.0]

    def test_stations_sorted_by_id(self):
        table = parse_weather_csv(
            weather_csv(
                "B,2021-01-01 00:00,45.6,-73.7,1,50,10,101,",
                "A,2021-01-01 00:00,45.5,-73.6,2,50,10,101,",
            )
        )
        assert [s.station.station_id for s in table] == ["A", "B"]

    def test_custom_columns_with_date_hour(self):
        raw = (
            "Climate ID,Date,Hour,Lat,Lon,Temp,Weather\n"
            'X1,2021-01-01,13:00,45.5,-73.6,-2.5,"Snow,Ice Fog"\n'
        )
        table = parse_weather_csv(
            raw,
            columns={
                "station_id": "Climate ID",
                "date": "Date",
                "hour": "Hour",
                "latitude": "Lat",
                "longitude": "Lon",
                "temperature": "Temp",
                "phenomena": "Weather",
            },
        )
        (o,) = table.get("X1").observations
        assert o.timestamp == datetime(2021, 1, 1, 13)
        assert o.temperature_c == -2.5
        assert o.phenomena == ("Snow", "Ice Fog")
        assert risky_binary(o) == 1

    def test_multi_station_ema_roundtrip(self):
        table = parse_weather_csv(
            weather_csv(
                "A,2021-01-01 00:00,45.5,-73.6,1,50,10,101,Snow",
                "A,2021-01-01 01:00,45.5,-73.6,1,50,10,101,",
                "B,2021-01-01 00:00,45.6,-73.7,1,50,10,101,Rain",
            )
        ).with_ema(0.5)
        assert table.get("A").risky_ema == (1.0, 0.5)
        assert table.get("B").risky_ema == (0.0,)


class TestSeriesValidation:
    def test_non_increasing_timestamps_rejected(self):
        with pytest.raises(ValueError, match="strictly"):
            series([obs(1), obs(1)])

    def test_mismatched_ema_length_rejected(self):
        with pytest.raises(ValueError, match="risky_ema"):
            StationSeries(
                station=WeatherStation("A", GeoPoint(45.5, -73.6)),
                observations=(obs(0),),
                risky_ema=(0.0, 0.0),
            )
