"""Simulator: config validation, determinism, scenarios, invariants."""

import json
import re

import pytest

from tracecorona.simnet.config import ConfigError, ScenarioConfig
from tracecorona.simnet.engine import Engine, run_scenario
from tracecorona.simnet.report import ScenarioReport

DAY = 86400


def config_dict(**overrides):
    base = {
        "name": "test",
        "seed": 1,
        "duration_days": 10,
        "scheme": "tracecorona",
        "devices": [{"id": "a"}, {"id": "b", "clock_offset_s": 3}],
        "colocation_schedule": [
            {
                "device_a": "a",
                "device_b": "b",
                "start": 3 * DAY + 36000,
                "end": 3 * DAY + 37200,
                "rssi_profile": -55,
            }
        ],
        "infections": [{"device": "a", "day": 0}],
    }
    base.update(overrides)
    return base


class TestConfig:
    def test_round_trip(self):
        config = ScenarioConfig.from_dict(config_dict())
        again = ScenarioConfig.from_dict(config.to_dict())
        assert config == again
        assert config.digest() == again.digest()

    def test_unknown_field_has_path(self):
        with pytest.raises(ConfigError, match="bogus"):
            ScenarioConfig.from_dict(config_dict(bogus=1))

    def test_unknown_device_in_schedule(self):
        bad = config_dict()
        bad["colocation_schedule"][0]["device_b"] = "zz"
        with pytest.raises(ConfigError, match=r"colocation_schedule\[0\].device_b"):
            ScenarioConfig.from_dict(bad)

    def test_interval_order_enforced(self):
        bad = config_dict()
        bad["colocation_schedule"][0]["end"] = 100
        bad["colocation_schedule"][0]["start"] = 200
        with pytest.raises(ConfigError, match=r"colocation_schedule\[0\].end"):
            ScenarioConfig.from_dict(bad)

    def test_duplicate_device_id(self):
        bad = config_dict(devices=[{"id": "a"}, {"id": "a"}])
        with pytest.raises(ConfigError, match=r"devices\[1\].id"):
            ScenarioConfig.from_dict(bad)

    def test_epsilon_bounds(self):
        with pytest.raises(ConfigError, match="epsilon"):
            ScenarioConfig.from_dict(config_dict(epsilon=900))

    def test_fanout_limit_capped_at_8(self):
        bad = config_dict(
            adversaries=[
                {
                    "kind": "relay_twoway",
                    "capture": "a",
                    "victims": ["b"],
                    "start": 0,
                    "end": 100,
                    "fanout_limit": 9,
                }
            ]
        )
        with pytest.raises(ConfigError, match="fanout_limit"):
            ScenarioConfig.from_dict(bad)

    def test_rssi_profile_segments(self):
        good = config_dict()
        good["colocation_schedule"][0]["rssi_profile"] = [[0, -70], [600, -50]]
        config = ScenarioConfig.from_dict(good)
        interval = config.colocation_schedule[0]
        assert interval.rssi_at(interval.start + 10) == -70
        assert interval.rssi_at(interval.start + 700) == -50

    def test_infection_day_inside_duration(self):
        with pytest.raises(ConfigError, match=r"infections\[0\].day"):
            ScenarioConfig.from_dict(config_dict(infections=[{"device": "a", "day": 10}]))

    def test_contagious_to_symptoms_must_be_1_or_2(self):
        with pytest.raises(ConfigError, match="contagious_to_symptoms_days"):
            ScenarioConfig.from_dict(
                config_dict(disease_timeline={"contagious_to_symptoms_days": 5})
            )

    def test_mixed_scheme_colocation_rejected(self):
        bad = config_dict(
            devices=[{"id": "a"}, {"id": "b", "scheme": "decentralized"}]
        )
        with pytest.raises(ConfigError, match="same scheme"):
            ScenarioConfig.from_dict(bad)


class TestReportSerialization:
    def run_once(self):
        return run_scenario(ScenarioConfig.from_dict(config_dict()))

    def test_json_round_trip(self):
        report = self.run_once()
        assert ScenarioReport.from_json(report.to_json()) == report

    def test_text_round_trip(self):
        report = self.run_once()
        assert ScenarioReport.from_text(report.to_text()) == report

    def test_load_detects_format(self, tmp_path):
        report = self.run_once()
        j = tmp_path / "r.json"
        t = tmp_path / "r.txt"
        j.write_text(report.to_json())
        t.write_text(report.to_text())
        assert ScenarioReport.load(j) == report
        assert ScenarioReport.load(t) == report


class TestDeterminism:
    def test_byte_identical_reports(self):
        config = ScenarioConfig.from_dict(config_dict())
        a = run_scenario(config).to_json()
        b = run_scenario(config).to_json()
        assert a == b

    def test_seed_changes_shuffle_not_outcome(self):
        r1 = run_scenario(ScenarioConfig.from_dict(config_dict(seed=1)))
        r2 = run_scenario(ScenarioConfig.from_dict(config_dict(seed=2)))
        assert len(r1.notifications) == len(r2.notifications) == 1


class TestHonestPair:
    def test_single_direct_notification(self):
        report = run_scenario(ScenarioConfig.from_dict(config_dict()))
        assert len(report.notifications) == 1
        note = report.notifications[0]
        assert note["device"] == "b"
        assert note["level"] == "direct"
        assert note["genuine"] is True
        assert report.false_notification_count == 0
        assert report.notification_latency_days == {"b": 5}

    def test_token_symmetry_and_epsilon(self):
        config = ScenarioConfig.from_dict(config_dict())
        engine = Engine(config)
        engine.run()
        a = engine.clients["a"].device
        b = engine.clients["b"].device
        (ta,) = a.store.tokens()
        (tb,) = b.store.tokens()
        assert ta.secret == tb.secret
        assert abs(ta.start_time - tb.start_time) <= abs(3) + abs(0)

    def test_drive_by_yields_no_token(self):
        config = ScenarioConfig.from_dict(
            config_dict(
                colocation_schedule=[
                    {
                        "device_a": "a",
                        "device_b": "b",
                        "start": 3 * DAY + 36000,
                        "end": 3 * DAY + 36000 + 200,
                        "rssi_profile": -55,
                    }
                ]
            )
        )
        report = run_scenario(config)
        assert report.device_token_counts == {"a": 0, "b": 0}
        assert report.notifications == []

    def test_encounter_spanning_frame_boundary_two_tokens(self):
        start = 3 * DAY + 300  # 5 min into frame, crosses one boundary
        config = ScenarioConfig.from_dict(
            config_dict(
                colocation_schedule=[
                    {
                        "device_a": "a",
                        "device_b": "b",
                        "start": start,
                        "end": start + 1200,
                        "rssi_profile": -55,
                    }
                ],
                devices=[{"id": "a"}, {"id": "b"}],
            )
        )
        report = run_scenario(config)
        assert report.device_token_counts == {"a": 2, "b": 2}

    def test_stats_match_ground_truth(self):
        report = run_scenario(ScenarioConfig.from_dict(config_dict()))
        stats = report.server_stats
        assert stats["active_users"] == 2
        assert stats["infected_uploads"] == 1
        assert stats["records_published"] == 1
        assert stats["notifications_reported"]["direct"] == 1

    def test_payload_accounting_exact(self):
        # 1 upload of 1 record + 2 fetches (both clients, first round)
        report = run_scenario(ScenarioConfig.from_dict(config_dict()))
        record_frame = 16 + 4 + 36 + 1
        upload_body = 1 + 1 + 12 + 4 + record_frame
        fetch_body = 13
        assert report.payload_bytes_uploaded == (4 + upload_body) + 2 * (4 + fetch_body)
        upload_resp = 4 + 1
        fetch_resp = 4 + 1 + 4 + 4 + record_frame
        assert report.payload_bytes_downloaded == upload_resp + 2 * fetch_resp


class TestModes:
    def test_deferred_equals_eager(self):
        eager = config_dict()
        deferred = config_dict(
            devices=[
                {"id": "a", "derive_mode": "deferred"},
                {"id": "b", "clock_offset_s": 3, "derive_mode": "deferred"},
            ]
        )
        r_eager = run_scenario(ScenarioConfig.from_dict(eager))
        r_deferred = run_scenario(ScenarioConfig.from_dict(deferred))
        assert r_eager.notifications == r_deferred.notifications
        e1 = Engine(ScenarioConfig.from_dict(eager))
        e1.run()
        e2 = Engine(ScenarioConfig.from_dict(deferred))
        e2.run()
        for device_id in ("a", "b"):
            eager_secrets = {t.secret for t in e1.clients[device_id].device.store.tokens()}
            deferred_secrets = {t.secret for t in e2.clients[device_id].device.store.tokens()}
            assert eager_secrets == deferred_secrets


class TestChannelBudget:
    def test_hub_never_exceeds_eight_channels(self):
        peers = [{"id": f"p{i}"} for i in range(10)]
        schedule = [
            {
                "device_a": "hub",
                "device_b": f"p{i}",
                "start": 1000,
                "end": 1000 + 900,
                "rssi_profile": -55,
            }
            for i in range(10)
        ]
        config = ScenarioConfig.from_dict(
            config_dict(
                devices=[{"id": "hub"}] + peers,
                colocation_schedule=schedule,
                infections=[],
                duration_days=1,
            )
        )
        engine = Engine(config)
        engine.run()
        hub = engine.clients["hub"].device
        assert hub.peak_open_channels <= 8
        # queued handshakes still complete shortly after
        assert len(hub.store) == 10


class TestRelayTiming:
    def relay_config(self, victim_offset):
        return ScenarioConfig.from_dict(
            config_dict(
                devices=[{"id": "a"}, {"id": "b", "clock_offset_s": victim_offset}],
                colocation_schedule=[],
                adversaries=[
                    {
                        "kind": "relay_twoway",
                        "capture": "a",
                        "victims": ["b"],
                        "start": 3 * DAY + 36000,
                        "end": 3 * DAY + 36600,
                        "latency_s": 5,
                    }
                ],
            )
        )

    def test_realtime_tunnel_within_epsilon_matches(self):
        report = run_scenario(self.relay_config(victim_offset=0))
        assert report.false_notification_count == 1
        assert report.attack_success_rate == 1.0

    def test_offset_beyond_epsilon_rejected(self):
        # tokens are established, but |t_ij - t_ji| = 120 + latency > 30
        config = self.relay_config(victim_offset=120)
        engine = Engine(config)
        report = engine.run()
        assert len(engine.clients["b"].device.store) == 1
        assert report.false_notification_count == 0
        assert report.attack_success_rate == 0.0


class TestInvariants:
    def test_conservation_no_orphan_notifications(self):
        config = ScenarioConfig.from_dict(config_dict())
        engine = Engine(config)
        report = engine.run()
        assert len(report.notifications) == len(engine.match_events)
        for note, event in zip(report.notifications, engine.match_events):
            assert note["device"] == event[0]
            assert note["matched"] == event[2]

    def test_ground_truth_separation(self):
        relay = {
            "kind": "relay_twoway",
            "capture": "a",
            "victims": ["b"],
            "start": 3 * DAY + 36000,
            "end": 3 * DAY + 36600,
            "latency_s": 5,
        }
        config = ScenarioConfig.from_dict(config_dict(adversaries=[relay]))
        engine = Engine(config)
        engine.run()
        forbidden = re.compile(r"adversar|attack|fake|genuine|relay|ground", re.I)
        for client in engine.clients.values():
            for name in vars(client.device):
                assert not forbidden.search(name)
            for token in client.device.store.tokens():
                for field_name in vars(token):
                    assert not forbidden.search(field_name)
        for name in vars(engine.server):
            assert not forbidden.search(name)

    def test_private_keys_never_in_wire_or_report(self):
        config = ScenarioConfig.from_dict(config_dict())
        engine = Engine(config)
        report = engine.run()
        blob = report.to_json()
        for client in engine.clients.values():
            device = client.device
            for frame in list(device._keypair_cache):
                assert device.keypair(frame).private_key.hex() not in blob
            for token in device.store.tokens():
                assert token.secret.hex() not in blob


class TestRedactionEndToEnd:
    def test_redacted_window_never_reaches_server(self):
        # two encounters in different frames; redact the first window
        first = 3 * DAY + 36000
        second = 3 * DAY + 38700
        config = ScenarioConfig.from_dict(
            config_dict(
                devices=[{"id": "a"}, {"id": "b"}, {"id": "c"}],
                colocation_schedule=[
                    {
                        "device_a": "a",
                        "device_b": "b",
                        "start": first,
                        "end": first + 900,
                        "rssi_profile": -55,
                    },
                    {
                        "device_a": "a",
                        "device_b": "c",
                        "start": second,
                        "end": second + 900,
                        "rssi_profile": -55,
                    },
                ],
                redactions=[
                    {"device": "a", "drop_start": first, "drop_end": first + 1200}
                ],
            )
        )
        report = run_scenario(config)
        notified = {n["device"] for n in report.notifications}
        assert notified == {"c"}
        assert report.server_stats["records_published"] == 1


class TestSecondLevelTagging:
    def test_second_level_notification_mirrors_tag(self):
        config = ScenarioConfig.from_dict(
            config_dict(
                devices=[{"id": "i"}, {"id": "j"}, {"id": "k"}],
                colocation_schedule=[
                    {
                        "device_a": "i",
                        "device_b": "j",
                        "start": 3 * DAY + 36000,
                        "end": 3 * DAY + 37200,
                        "rssi_profile": -55,
                    },
                    {
                        "device_a": "j",
                        "device_b": "k",
                        "start": 6 * DAY + 36000,
                        "end": 6 * DAY + 37200,
                        "rssi_profile": -55,
                    },
                ],
                infections=[{"device": "i", "day": 0}],
                second_level_enabled=True,
                duration_days=12,
            )
        )
        report = run_scenario(config)
        by_device = {n["device"]: n for n in report.notifications}
        assert by_device["j"]["level"] == "direct"
        assert by_device["k"]["level"] == "second_level"
        assert by_device["k"]["day"] == by_device["j"]["day"]


class TestCentralizedScheme:
    def test_honest_pair_notified_on_upload_day(self):
        config = ScenarioConfig.from_dict(config_dict(scheme="centralized"))
        report = run_scenario(config)
        assert len(report.notifications) == 1
        note = report.notifications[0]
        assert note["device"] == "b" and note["genuine"] is True
        assert note["day"] == 8

    def test_bluetrace_flag(self):
        config = ScenarioConfig.from_dict(
            config_dict(scheme="centralized", bluetrace=True)
        )
        report = run_scenario(config)
        assert len(report.notifications) == 1
