"""Discrete-event proximity simulator.

One event queue drives everything: per-second link ticks for
co-location intervals, relay tunnels and eavesdropping sensors,
delayed beacon deliveries, handshake completions, and the daily cadence
(epoch advance, uploads at noon, charging at 22:00, feed fetches at
23:00 and 23:30, adversary actions at 23:45).

Determinism: all randomness flows from the scenario seed through named
substreams (channel loss, feed shuffles, TAN issuance, adversary
noise); events are processed in (time, insertion order); device
iteration follows config order.  Attack bookkeeping (which encounters
were injected) lives only in the engine's ground-truth tables, never in
scheme state.

Nominal wire sizes for the baseline schemes, used for payload
accounting: a published daily key frames as 4-byte day || 16-byte key;
a centralized observation as 16-byte identifier || 8-byte timestamp; a
centralized push notification as a 21-byte message.  The main scheme's
traffic is measured by encoding the real wire messages.
"""

from __future__ import annotations

import hashlib
import heapq
import random
import struct
from dataclasses import dataclass, field

from .. import baselines, crypto, exposure, payload, wire
from ..authority import HealthAuthority
from ..crypto import InvalidPoint, TimeFramePolicy, derive_tempids_decentralized
from ..device import APP_UUID, BeaconMessage, Device, FrameMismatch
from ..server import TracingServer
from .config import ScenarioConfig, SECONDS_PER_DAY
from .report import ScenarioReport

NOON = 12 * 3600
CHARGE_TIME = 22 * 3600
FETCH_OFFSETS = (3600, 1800)  # before each cadence boundary
CLAIM_TIME = 23 * 3600 + 45 * 60


def _sub_seed(seed: int, *labels) -> int:
    material = str(seed).encode() + b"|" + b"|".join(str(l).encode() for l in labels)
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def _identity_seed(seed: int, device_id: str) -> bytes:
    return hashlib.sha256(str(seed).encode() + b"|id|" + device_id.encode()).digest()


@dataclass
class _Infection:
    exposure_day: int
    contagious_day: int
    symptoms_day: int
    result_day: int
    uploaded: bool = False


@dataclass
class _Link:
    kind: str  # "direct" | "relay_oneway" | "relay_twoway" | "sensor"
    a: str
    b: str  # receiver for one-way kinds; sensor id for "sensor"
    start: int
    end: int
    latency: int = 0
    adversary: int | None = None
    rssi: object = -55.0  # float or ColocationInterval
    capture_id: str | None = None
    fanout_limit: int = 0

    def rssi_at(self, t: int) -> float:
        if isinstance(self.rssi, (int, float)):
            return float(self.rssi)
        return self.rssi.rssi_at(t)


class _Client:
    """Engine-side wrapper around one device, scheme specific."""

    def __init__(self, spec, scheme: str, config: ScenarioConfig):
        self.id = spec.id
        self.scheme = scheme
        self.clock_offset = spec.clock_offset_s
        self.identity = _identity_seed(config.seed, spec.id)
        policy = TimeFramePolicy(
            frame_period=config.frame_period,
            min_encounter_duration=config.min_encounter_duration,
            epsilon=config.epsilon,
        )
        self.device = Device(
            spec.id,
            self.identity,
            policy=policy,
            clock_offset=spec.clock_offset_s,
            retention_days=config.retention_days,
            derive_mode=spec.derive_mode,
        )
        # feed/matching state
        self.next_since = 0
        self.last_record_count = 0
        self.seen_records: set[tuple[bytes, bytes]] = set()
        self.matched_direct_hashes: set[bytes] = set()
        self.all_notifications: list = []
        self.second_level_done = False
        self.superspreader_done = False
        # baseline state
        self.observations: list[baselines.Observation] = []
        self.last_key_count = 0
        self.notified_keys: set[tuple[bytes, int]] = set()
        self.user_id: bytes | None = None

    def local(self, t: int) -> int:
        return t + self.clock_offset

    def advertising(self, t: int) -> bool:
        return self.device.is_advertising(t)

    def scanning(self, t: int) -> bool:
        return self.device.is_scanning(t)

    def daily_key(self, day: int) -> baselines.DecentralizedDailyKey:
        return baselines.new_daily_key(self.identity, day)

    def identifier_at(self, t: int) -> bytes:
        """The identifier broadcast at true time t, per scheme."""
        local = self.local(t)
        if self.scheme == "tracecorona":
            return self.device.ephemeral_id(self.device.policy.frame_of(local))
        if self.scheme == "decentralized":
            return baselines.tempid_at(self.daily_key(local // SECONDS_PER_DAY), local)
        return self._central_tempid(local)

    def _central_tempid(self, local: int) -> bytes:
        raise RuntimeError("centralized client not registered")


class Engine:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self._queue: list = []
        self._seq = 0
        self._now = 0
        self.rng_channel = random.Random(_sub_seed(config.seed, "channel"))
        self.rng_adversary = random.Random(_sub_seed(config.seed, "adversary"))
        self.authority = HealthAuthority(random.Random(_sub_seed(config.seed, "tan")))
        self.server = TracingServer(
            self.authority, superspreader_threshold=config.superspreader_threshold
        )
        self.dec_server = baselines.DecentralizedServer()
        self.cen_server = baselines.CentralizedServer(
            random.Random(_sub_seed(config.seed, "central")), bluetrace=config.bluetrace
        )
        self.clients: dict[str, _Client] = {}
        for spec in config.devices:
            client = _Client(spec, spec.scheme or config.scheme, config)
            self.clients[spec.id] = client

        # ground truth, invisible to scheme state
        self.gt_token_prov: dict[tuple[str, int, bytes], dict] = {}
        self.gt_record_origin: dict[bytes, dict] = {}
        self.gt_obs_prov: dict[tuple[str, bytes, int], dict] = {}
        self.gt_published_keys: list[tuple[str, baselines.DecentralizedDailyKey]] = []
        self.gt_infections: dict[str, _Infection] = {}

        self.sensor_log: list[tuple[str, int, str, bytes]] = []
        self.relay_admitted: dict[tuple, set] = {}
        self.relay_completed: dict[tuple, set] = {}
        self.adv_successes: dict[int, set] = {}
        self.adv_attempts: dict[int, int] = {}
        self.claim_results: dict[int, tuple[int, int]] = {}

        self.payload_up = 0
        self.payload_down = 0
        #: one entry per (token/observation, record/key) match; the
        #: conservation invariant checks notifications against this log
        self.match_events: list[tuple] = []
        self.notifications: list[dict] = []
        self.first_notification_day: dict[str, int] = {}
        self.first_direct_latency: dict[str, int] = {}
        self.false_count = 0

        timeline = config.disease_timeline
        for infection in config.infections:
            contagious = infection.day + timeline.incubation_to_contagious_days
            symptoms = contagious + timeline.contagious_to_symptoms_days
            result = (
                symptoms + timeline.symptoms_to_test_days + timeline.test_to_result_days
            )
            self.gt_infections[infection.device] = _Infection(
                exposure_day=infection.day,
                contagious_day=contagious,
                symptoms_day=symptoms,
                result_day=result,
            )

    # -- event queue -------------------------------------------------------------

    def _push(self, t: int, fn, *args) -> None:
        if t >= self.config.duration_days * SECONDS_PER_DAY:
            return
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, fn, args))

    def run(self) -> ScenarioReport:
        config = self.config
        for client in self.clients.values():
            if client.scheme == "tracecorona":
                self.server.register_active(client.id)
            elif client.scheme == "centralized":
                client.user_id = self.cen_server.register(client.id)
                client._central_tempid = (
                    lambda local, c=client: self.cen_server.tempid_for(
                        c.user_id, local // baselines.CENTRAL_INTERVAL_SECONDS
                    )
                )

        for interval in config.colocation_schedule:
            link = _Link(
                kind="direct",
                a=interval.device_a,
                b=interval.device_b,
                start=interval.start,
                end=interval.end,
                rssi=interval,
            )
            self._push(interval.start, self._tick_link, link, interval.start)

        for index, adv in enumerate(config.adversaries):
            if adv.kind in ("relay_oneway", "relay_twoway"):
                self.adv_attempts[index] = len(adv.victims)
                self.adv_successes[index] = set()
                for victim in adv.victims:
                    link = _Link(
                        kind=adv.kind,
                        a=adv.capture,
                        b=victim,
                        start=adv.start,
                        end=adv.end,
                        latency=adv.latency_s,
                        adversary=index,
                        rssi=adv.emit_rssi,
                        capture_id=adv.capture,
                        fanout_limit=adv.fanout_limit,
                    )
                    self._push(adv.start, self._tick_link, link, adv.start)
            elif adv.kind == "eavesdropper":
                for coverage in adv.sensors:
                    self._push(
                        coverage.start, self._tick_sensor, coverage, coverage.start
                    )
            elif adv.kind == "fake_claimer":
                self.adv_attempts[index] = adv.attempts
                self.adv_successes[index] = set()
                day = adv.at_day if adv.at_day is not None else config.duration_days - 1
                self._push(day * SECONDS_PER_DAY + CLAIM_TIME, self._fake_claims, index, adv)

        total_seconds = config.duration_days * SECONDS_PER_DAY
        for day in range(config.duration_days):
            base = day * SECONDS_PER_DAY
            self._push(base, self._midnight, day)
            self._push(base + NOON, self._noon_uploads, day)
            self._push(base + CHARGE_TIME, self._charge_tick)
        boundary = config.feed_cadence
        while boundary <= total_seconds:
            for offset in FETCH_OFFSETS:
                if boundary - offset >= 0:
                    self._push(boundary - offset, self._fetch_round)
            boundary += config.feed_cadence

        while self._queue:
            t, _, fn, args = heapq.heappop(self._queue)
            self._now = t
            fn(*args)
        return self._build_report()

    # -- radio ----------------------------------------------------------------------

    def _tick_link(self, link: _Link, t: int) -> None:
        if t >= link.end:
            return
        a, b = self.clients[link.a], self.clients[link.b]
        directions = [(a, b)]
        if link.kind in ("direct", "relay_twoway"):
            directions.append((b, a))
        for src, dst in directions:
            if not src.advertising(t):
                continue
            dropped = self.rng_channel.random() < self.config.channel_loss
            if dropped:
                continue
            identifier = src.identifier_at(t)
            rssi = link.rssi_at(t)
            if link.latency == 0:
                self._deliver(src, dst, identifier, rssi, t, t, link)
            else:
                self._push(
                    t + link.latency,
                    self._deliver,
                    src,
                    dst,
                    identifier,
                    rssi,
                    t,
                    t + link.latency,
                    link,
                )
        self._push(t + 1, self._tick_link, link, t + 1)

    def _deliver(
        self,
        src: _Client,
        dst: _Client,
        identifier: bytes,
        rssi: float,
        t_emit: int,
        t_arrive: int,
        link: _Link,
    ) -> None:
        if not dst.scanning(t_arrive):
            return
        if dst.scheme == "tracecorona":
            beacon = BeaconMessage(uuid=APP_UUID, ephemeral_id=identifier)
            request = dst.device.on_beacon(beacon, rssi, t_arrive)
            if request is not None:
                self._handle_handshake(dst, src, request, t_arrive, link)
        else:
            local = dst.local(t_arrive)
            dst.observations.append(baselines.Observation(identifier, local, rssi))
            self.gt_obs_prov[(dst.id, identifier, local)] = {
                "source": src.id,
                "via": link.adversary,
            }

    def _tick_sensor(self, coverage, t: int) -> None:
        if t >= coverage.end:
            return
        client = self.clients[coverage.device]
        if client.advertising(t):
            self.sensor_log.append(
                (coverage.sensor, t, client.id, client.identifier_at(t))
            )
        self._push(t + 1, self._tick_sensor, coverage, t + 1)

    # -- handshakes --------------------------------------------------------------------

    def _handle_handshake(self, requester: _Client, owner: _Client, request, t: int, link: _Link) -> None:
        if link.kind == "relay_oneway":
            requester.device.abort_handshake(
                request.frame_index, request.peer_ephemeral_id
            )
            return
        if link.kind == "relay_twoway":
            capture = self.clients[link.capture_id]
            victim = owner if owner.id != capture.id else requester
            frame = capture.device.current_frame(t)
            key = (link.adversary, capture.id, frame)
            admitted = self.relay_admitted.setdefault(key, set())
            if victim.id not in admitted:
                if len(admitted) >= link.fanout_limit:
                    requester.device.abort_handshake(
                        request.frame_index, request.peer_ephemeral_id
                    )
                    return
                admitted.add(victim.id)
        if not requester.device.try_open_channel():
            requester.device.abort_handshake(
                request.frame_index, request.peer_ephemeral_id
            )
            return
        if not owner.device.try_open_channel():
            requester.device.close_channel()
            requester.device.abort_handshake(
                request.frame_index, request.peer_ephemeral_id
            )
            return

        latency = link.latency
        requester_ei = requester.device.ephemeral_id(requester.device.current_frame(t))
        owner_ei = request.peer_ephemeral_id
        if requester_ei < owner_ei:
            initiator, init_ei, responder, resp_ei = requester, requester_ei, owner, owner_ei
        else:
            initiator, init_ei, responder, resp_ei = owner, owner_ei, requester, requester_ei
        # The owner side must not race a duplicate request of its own.
        owner.device.mark_handshake_pending(
            owner.device.current_frame(t), requester_ei
        )

        init_frame = initiator.device.current_frame(t)
        init_pub = initiator.device.keypair(init_frame).public_key
        resp_frame = responder.device.current_frame(t + latency)
        resp_pub = responder.device.keypair(resp_frame).public_key
        self._push(
            t + 1 + latency,
            self._complete_handshake,
            responder, init_pub, init_frame, init_ei, initiator.id, link,
            t + 1 + latency,
        )
        self._push(
            t + 1 + 2 * latency,
            self._complete_handshake,
            initiator, resp_pub, resp_frame, resp_ei, responder.id, link,
            t + 1 + 2 * latency,
        )

    def _complete_handshake(
        self,
        client: _Client,
        peer_pub: bytes,
        peer_frame: int,
        peer_ei: bytes,
        peer_hint: str,
        link: _Link,
        t: int,
    ) -> None:
        client.device.close_channel()
        try:
            token = client.device.complete_handshake(
                peer_pub, peer_frame, t,
                peer_ephemeral_id=peer_ei, peer_hint=peer_hint,
            )
        except (FrameMismatch, InvalidPoint):
            return
        self.gt_token_prov[(client.id, token.frame_index, peer_ei)] = {
            "peer": peer_hint,
            "via": link.adversary,
        }
        if link.kind == "relay_twoway" and client.id != link.capture_id:
            capture_frame = self.clients[link.capture_id].device.current_frame(t)
            key = (link.adversary, link.capture_id, capture_frame)
            self.relay_completed.setdefault(key, set()).add(client.id)

    # -- daily cadence ---------------------------------------------------------------------

    def _midnight(self, day: int) -> None:
        self.server.advance_epoch(day)
        for client in self.clients.values():
            client.device.purge_expired(day * SECONDS_PER_DAY)

    def _charge_tick(self) -> None:
        for client in self.clients.values():
            client.device.charge()

    def _noon_uploads(self, day: int) -> None:
        t = day * SECONDS_PER_DAY + NOON
        for device_id, infection in self.gt_infections.items():
            if infection.uploaded or infection.result_day != day:
                continue
            client = self.clients[device_id]
            infection.uploaded = True
            if client.scheme == "tracecorona":
                self._upload_tracecorona(client, t)
            elif client.scheme == "decentralized":
                self._upload_decentralized(client, t, day)
            else:
                self._upload_centralized(client, t)

    def _eligible_tokens(self, client: _Client):
        client.device.charge()
        drops = [
            r for r in self.config.redactions if r.device == client.id
        ]

        def redacted(token) -> bool:
            return any(r.drop_start <= token.start_time < r.drop_end for r in drops)

        return exposure.redact_tokens(client.device.store, redacted)

    def _upload_tracecorona(self, client: _Client, t: int) -> None:
        tokens = self._eligible_tokens(client)
        pairs = [
            (token, exposure.build_upload_records([token])[0])
            for token in tokens
            if token.secret is not None
        ]
        if not pairs:
            return
        records = [record for _, record in pairs]
        tan = self.authority.issue_tan(client.id, t)
        body = wire.encode_upload_infected(tan.value, records)
        response = wire.handle_request(self.server, body)
        self.payload_up += 4 + len(body)
        self.payload_down += 4 + len(response)
        if response[0] != wire.STATUS_ACCEPTED:
            return
        for token, record in pairs:
            # A client never re-matches its own uploads.
            client.seen_records.add((record.hash, record.ciphertext))
            prov = self.gt_token_prov.get(
                (client.id, token.frame_index, self._peer_ei_of(client, token))
            )
            self.gt_record_origin[record.hash] = {
                "uploader": client.id,
                "peer": token.peer_hint,
                "via": prov["via"] if prov else None,
                "tag": "direct",
            }

    def _peer_ei_of(self, client: _Client, token) -> bytes:
        for (frame, peer_ei), stored in client.device.store.items():
            if stored is token:
                return peer_ei
        return b""

    def _upload_decentralized(self, client: _Client, t: int, day: int) -> None:
        first = max(0, day - self.config.retention_days + 1)
        keys = [client.daily_key(d) for d in range(first, day + 1)]
        self.dec_server.publish(keys)
        for key in keys:
            self.gt_published_keys.append((client.id, key))
        self.payload_up += 4 + 1 + len(keys) * 20

    def _upload_centralized(self, client: _Client, t: int) -> None:
        tan = self.authority.issue_tan(client.id, t)
        if not self.authority.verify_tan(tan.value):
            return
        uploaded = [(obs.tempid, obs.time) for obs in client.observations]
        self.payload_up += 4 + 2 + len(tan.value) + 24 * len(uploaded)
        matched = self.cen_server.ingest_upload(client.user_id, uploaded)
        id_to_client = {
            c.user_id: c for c in self.clients.values() if c.user_id is not None
        }
        for user_id in matched:
            target = id_to_client.get(user_id)
            if target is None:
                continue
            genuine, via = self._central_match_provenance(client, target, uploaded)
            self.payload_down += 21
            self._record_notification(
                target,
                t,
                "direct",
                False,
                matched=user_id.hex(),
                source=client.id,
                via=via,
                genuine=genuine,
            )

    def _central_match_provenance(self, uploader, target, uploaded):
        """Did any genuinely observed identifier of `target` trigger the
        match, or only relayed ones?"""
        best_via = None
        for tempid, timestamp in uploaded:
            t_k = timestamp // baselines.CENTRAL_INTERVAL_SECONDS
            if self.cen_server.tempid_for(target.user_id, t_k) != tempid:
                continue
            prov = self.gt_obs_prov.get((uploader.id, tempid, timestamp))
            if prov is None:
                continue
            if prov["via"] is None and prov["source"] == target.id:
                return True, None
            best_via = prov["via"]
        return False, best_via

    # -- feed matching ------------------------------------------------------------------------

    def _fetch_round(self) -> None:
        t = self._now
        for client in self.clients.values():
            if client.scheme == "tracecorona":
                self._fetch_tracecorona(client, t)
            elif client.scheme == "decentralized":
                self._fetch_decentralized(client, t)

    def _fetch_tracecorona(self, client: _Client, t: int) -> None:
        stats = self.server.stats_snapshot()
        if stats["records_published"] == client.last_record_count:
            return
        client.last_record_count = stats["records_published"]
        client.device.charge()
        shuffle_seed = _sub_seed(self.config.seed, "shuffle", client.id, t) & (2**63 - 1)
        body = wire.encode_fetch_feed(client.next_since, shuffle_seed)
        response = wire.handle_request(self.server, body)
        self.payload_up += 4 + len(body)
        self.payload_down += 4 + len(response)
        (epoch,) = struct.unpack_from(">I", response, 1)
        records, _ = wire.decode_records(response, 5)
        client.next_since = epoch
        unseen = []
        for record in records:
            key = (record.hash, record.ciphertext)
            if key in client.seen_records:
                continue
            client.seen_records.add(key)
            unseen.append(record)
        if not unseen:
            return
        feed = wire.PublishedFeed(records=tuple(unseen), feed_epoch=epoch)
        found = exposure.match_feed(client.device.store, feed, self.config.epsilon)
        if not found:
            return
        client.all_notifications.extend(found)
        got_direct = False
        for notification in found:
            origin = self.gt_record_origin.get(notification.matched_hash)
            genuine = bool(
                origin and origin["via"] is None and origin["peer"] == client.id
            )
            via = origin["via"] if origin else None
            self._record_notification(
                client,
                t,
                notification.level.value,
                notification.superspreader_flag,
                matched=notification.matched_hash.hex(),
                source=origin["uploader"] if origin else None,
                via=via,
                genuine=genuine,
            )
            self.server.report_notification(
                notification.level.value, notification.superspreader_flag
            )
            if notification.level is exposure.NotificationLevel.DIRECT:
                got_direct = True
                client.matched_direct_hashes.add(notification.matched_hash)
        if got_direct:
            self._react_to_direct(client, t)

    def _react_to_direct(self, client: _Client, t: int) -> None:
        day = t // SECONDS_PER_DAY
        timeline = self.config.disease_timeline
        infection = self.gt_infections.get(client.id)
        if infection and not infection.uploaded:
            triggered = day + timeline.symptoms_to_test_days + timeline.test_to_result_days
            infection.result_day = min(infection.result_day, triggered)
        if self.config.second_level_enabled and not client.second_level_done:
            client.second_level_done = True
            self._upload_second_level(client, t)
        if (
            self.config.superspreader_enabled
            and not client.superspreader_done
            and len(client.matched_direct_hashes) >= self.config.superspreader_threshold
        ):
            client.superspreader_done = True
            self._upload_superspreader(client, t)

    def _own_records_excluding_matches(self, client: _Client):
        tokens = [
            token
            for token in self._eligible_tokens(client)
            if token.secret is not None
            and crypto.token_hash(token.secret) not in client.matched_direct_hashes
        ]
        pairs = [
            (token, exposure.build_upload_records([token])[0]) for token in tokens
        ]
        return pairs

    def _proof_secrets(self, client: _Client) -> list[bytes]:
        secrets = []
        for token in client.device.store.tokens():
            if token.secret is None:
                continue
            if crypto.token_hash(token.secret) in client.matched_direct_hashes:
                secrets.append(token.secret)
        return secrets

    def _upload_second_level(self, client: _Client, t: int) -> None:
        proofs = self._proof_secrets(client)
        if not proofs:
            return
        pairs = self._own_records_excluding_matches(client)
        records = [record for _, record in pairs]
        body = wire.encode_upload_second_level(proofs[0], records)
        response = wire.handle_request(self.server, body)
        self.payload_up += 4 + len(body)
        self.payload_down += 4 + len(response)
        if response[0] != wire.STATUS_ACCEPTED:
            return
        for token, record in pairs:
            client.seen_records.add((record.hash, record.ciphertext))
            self.gt_record_origin[record.hash] = {
                "uploader": client.id,
                "peer": token.peer_hint,
                "via": None,
                "tag": "second_level",
            }

    def _upload_superspreader(self, client: _Client, t: int) -> None:
        proofs = exposure.detect_superspreader_candidate(
            client.device.store,
            [
                n
                for n in client.all_notifications
                if n.level is exposure.NotificationLevel.DIRECT
            ],
            self.config.superspreader_threshold,
        )
        if proofs is None:
            return
        pairs = self._own_records_excluding_matches(client)
        records = [record for _, record in pairs]
        body = wire.encode_upload_superspreader(proofs, records)
        response = wire.handle_request(self.server, body)
        self.payload_up += 4 + len(body)
        self.payload_down += 4 + len(response)
        if response[0] != wire.STATUS_ACCEPTED:
            return
        for token, record in pairs:
            client.seen_records.add((record.hash, record.ciphertext))
            self.gt_record_origin[record.hash] = {
                "uploader": client.id,
                "peer": token.peer_hint,
                "via": None,
                "tag": "possible_superspreader",
            }

    def _fetch_decentralized(self, client: _Client, t: int) -> None:
        published = self.dec_server.download()
        if len(published) == client.last_key_count:
            return
        new_keys = published[client.last_key_count :]
        client.last_key_count = len(published)
        self.payload_up += 4 + 5
        self.payload_down += 4 + 1 + 20 * len(new_keys)
        matches = baselines.match_observations(
            new_keys,
            client.observations,
            replay_window=self.config.replay_window,
            kiss_bug=self.config.kiss_bug,
        )
        owners = {
            (key.tek, key.day): owner for owner, key in self.gt_published_keys
        }
        for match in matches:
            dedupe = (match.key.tek, match.key.day)
            if dedupe in client.notified_keys:
                continue
            client.notified_keys.add(dedupe)
            owner = owners.get(dedupe)
            prov = self.gt_obs_prov.get(
                (client.id, match.observation.tempid, match.observation.time)
            )
            genuine = bool(
                prov and prov["via"] is None and owner is not None and prov["source"] == owner
            )
            via = prov["via"] if prov else None
            self._record_notification(
                client,
                t,
                "direct",
                False,
                matched=match.observation.tempid.hex(),
                source=owner,
                via=via,
                genuine=genuine,
            )

    # -- adversaries ---------------------------------------------------------------------------

    def _fake_claims(self, index: int, adv) -> None:
        scheme = self.config.scheme
        if scheme == "tracecorona":
            accepted = 0
            for _ in range(adv.attempts):
                proof = self.rng_adversary.randbytes(32)
                dummy = wire.TokenUploadRecord(
                    hash=self.rng_adversary.randbytes(16),
                    ciphertext=self.rng_adversary.randbytes(36),
                )
                result = self.server.upload_second_level(proof, [dummy])
                if result.accepted:
                    accepted += 1
            self.claim_results[index] = (adv.attempts, accepted)
        else:
            published = len(self.dec_server.download())
            successes = adv.attempts if published > 0 else 0
            self.claim_results[index] = (adv.attempts, successes)

    # -- notifications and report -----------------------------------------------------------------

    def _record_notification(
        self,
        client: _Client,
        t: int,
        level: str,
        superspreader_flag: bool,
        matched: str,
        source: str | None,
        via: int | None,
        genuine: bool,
    ) -> None:
        day = t // SECONDS_PER_DAY
        latency = None
        if genuine and level == "direct" and source in self.gt_infections:
            latency = day - self.gt_infections[source].contagious_day
        self.match_events.append((client.id, level, matched, t))
        self.notifications.append(
            {
                "device": client.id,
                "time": t,
                "day": day,
                "level": level,
                "superspreader_flag": superspreader_flag,
                "matched": matched,
                "genuine": genuine,
                "source": source,
                "latency_days": latency,
            }
        )
        if client.id not in self.first_notification_day:
            self.first_notification_day[client.id] = day
        if latency is not None and client.id not in self.first_direct_latency:
            self.first_direct_latency[client.id] = latency
        if not genuine:
            self.false_count += 1
            if via is not None:
                self.adv_successes.setdefault(via, set()).add(client.id)

    def _linkability(self) -> tuple[dict, dict, dict]:
        spans: dict[str, int] = {c.id: 0 for c in self.clients.values()}
        by_identifier: dict[tuple[str, bytes], list[int]] = {}
        for _sensor, t, device_id, identifier in self.sensor_log:
            by_identifier.setdefault((device_id, identifier), []).append(t)
        for (device_id, _identifier), times in by_identifier.items():
            spans[device_id] = max(spans[device_id], max(times) - min(times))

        recovered: dict[str, dict] = {}
        gt_ids: dict[str, dict] = {}
        for owner, key in self.gt_published_keys:
            derived = derive_tempids_decentralized(key.tek, key.day)
            derived_set = set(derived)
            times = [
                t
                for _sensor, t, device_id, identifier in self.sensor_log
                if device_id == owner and identifier in derived_set
            ]
            if times:
                spans[owner] = max(spans[owner], max(times) - min(times))
            recovered.setdefault(owner, {})[str(key.day)] = sorted(
                tempid.hex() for tempid in derived
            )
            true_key = self.clients[owner].daily_key(key.day)
            gt_ids.setdefault(owner, {})[str(key.day)] = sorted(
                tempid.hex()
                for tempid in derive_tempids_decentralized(true_key.tek, true_key.day)
            )
        return spans, recovered, gt_ids

    def _build_report(self) -> ScenarioReport:
        attack_details = {}
        total_attempts = 0
        total_successes = 0
        for index, adv in enumerate(self.config.adversaries):
            if adv.kind == "eavesdropper":
                continue
            if adv.kind == "fake_claimer":
                attempts, successes = self.claim_results.get(index, (adv.attempts, 0))
            else:
                attempts = self.adv_attempts.get(index, 0)
                successes = len(self.adv_successes.get(index, ()))
            attack_details[str(index)] = {
                "kind": adv.kind,
                "attempts": attempts,
                "successes": successes,
                "success_rate": successes / attempts if attempts else 0.0,
            }
            total_attempts += attempts
            total_successes += successes
        rate = total_successes / total_attempts if total_attempts else 0.0

        relay_fanout = {}
        for index, adv in enumerate(self.config.adversaries):
            if adv.kind != "relay_twoway":
                continue
            per_frame = [
                len(victims)
                for (adv_index, _capture, _frame), victims in self.relay_completed.items()
                if adv_index == index
            ]
            relay_fanout[str(index)] = max(per_frame) if per_frame else 0

        spans, recovered, gt_ids = self._linkability()

        return ScenarioReport(
            name=self.config.name,
            scheme=self.config.scheme,
            seed=self.config.seed,
            config_digest=self.config.digest(),
            duration_days=self.config.duration_days,
            notifications=self.notifications,
            false_notification_count=self.false_count,
            attack_success_rate=rate,
            attack_details=attack_details,
            relay_fanout=relay_fanout,
            max_linkability_window_s=spans,
            linkability_recovered=recovered,
            gt_day_identifiers=gt_ids,
            notification_latency_days=dict(sorted(self.first_direct_latency.items())),
            first_notification_day=dict(sorted(self.first_notification_day.items())),
            payload_bytes_uploaded=self.payload_up,
            payload_bytes_downloaded=self.payload_down,
            server_stats=self.server.stats_snapshot(),
            device_token_counts={
                c.id: len(c.device.store) for c in self.clients.values()
            },
            payload_notes=payload.payload_notes(),
        )


def run_scenario(config: ScenarioConfig) -> ScenarioReport:
    """Execute one scenario; bit-identical reports for identical
    (config, seed)."""
    config.validate()
    return Engine(config).run()
