"""Client device state machine for the encounter-token scheme.

A device advertises a rotating ephemeral identifier, scans for peers,
and opens a handshake once a peer has been observed continuously for
the minimum encounter duration.  Completed handshakes yield encounter
tokens kept in a 14-day local store.

All times handed to a device are true simulation seconds; the device
converts to its own (possibly skewed) local clock internally, and every
recorded timestamp is local.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from . import crypto
from .crypto import EncounterToken, FrameKeyPair, TimeFramePolicy

#: Fixed application identifier broadcast in every advertising message.
APP_UUID = hashlib.sha256(b"tc-app-uuid").digest()[:16]

#: Advertising duty cycle: per minute, 40 s on followed by 20 s idle.
ADVERTISE_PERIOD = 60
ADVERTISE_ON = 40
#: Scanning duty cycle: per 50 s, 30 s on followed by 20 s idle.
SCAN_PERIOD = 50
SCAN_ON = 30
#: Continuous observation breaks after this many seconds of silence;
#: the duty cycles above guarantee a sighting at least every 2 minutes.
CONTINUITY_GAP = 120
#: Reliable concurrent BLE connection budget of a handset.
MAX_OPEN_CHANNELS = 8

RETENTION_DAYS = 14


class FrameMismatch(Exception):
    """Handshake peers disagree on the current time frame."""


@dataclass(frozen=True)
class BeaconMessage:
    """One advertising message: app UUID plus the rotating ephemeral id
    (the 256-bit payload broadcast on the proximity channel)."""

    uuid: bytes
    ephemeral_id: bytes
    carries_pubkey_offer: bool = True

    def encode(self) -> bytes:
        return self.uuid + self.ephemeral_id


@dataclass
class NeighborObservation:
    ephemeral_id: bytes
    first_seen: int
    last_seen: int
    rssi_samples: list[tuple[int, float]] = field(default_factory=list)


@dataclass(frozen=True)
class HandshakeRequest:
    """Emitted by a scanning device once a neighbor crosses the dwell
    threshold; the network layer routes it to the peer."""

    peer_ephemeral_id: bytes
    frame_index: int
    requested_at: int


@dataclass(frozen=True)
class ProtocolAction:
    """Clock-driven action emitted by :meth:`Device.advance_clock`."""

    kind: str  # advertise_open | advertise_close | scan_open | scan_close | rotate_frame
    at: int  # local time
    frame_index: int | None = None


class TokenStore:
    """Local encounter tokens, at most one per (frame, peer context)."""

    def __init__(self, retention_days: int = RETENTION_DAYS):
        self.retention_days = retention_days
        self._tokens: dict[tuple[int, bytes], EncounterToken] = {}

    def add(self, frame_index: int, peer_ephemeral_id: bytes, token: EncounterToken) -> None:
        self._tokens[(frame_index, peer_ephemeral_id)] = token

    def get(self, frame_index: int, peer_ephemeral_id: bytes) -> EncounterToken | None:
        return self._tokens.get((frame_index, peer_ephemeral_id))

    def tokens(self) -> list[EncounterToken]:
        return list(self._tokens.values())

    def items(self) -> list[tuple[tuple[int, bytes], EncounterToken]]:
        return list(self._tokens.items())

    def __len__(self) -> int:
        return len(self._tokens)

    def purge(self, now_local: int) -> int:
        horizon = now_local - self.retention_days * 86400
        stale = [k for k, t in self._tokens.items() if t.start_time < horizon]
        for key in stale:
            del self._tokens[key]
        return len(stale)


class Device:
    """One simulated handset running the token protocol."""

    def __init__(
        self,
        device_id: str,
        identity_seed: bytes,
        policy: TimeFramePolicy | None = None,
        clock_offset: int = 0,
        retention_days: int = RETENTION_DAYS,
        derive_mode: str = "eager",
        max_channels: int = MAX_OPEN_CHANNELS,
    ):
        if derive_mode not in ("eager", "deferred"):
            raise ValueError("derive_mode must be 'eager' or 'deferred'")
        self.device_id = device_id
        self.policy = policy or TimeFramePolicy()
        self.clock_offset = clock_offset
        self.derive_mode = derive_mode
        self.max_channels = max_channels
        self.store = TokenStore(retention_days)
        self._identity_seed = identity_seed
        self._key_seed = int.from_bytes(
            hashlib.sha256(b"tc-key" + identity_seed).digest(), "big"
        )
        self._neighbors: dict[bytes, NeighborObservation] = {}
        self._pending_handshakes: set[tuple[int, bytes]] = set()
        self._pending_derivations: dict[tuple[int, bytes], bytes] = {}
        self._keypair_cache: dict[int, FrameKeyPair] = {}
        self._last_local: int | None = None
        self._open_channels = 0
        self.peak_open_channels = 0

    # -- clocks and rotation ------------------------------------------------

    def local_time(self, now: int) -> int:
        return now + self.clock_offset

    def current_frame(self, now: int) -> int:
        return self.policy.frame_of(self.local_time(now))

    def ephemeral_id(self, frame_index: int) -> bytes:
        digest = hashlib.sha256(
            b"tc-ei" + self._identity_seed + frame_index.to_bytes(8, "big")
        )
        return digest.digest()[:16]

    def keypair(self, frame_index: int) -> FrameKeyPair:
        kp = self._keypair_cache.get(frame_index)
        if kp is None:
            kp = crypto.generate_frame_keypair(
                frame_index, random.Random(self._key_seed)
            )
            self._keypair_cache[frame_index] = kp
            if len(self._keypair_cache) > 4:
                oldest = min(self._keypair_cache)
                del self._keypair_cache[oldest]
        return kp

    def beacon(self, now: int) -> BeaconMessage:
        return BeaconMessage(
            uuid=APP_UUID, ephemeral_id=self.ephemeral_id(self.current_frame(now))
        )

    def is_advertising(self, now: int) -> bool:
        return self.local_time(now) % ADVERTISE_PERIOD < ADVERTISE_ON

    def is_scanning(self, now: int) -> bool:
        return self.local_time(now) % SCAN_PERIOD < SCAN_ON

    def advance_clock(self, now: int) -> list[ProtocolAction]:
        """Process duty-cycle and frame boundaries in (last, now].

        The first call only anchors the clock; subsequent calls emit one
        action per boundary crossed.  ``now`` must not go backwards.
        """
        local = self.local_time(now)
        if self._last_local is None:
            self._last_local = local
            return []
        if local < self._last_local:
            raise ValueError("device clock must be monotonic")
        actions: list[ProtocolAction] = []
        prev = self._last_local
        for period, on, open_kind, close_kind in (
            (ADVERTISE_PERIOD, ADVERTISE_ON, "advertise_open", "advertise_close"),
            (SCAN_PERIOD, SCAN_ON, "scan_open", "scan_close"),
        ):
            t = (prev // period + 1) * period
            while t <= local:
                actions.append(ProtocolAction(open_kind, t))
                if t + on <= local:
                    actions.append(ProtocolAction(close_kind, t + on))
                t += period
        t = (prev // self.policy.frame_period + 1) * self.policy.frame_period
        while t <= local:
            frame = self.policy.frame_of(t)
            actions.append(ProtocolAction("rotate_frame", t, frame_index=frame))
            t += self.policy.frame_period
        actions.sort(key=lambda a: (a.at, a.kind))
        self._last_local = local
        return actions

    # -- neighbor tracking --------------------------------------------------

    def on_beacon(self, beacon: BeaconMessage, rssi: float, now: int) -> HandshakeRequest | None:
        """Record a sighting; request a handshake once the dwell
        threshold is crossed and no token exists for this peer+frame."""
        if not self.is_scanning(now):
            return None
        if beacon.uuid != APP_UUID:
            return None
        local = self.local_time(now)
        ei = beacon.ephemeral_id
        obs = self._neighbors.get(ei)
        if obs is None:
            obs = NeighborObservation(ei, first_seen=local, last_seen=local)
            self._neighbors[ei] = obs
        elif local - obs.last_seen > CONTINUITY_GAP:
            obs.first_seen = local
            obs.rssi_samples.clear()
        obs.last_seen = local
        obs.rssi_samples.append((local, rssi))

        if local - obs.first_seen < self.policy.min_encounter_duration:
            return None
        frame = self.policy.frame_of(local)
        key = (frame, ei)
        if self.store.get(frame, ei) is not None or key in self._pending_handshakes:
            self._refresh_token(frame, ei, local)
            return None
        self._pending_handshakes.add(key)
        return HandshakeRequest(peer_ephemeral_id=ei, frame_index=frame, requested_at=local)

    def _refresh_token(self, frame: int, ei: bytes, local: int) -> None:
        token = self.store.get(frame, ei)
        obs = self._neighbors.get(ei)
        if token is None or obs is None:
            return
        frame_end = self.policy.frame_end(frame)
        token.duration = min(obs.last_seen, frame_end) - obs.first_seen
        since_start = [s for t, s in obs.rssi_samples if t >= obs.first_seen]
        if since_start:
            token.max_signal_strength = max(
                token.max_signal_strength, max(since_start)
            )

    def abort_handshake(self, frame_index: int, peer_ephemeral_id: bytes) -> None:
        self._pending_handshakes.discard((frame_index, peer_ephemeral_id))

    def mark_handshake_pending(self, frame_index: int, peer_ephemeral_id: bytes) -> None:
        """Suppress this device's own dwell trigger while the peer-initiated
        handshake for the same pair is in flight."""
        self._pending_handshakes.add((frame_index, peer_ephemeral_id))

    # -- connection budget --------------------------------------------------

    def try_open_channel(self) -> bool:
        if self._open_channels >= self.max_channels:
            return False
        self._open_channels += 1
        self.peak_open_channels = max(self.peak_open_channels, self._open_channels)
        return True

    def close_channel(self) -> None:
        if self._open_channels > 0:
            self._open_channels -= 1

    @property
    def open_channels(self) -> int:
        return self._open_channels

    # -- handshake completion -----------------------------------------------

    def complete_handshake(
        self,
        peer_public: bytes,
        peer_frame: int,
        now: int,
        peer_ephemeral_id: bytes = b"",
        peer_hint: str = "",
    ) -> EncounterToken:
        """Derive (or defer) the encounter token with a peer.

        The recorded ``start_time`` is this side's local clock at
        completion; with honest peers the two sides therefore differ by
        at most the sum of their clock offsets.
        """
        local = self.local_time(now)
        frame = self.policy.frame_of(local)
        if peer_frame != frame:
            self.abort_handshake(peer_frame, peer_ephemeral_id)
            self.abort_handshake(frame, peer_ephemeral_id)
            raise FrameMismatch(f"peer frame {peer_frame} != own frame {frame}")
        kp = self.keypair(frame)
        if self.derive_mode == "eager":
            secret = crypto.derive_token(kp.private_key, peer_public)
        else:
            crypto.validate_public_key(peer_public)
            secret = None
        obs = self._neighbors.get(peer_ephemeral_id)
        if obs is not None:
            first_seen = obs.first_seen
            samples = [s for t, s in obs.rssi_samples if t >= first_seen]
            max_rssi = max(samples) if samples else -127.0
        else:
            first_seen = local
            max_rssi = -127.0
        token = EncounterToken(
            secret=secret,
            start_time=local,
            duration=min(local, self.policy.frame_end(frame)) - first_seen,
            max_signal_strength=max_rssi,
            frame_index=frame,
            peer_hint=peer_hint,
        )
        self.store.add(frame, peer_ephemeral_id, token)
        self._pending_handshakes.discard((frame, peer_ephemeral_id))
        if secret is None:
            self._pending_derivations[(frame, peer_ephemeral_id)] = peer_public
        return token

    def charge(self, now: int | None = None) -> int:
        """Run deferred token derivations (the charging tick)."""
        derived = 0
        for (frame, ei), peer_public in list(self._pending_derivations.items()):
            token = self.store.get(frame, ei)
            if token is None:
                del self._pending_derivations[(frame, ei)]
                continue
            kp = self.keypair(frame)
            token.secret = crypto.derive_token(kp.private_key, peer_public)
            del self._pending_derivations[(frame, ei)]
            derived += 1
        return derived

    def purge_expired(self, now: int) -> int:
        local = self.local_time(now)
        removed = self.store.purge(local)
        stale = [
            ei
            for ei, obs in self._neighbors.items()
            if local - obs.last_seen > 2 * CONTINUITY_GAP
        ]
        for ei in stale:
            del self._neighbors[ei]
        return removed

    # -- reporting ----------------------------------------------------------

    def snapshot(self) -> dict:
        """Serializable state summary; contains no secrets, private
        keys, or simulator ground truth."""
        tokens = sorted(
            self.store.tokens(), key=lambda t: (t.start_time, t.frame_index)
        )
        return {
            "device_id": self.device_id,
            "clock_offset": self.clock_offset,
            "token_count": len(tokens),
            "tokens": [
                {
                    "hash": crypto.token_hash(t.secret).hex() if t.secret else None,
                    "start_time": t.start_time,
                    "duration": t.duration,
                    "max_signal_strength": t.max_signal_strength,
                    "frame_index": t.frame_index,
                }
                for t in tokens
            ],
        }
