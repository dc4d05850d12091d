"""Generic centralized and decentralized baseline schemes.

These are the attack-comparison targets: a centralized scheme where the
server derives and matches temporary identifiers (with an optional
BlueTrace-style master-key variant), and a decentralized daily-key
scheme where clients match published keys locally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from . import crypto

#: 15-minute identifier intervals per day in the centralized scheme.
CENTRAL_INTERVAL_SECONDS = 900
CENTRAL_INTERVALS_PER_DAY = 96

#: Observations match a published identifier when they fall inside its
#: 10-minute validity slot widened by this many seconds on either side.
DEFAULT_REPLAY_WINDOW = 7200


class Observation(NamedTuple):
    """A broadcast identifier as recorded by a listening device."""

    tempid: bytes
    time: int
    rssi: float


@dataclass(frozen=True)
class DecentralizedDailyKey:
    tek: bytes
    day: int

    def __post_init__(self) -> None:
        if len(self.tek) != crypto.TEK_BYTES:
            raise ValueError("tek must be 16 bytes")


class BaselineMatch(NamedTuple):
    """One client-side match of an observation against published keys."""

    key: "DecentralizedDailyKey"
    slot: int
    observation: Observation


# -- centralized scheme -------------------------------------------------------


@dataclass
class CentralizedUpload:
    uploader: bytes
    observations: list[tuple[bytes, int]]


class CentralizedServer:
    """Tracing provider of the centralized baseline.

    Holds the full pseudonym registry, so it can rederive every user's
    identifiers and reconstruct who met whom; that power is the privacy
    weakness the comparison scenarios demonstrate.
    """

    def __init__(self, rng, bluetrace: bool = False):
        self._rng = rng
        self.bluetrace = bluetrace
        self._master_key = rng.randbytes(32) if bluetrace else None
        self._registry: dict[bytes, dict] = {}
        self._uploads: list[CentralizedUpload] = []

    def register(self, context: str = "") -> bytes:
        while True:
            user_id = self._rng.randbytes(16)
            if user_id not in self._registry:
                break
        self._registry[user_id] = {"context": context, "ivs": {}}
        return user_id

    def _bluetrace_iv(self, user_id: bytes, t_k: int) -> bytes:
        ivs = self._registry[user_id]["ivs"]
        if t_k not in ivs:
            ivs[t_k] = self._rng.randbytes(16)
        return ivs[t_k]

    def tempid_for(self, user_id: bytes, t_k: int) -> bytes:
        """Identifier of a registered user for interval ``t_k``.

        In the BlueTrace variant only the server can compute this; in
        the plain variant clients rederive it from their pseudonym.
        """
        if user_id not in self._registry:
            raise KeyError("unknown user")
        if self.bluetrace:
            iv = self._bluetrace_iv(user_id, t_k)
            return crypto.derive_tempid_bluetrace(
                user_id, t_k, iv, b"auth", self._master_key
            )
        return crypto.derive_tempid_centralized(user_id, t_k)

    def tempid_batch(self, user_id: bytes, t_ks: list[int]) -> list[bytes]:
        """Pre-generated identifiers delivered to the client app."""
        return [self.tempid_for(user_id, t_k) for t_k in t_ks]

    def match(self, uploaded: list[tuple[bytes, int]]) -> list[bytes]:
        """UserIDs whose derived identifiers equal the uploaded ones at
        the uploaded timestamps.  The uploader is TAN-verified upstream."""
        matched = []
        for user_id in self._registry:
            for tempid, timestamp in uploaded:
                t_k = timestamp // CENTRAL_INTERVAL_SECONDS
                if self.tempid_for(user_id, t_k) == tempid:
                    matched.append(user_id)
                    break
        return matched

    def ingest_upload(
        self, uploader: bytes, uploaded: list[tuple[bytes, int]]
    ) -> list[bytes]:
        """Store an infected user's observation upload and return the
        matched contacts to notify."""
        self._uploads.append(CentralizedUpload(uploader, list(uploaded)))
        return self.match(uploaded)

    def contact_edges(self) -> set[tuple[bytes, bytes]]:
        """The encounter graph the server can reconstruct from its own
        state: one edge per (infected uploader, matched user)."""
        edges = set()
        for upload in self._uploads:
            for user_id in self.match(upload.observations):
                edges.add((upload.uploader, user_id))
        return edges


# -- decentralized scheme -----------------------------------------------------


@dataclass
class DecentralizedServer:
    """Pass-through key publisher of the decentralized baseline."""

    published: list[DecentralizedDailyKey] = field(default_factory=list)

    def publish(self, teks: list[DecentralizedDailyKey]) -> None:
        self.published.extend(teks)

    def download(self) -> list[DecentralizedDailyKey]:
        return list(self.published)


def new_daily_key(identity_seed: bytes, day: int) -> DecentralizedDailyKey:
    """Deterministic per-device daily key for simulation use."""
    import hashlib

    tek = hashlib.sha256(b"tc-tek" + identity_seed + day.to_bytes(8, "big")).digest()[
        :16
    ]
    return DecentralizedDailyKey(tek=tek, day=day)


def tempid_at(key: DecentralizedDailyKey, local_time: int) -> bytes:
    """The identifier a device broadcasts at a local time within the
    key's day."""
    slot = (local_time % 86400) // crypto.DECENTRALIZED_SLOT_SECONDS
    return crypto.derive_tempid_decentralized(key.tek, key.day, slot)


def match_observations(
    teks: list[DecentralizedDailyKey],
    observations: list[Observation],
    replay_window: int = DEFAULT_REPLAY_WINDOW,
    kiss_bug: bool = False,
) -> list[BaselineMatch]:
    """Client-side matching of published daily keys against recorded
    observations.

    An observation matches when its identifier appears among a key's
    derived slot identifiers and its timestamp lies within the slot's
    validity widened by ``replay_window`` seconds.  With ``kiss_bug``
    set, any observation made on the key's own day matches regardless
    of slot timing (the same-day acceptance flaw).
    """
    matches = []
    for key in teks:
        derived = crypto.derive_tempids_decentralized(key.tek, key.day)
        slots = {tempid: slot for slot, tempid in enumerate(derived)}
        day_start = key.day * 86400
        for obs in observations:
            slot = slots.get(obs.tempid)
            if slot is None:
                continue
            slot_start = day_start + slot * crypto.DECENTRALIZED_SLOT_SECONDS
            slot_end = slot_start + crypto.DECENTRALIZED_SLOT_SECONDS
            in_window = slot_start - replay_window <= obs.time <= slot_end + replay_window
            same_day = obs.time // 86400 == key.day
            if in_window or (kiss_bug and same_day):
                matches.append(BaselineMatch(key, slot, obs))
    return matches


def decentralized_publish_and_match(
    server: DecentralizedServer,
    teks: list[DecentralizedDailyKey],
    client_observations: list[Observation],
    replay_window: int = DEFAULT_REPLAY_WINDOW,
    kiss_bug: bool = False,
) -> list[BaselineMatch]:
    """Publish keys through the server, then run one client's matching
    over everything published so far."""
    server.publish(teks)
    return match_observations(
        server.download(), client_observations, replay_window, kiss_bug
    )
