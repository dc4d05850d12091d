"""Client-side exposure detection.

Matches the downloaded feed against the local token store, validates
the encounter-time window, scores risk, and prepares uploads
(including redaction and possession-proof bundles).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable

from . import crypto
from .crypto import EncounterToken
from .device import TokenStore
from .wire import PublishedFeed, Tag, TokenUploadRecord


class NotificationLevel(enum.Enum):
    DIRECT = "direct"
    SECOND_LEVEL = "second_level"


@dataclass(frozen=True)
class RiskWeights:
    """Signal-strength weighting of the risk score.  Constants are
    configuration, not protocol."""

    near_dbm: float = -60.0
    mid_dbm: float = -75.0
    near_weight: float = 1.0
    mid_weight: float = 0.5
    far_weight: float = 0.25


DEFAULT_RISK_WEIGHTS = RiskWeights()


@dataclass(frozen=True)
class ExposureNotification:
    matched_hash: bytes
    level: NotificationLevel
    superspreader_flag: bool
    encounter_time: int
    duration: int
    risk_score: float


def risk_score(
    duration: int, max_rssi: float, weights: RiskWeights = DEFAULT_RISK_WEIGHTS
) -> float:
    """Exposure minutes weighted by proximity band; monotone
    non-decreasing in both arguments."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if max_rssi >= weights.near_dbm:
        weight = weights.near_weight
    elif max_rssi >= weights.mid_dbm:
        weight = weights.mid_weight
    else:
        weight = weights.far_weight
    return (duration / 60.0) * weight


def _level_for(tag: Tag) -> tuple[NotificationLevel, bool]:
    if tag is Tag.SECOND_LEVEL:
        return NotificationLevel.SECOND_LEVEL, False
    if tag is Tag.POSSIBLE_SUPERSPREADER:
        return NotificationLevel.DIRECT, True
    return NotificationLevel.DIRECT, False


def match_feed(
    store: TokenStore,
    feed: PublishedFeed,
    epsilon: int,
    weights: RiskWeights = DEFAULT_RISK_WEIGHTS,
) -> list[ExposureNotification]:
    """Evaluate every feed record against the local store.

    A record matches a local token when the published hash equals the
    token's hash, the metadata decrypts under the token secret, and the
    embedded remote timestamp is within ``epsilon`` seconds of the
    locally recorded one.  Everything else is silently a non-match.
    Output order is deterministic: encounter time, then hash bytes.
    """
    by_hash: dict[bytes, list[EncounterToken]] = {}
    for token in store.tokens():
        if token.secret is None:
            continue
        by_hash.setdefault(crypto.token_hash(token.secret), []).append(token)

    notifications = []
    for record in feed.records:
        for token in by_hash.get(record.hash, ()):
            try:
                remote_time = crypto.decrypt_metadata(token.secret, record.ciphertext)
            except crypto.AuthenticationFailure:
                continue
            if abs(remote_time - token.start_time) > epsilon:
                continue
            level, flagged = _level_for(record.tag)
            notifications.append(
                ExposureNotification(
                    matched_hash=record.hash,
                    level=level,
                    superspreader_flag=flagged,
                    encounter_time=token.start_time,
                    duration=token.duration,
                    risk_score=risk_score(token.duration, token.max_signal_strength, weights),
                )
            )
    notifications.sort(key=lambda n: (n.encounter_time, n.matched_hash, n.level.value))
    return notifications


def detect_superspreader_candidate(
    store: TokenStore,
    matched: Iterable[ExposureNotification],
    threshold: int = 3,
) -> list[bytes] | None:
    """Bundle of local token secrets to submit as a superspreader
    possession proof, or None below the threshold.

    Counting is per distinct matched record, not per uploader: the
    feed is shuffled, so uploaders are indistinguishable here.
    """
    matched_hashes = {n.matched_hash for n in matched}
    if len(matched_hashes) < threshold:
        return None
    secrets = []
    seen = set()
    for token in store.tokens():
        if token.secret is None:
            continue
        h = crypto.token_hash(token.secret)
        if h in matched_hashes and h not in seen:
            seen.add(h)
            secrets.append(token.secret)
    if len(secrets) < threshold:
        return None
    return secrets


def redact_tokens(
    store: TokenStore, predicate: Callable[[EncounterToken], bool]
) -> list[EncounterToken]:
    """Upload view of the store without the tokens the predicate
    selects for removal; the store itself is untouched."""
    return [token for token in store.tokens() if not predicate(token)]


def build_upload_records(
    tokens: Iterable[EncounterToken], tag: Tag = Tag.DIRECT
) -> list[TokenUploadRecord]:
    """Hash-and-encrypt the given tokens into publishable records.
    Tokens with underived secrets are skipped."""
    records = []
    for token in tokens:
        if token.secret is None:
            continue
        records.append(
            TokenUploadRecord(
                hash=crypto.token_hash(token.secret),
                ciphertext=crypto.encrypt_metadata(token.secret, token.start_time),
                tag=tag,
            )
        )
    return records
