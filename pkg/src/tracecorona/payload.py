"""Protocol payload arithmetic.

Fixed wire widths: published hashes are 128 bits, token secrets 256
bits, ephemeral public keys 384 bits.  The expected upload is 20 tokens
per day over a 14-day horizon.
"""

from __future__ import annotations

HASH_BITS = 128
TOKENS_PER_DAY = 20
RETENTION_DAYS = 14


def upload_hash_payload_bits(
    days: int = RETENTION_DAYS, tokens_per_day: int = TOKENS_PER_DAY
) -> int:
    """Hash payload of one infected upload: days * tokens * 128 bits."""
    return days * tokens_per_day * HASH_BITS


def upload_hash_payload_bytes(
    days: int = RETENTION_DAYS, tokens_per_day: int = TOKENS_PER_DAY
) -> int:
    return upload_hash_payload_bits(days, tokens_per_day) // 8


def daily_feed_hash_payload_bytes(infected_per_day: int = 10_000) -> int:
    """Nominal daily feed hash payload for a given case load."""
    return infected_per_day * upload_hash_payload_bytes()


def payload_notes(infected_per_day: int = 10_000) -> dict:
    """The headline figures, nominal and as conventionally rounded.

    The widely quoted 43 MB/day rounds each 4480-byte upload down to
    4.3 kB before scaling; exact arithmetic on the same assumptions
    gives 44.8 MB/day.  Reports carry both so the discrepancy stays
    visible.
    """
    nominal_bytes = daily_feed_hash_payload_bytes(infected_per_day)
    return {
        "upload_hash_bits": upload_hash_payload_bits(),
        "upload_hash_bytes": upload_hash_payload_bytes(),
        "upload_rounded_kb": 4.3,
        "daily_feed_nominal_bytes": nominal_bytes,
        "daily_feed_nominal_mb": nominal_bytes / 1_000_000,
        "daily_feed_rounded_mb": 43.0,
        "rounding_note": (
            "the 43 MB/day figure scales a 4.3 kB rounding of the exact "
            "4480-byte upload; unrounded, 10000 uploads/day carry 44.8 MB "
            "of hashes"
        ),
        "infected_per_day": infected_per_day,
    }
