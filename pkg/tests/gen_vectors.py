"""Regenerate the golden crypto vectors.

Elliptic-curve values come from the independent oracle in
``ec_oracle.py``; symmetric derivations are frozen from the library
path once and pinned.  Run from the repo root:

    python tests/gen_vectors.py
"""

import json
import pathlib
import random
import sys

sys.path.insert(0, str(pathlib.Path(__file__).parent))

import ec_oracle

from tracecorona import crypto

OUT = (
    pathlib.Path(__file__).parent.parent
    / "src"
    / "tracecorona"
    / "vectors"
    / "crypto_vectors.json"
)


def main() -> None:
    vectors = {"curve": "secp384r1", "version": 1}

    keypairs = []
    for seed, frame in [(42, 0), (42, 1), (7, 0), (7, 5), (123456, 99)]:
        kp = crypto.generate_frame_keypair(frame, random.Random(seed))
        oracle_x = ec_oracle.public_key_x(int.from_bytes(kp.private_key, "big"))
        assert oracle_x == kp.public_key, "library disagrees with oracle"
        keypairs.append(
            {
                "seed": seed,
                "frame_index": frame,
                "private_key": kp.private_key.hex(),
                "public_key": kp.public_key.hex(),
            }
        )
    vectors["frame_keypairs"] = keypairs

    tokens = []
    for seed_a, seed_b, t in [(1, 2, 1_600_000_000), (3, 4, 1_723_456_789)]:
        a = crypto.generate_frame_keypair(0, random.Random(seed_a))
        b = crypto.generate_frame_keypair(0, random.Random(seed_b))
        shared = ec_oracle.shared_x(
            int.from_bytes(a.private_key, "big"), b.public_key
        )
        token = crypto.derive_token(a.private_key, b.public_key)
        assert token == crypto.derive_token(b.private_key, a.public_key)
        tokens.append(
            {
                "seed_a": seed_a,
                "seed_b": seed_b,
                "private_a": a.private_key.hex(),
                "private_b": b.private_key.hex(),
                "public_a": a.public_key.hex(),
                "public_b": b.public_key.hex(),
                "oracle_shared_x": shared.hex(),
                "token_secret": token.hex(),
                "token_hash": crypto.token_hash(token).hex(),
                "start_time": t,
                "metadata_ciphertext": crypto.encrypt_metadata(token, t).hex(),
            }
        )
    vectors["tokens"] = tokens

    user = bytes(range(16))
    tek = bytes(range(16, 32))
    master = bytes(range(32))
    iv = bytes(range(48, 64))
    vectors["tempids"] = {
        "user_id": user.hex(),
        "tek": tek.hex(),
        "master_key": master.hex(),
        "iv": iv.hex(),
        "auth_tag": "00112233",
        "centralized": {
            str(t_k): crypto.derive_tempid_centralized(user, t_k).hex()
            for t_k in (0, 1, 95)
        },
        "bluetrace": {
            str(t_k): crypto.derive_tempid_bluetrace(
                user, t_k, iv, bytes.fromhex("00112233"), master
            ).hex()
            for t_k in (0, 7)
        },
        "decentralized_day3_slots": {
            str(slot): crypto.derive_tempid_decentralized(tek, 3, slot).hex()
            for slot in (0, 1, 143)
        },
    }

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(vectors, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
