"""Encounter-token contact tracing laboratory.

Implements a Diffie-Hellman encounter-token tracing scheme end to end
(client, health authority, tracing server), the generic centralized and
decentralized baseline schemes it is compared against, and a
deterministic simulated proximity network with pluggable adversaries.
"""

__version__ = "0.1.0"
