"""Network access control policy server with a simulated enforcement fabric.

The package implements a policy decision point that authenticates users,
assesses device posture, decides and enforces network admission, reacts to IDS
alerts with coordinated per-session responses, and exposes the whole system
over HTTP plus a scripted network simulator for desk-scale verification.
"""

__version__ = "0.1.0"
