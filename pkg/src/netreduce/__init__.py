"""In-network key-value aggregation, emulated end to end: a bit-exact packet
codec, a switch register pipeline, cutting-payload reliability, a job DSL
compiler with greedy reducer placement, and a deterministic discrete-event
network simulator with an experiment harness on top."""

__version__ = "0.1.0"
