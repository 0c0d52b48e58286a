"""Simulated world: virtual clock, seeded randomness, faults, broker, corpus, tools."""
