"""Configuration, sweeps, replication commands and result emission."""
