"""Device-independent squash verification, key-rate bounds and protocol simulation."""
