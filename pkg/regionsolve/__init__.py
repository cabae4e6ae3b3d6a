"""Top-level package for regionsolve."""
