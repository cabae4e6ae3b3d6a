"""Unit test package for regionsolve."""
