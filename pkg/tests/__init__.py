"""Tests for the ``nzpart`` package."""
