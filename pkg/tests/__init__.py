"""Test suite for hk-semiclassical."""
