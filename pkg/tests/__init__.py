"""Test suite for approximate leave-one-out risk estimation."""
