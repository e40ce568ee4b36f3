"""Tests for deformfeat."""
