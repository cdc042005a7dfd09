"""Guaranteed energy-norm error estimation for the implicit-Euler heat equation."""
