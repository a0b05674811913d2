"""Desk-scale diffusion super-resolution with progressive scale distillation."""

__version__ = "0.1.0"
