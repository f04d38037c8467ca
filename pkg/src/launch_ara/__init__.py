"""Adversarial-risk-analysis support for software launch decisions (release time and price)."""
