"""Ultrasound intermediate-representation simulator and evaluation toolkit."""
