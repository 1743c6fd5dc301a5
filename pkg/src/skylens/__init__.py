"""Catadioptric sky imaging and solar occlusion / irradiance forecasting."""

__version__ = "0.1.0"
