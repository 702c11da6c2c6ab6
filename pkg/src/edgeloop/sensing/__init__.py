"""Simulated sensors, file persistence, resumable sync, and coverage analytics."""
