"""Tripod-scheme atom wavepackets under moving laser beams: model, propagator, oracle and analysis."""
