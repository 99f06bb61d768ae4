"""Dual-band beam management simulator: channel world, beam training, learners and experiments."""
