"""Triplet-whitelist scoring with relational graph convolutions."""
