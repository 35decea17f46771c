"""Database configuration and models."""
