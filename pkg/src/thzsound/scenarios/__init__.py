"""Shipped scenario files and their JSON schema."""
