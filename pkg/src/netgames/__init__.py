"""Linear interaction games on networks."""
