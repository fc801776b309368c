"""Define any unit tests you may want in this directory."""
