"""Core package: config, exceptions, logging, response."""
