"""Command-line harness, scene generator and benchmark sweeps."""
