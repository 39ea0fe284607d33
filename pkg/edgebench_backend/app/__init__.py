"""Edge computing offloading simulator and its results service."""
