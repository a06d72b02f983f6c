"""SRL-OOD - out-of-distribution detection guided by semantic role labelling."""

__version__ = "0.1.0"
