"""Walking-in-place gesture recognition on tracker point clouds with classifier-discrepancy adaptation."""

__version__ = "0.1.0"
