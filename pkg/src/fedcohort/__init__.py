"""Private peer selection for personalized federated learning, at desk scale."""
from __future__ import annotations

__version__ = "0.1.0"
