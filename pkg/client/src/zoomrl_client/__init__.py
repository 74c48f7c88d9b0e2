"""Client SDK for the zoomrl reward-scoring service."""

from .client import Client, ClientConfig, SchemaError, ServiceUnavailable
from .models import Breakdown, GroupScore

__version__ = "0.1.0"
