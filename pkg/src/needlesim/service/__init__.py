"""FastAPI service wrapping the simulator: pipeline endpoints, slice
serving and the interactive trainer WebSocket."""

from .app import create_app  # noqa: F401
from .registry import VolumeRegistry  # noqa: F401
