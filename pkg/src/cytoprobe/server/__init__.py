from .app import create_app
from .config import ServerConfig, load_config
from .core import Service
from .events import EventLog, EventRecord

__all__ = [
    "create_app",
    "ServerConfig",
    "load_config",
    "Service",
    "EventLog",
    "EventRecord",
]
