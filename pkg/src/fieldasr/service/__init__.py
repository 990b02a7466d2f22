"""HTTP service wrapping the core pipeline with on-disk persistence."""

from .app import create_app
from .jobs import JobManager, parse_epoch_line
from .logstore import LogStore
from .store import StateStore
