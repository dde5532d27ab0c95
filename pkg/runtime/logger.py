"""
Run-session logging.

Each stage run gets a timestamped session directory with one JSON file per
event and a summary.json. Wall-clock data lives only here, never in the
stage's deterministic outputs.
"""

import json
import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunLogger:
    """Records stage events (fold completions, training summaries, timings)."""

    def __init__(self, log_dir: str = "logs"):
        """
        Initialize logger.

        Args:
            log_dir: Base directory for sessions
        """
        self.log_dir = Path(log_dir)
        self.session_dir: Optional[Path] = None
        self.event_index = 0
        self.events: List[Dict[str, Any]] = []
        self.stage = "run"

    def start_session(self, stage: str = "run"):
        """Start a new logging session."""
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
        self.stage = stage
        self.session_dir = self.log_dir / f"{timestamp}_{stage.replace(' ', '_')}"
        (self.session_dir / "json").mkdir(parents=True, exist_ok=True)
        self.event_index = 0
        self.events = []
        logger.debug("logging session started: %s", self.session_dir)

    def log_event(self, kind: str, data: Dict[str, Any]):
        """
        Log one event.

        Args:
            kind: Short event name ("fold", "train", "timing", ...)
            data: JSON-serializable payload
        """
        if self.session_dir is None:
            self.start_session()

        event = {
            "index": self.event_index,
            "timestamp": time.time(),
            "kind": kind,
            "data": data,
        }
        json_path = self.session_dir / "json" / f"event_{self.event_index:05d}.json"
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(event, f, indent=2, default=str)

        self.events.append(event)
        self.event_index += 1

    def save_summary(self, status: str = "ok"):
        """Save summary of the entire session."""
        if self.session_dir is None:
            return

        summary = {
            "stage": self.stage,
            "status": status,
            "total_events": self.event_index,
            "session_dir": str(self.session_dir),
            "start_time": self.events[0]["timestamp"] if self.events else None,
            "end_time": self.events[-1]["timestamp"] if self.events else None,
            "events": self.events,
        }
        summary_path = self.session_dir / "summary.json"
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, default=str)
        logger.debug("session summary saved: %s", summary_path)

    def get_session_dir(self) -> Optional[Path]:
        return self.session_dir
