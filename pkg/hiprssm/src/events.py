#!/usr/bin/env python3
"""
Event System for HiP-RSSM
Structured events for data generation, training, evaluation and inference,
fanned out to the console and to a JSONL run log.
"""

import json
from dataclasses import dataclass, asdict, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np


class EventLevel(Enum):
    """Event severity levels"""
    INFO = "info"
    METRIC = "metric"
    WARN = "warn"
    ERROR = "error"
    SUCCESS = "success"


class EventStage(Enum):
    """Pipeline stages, one per CLI command"""
    GENERATE = "generate"
    TRAIN = "train"
    EVALUATE = "evaluate"
    INFER = "infer"
    EXPORT = "export"


@dataclass
class PipelineEvent:
    """
    One progress record. Numeric context (epoch, train_loss, grad_norm,
    rmse, rho, ...) goes into metadata so the JSONL log stays machine-readable.
    """
    stage: str
    message: str = ""
    level: str = EventLevel.INFO.value
    item: Optional[str] = None          # epoch, protocol, window or trajectory
    progress_current: int = 0
    progress_total: int = 0
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat())
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


class EventEmitter:
    """
    Event emitter for pipeline stages.
    Keeps the current stage and item count so callers only report what changed.
    """

    def __init__(self, callback: Optional[Callable[[PipelineEvent], None]] = None):
        self.callback = callback
        self._stage = ""
        self._total_items = 0
        self._current_item = 0

    def set_stage(self, stage: EventStage, total_items: int = 0):
        """Start a stage; total_items is epochs, protocols, windows or trajectories"""
        self._stage = stage.value
        self._total_items = total_items
        self._current_item = 0
        self.emit(f"Starting {stage.value} stage")

    def set_progress(self, current: int, item_name: Optional[str] = None, message: str = "", **metadata):
        self._current_item = current
        if not message:
            message = f"{item_name or 'item'} ({current}/{self._total_items})"
        self.emit(message, item=item_name, **metadata)

    def metric(self, current: int, item_name: str, message: str, **values):
        """Progress step that carries numbers worth showing without --verbose"""
        self._current_item = current
        self.emit(message, level=EventLevel.METRIC, item=item_name, **values)

    def success(self, message: str, **metadata):
        self.emit(message, level=EventLevel.SUCCESS, **metadata)

    def info(self, message: str, **metadata):
        self.emit(message, level=EventLevel.INFO, **metadata)

    def warn(self, message: str, **metadata):
        self.emit(message, level=EventLevel.WARN, **metadata)

    def error(self, message: str, **metadata):
        self.emit(message, level=EventLevel.ERROR, **metadata)

    def complete_stage(self, message: Optional[str] = None, **metadata):
        self._current_item = self._total_items
        self.emit(message or f"Completed {self._stage} stage", level=EventLevel.SUCCESS, **metadata)

    def emit(self, message: str, level: EventLevel = EventLevel.INFO, item: Optional[str] = None, **metadata):
        if not self.callback:
            return
        self.callback(PipelineEvent(
            stage=self._stage,
            message=message,
            level=level.value,
            item=item,
            progress_current=self._current_item,
            progress_total=self._total_items,
            metadata=metadata,
        ))


class ConsoleEventHandler:
    """
    Console output for the CLI: a header per stage, then [OK]/[!]/[X]
    lines. Plain progress lines only appear with verbose.
    """

    PREFIXES = {
        EventLevel.ERROR.value: "[X]",
        EventLevel.WARN.value: "[!]",
        EventLevel.SUCCESS.value: "[OK]",
    }

    def __init__(self, verbose: bool = False):
        self.verbose = verbose
        self._last_stage = ""

    def handle_event(self, event: PipelineEvent):
        if event.stage and event.stage != self._last_stage:
            print(f"\n{'=' * 60}")
            print(f"STAGE: {event.stage.upper()}")
            print(f"{'=' * 60}")
            self._last_stage = event.stage

        prefix = self.PREFIXES.get(event.level)
        if prefix:
            print(f"  {prefix} {event.message}")
        elif event.level == EventLevel.METRIC.value or self.verbose:
            if event.progress_total > 0:
                print(f"  [{event.progress_current}/{event.progress_total}] {event.message}")
            else:
                print(f"  {event.message}")


class JsonlEventHandler:
    """Appends every event as one JSON line to a run log"""

    def __init__(self, log_path: Path):
        self.log_path = Path(log_path)
        self.log_path.parent.mkdir(parents=True, exist_ok=True)

    def handle_event(self, event: PipelineEvent):
        with open(self.log_path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(event.to_dict(), default=_json_default) + "\n")


def create_silent_emitter() -> EventEmitter:
    """Emitter with no output (library calls and tests)"""
    return EventEmitter(callback=None)


def create_fanout_emitter(*handlers) -> EventEmitter:
    """Emitter that forwards each event to several handlers"""
    def dispatch(event: PipelineEvent):
        for handler in handlers:
            handler.handle_event(event)
    return EventEmitter(callback=dispatch)
