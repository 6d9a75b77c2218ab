# core/console.py → Console Logger
# Role: Timestamped "[HH:MM:SS] [stage] msg" lines on stderr, shared by every module.

import datetime

from rich.console import Console

console = Console(stderr=True, highlight=False)


def log(stage: str, msg: str) -> None:
    """Simple timestamped console logger."""
    now = datetime.datetime.now().strftime("%H:%M:%S")
    console.print(f"[{now}] [{stage}] {msg}", markup=False)


def warn(stage: str, msg: str) -> None:
    now = datetime.datetime.now().strftime("%H:%M:%S")
    console.print(f"[{now}] [{stage}] ⚠️ {msg}", markup=False, style="yellow")
