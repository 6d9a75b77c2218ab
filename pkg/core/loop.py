# core/loop.py → Training Loop
# Role: Epoch loop shared by every trainer: validation, best-checkpointing, patience stop.

# Responsibilities:

# Run train_epoch / validate callbacks for up to max_epochs

# Keep the parameters of the best validation epoch and restore them at the end

# Abort with NumericalError on non-finite losses

# Record a per-epoch history and a cost summary (parameter count, timings)

# core/loop.py

from typing import Callable, Dict, List, Literal, Optional
import math
import time

from tqdm import tqdm

from core.console import log
from core.errors import NumericalError
from core.layers import count_parameters, restore, snapshot
from core.tensor import DiffArray

# Wall-clock entries of a cost summary; never persisted.
TIMING_KEYS = ("train_seconds", "epoch_seconds")


def persistent_cost(cost: Dict[str, float]) -> Dict[str, float]:
    return {key: value for key, value in cost.items() if key not in TIMING_KEYS}


class EarlyStopping:
    """
    Stops training when the monitored score has not improved for `patience` epochs.
    mode="min" for losses, "max" for accuracies.
    """

    def __init__(self, patience: int = 10, mode: Literal["min", "max"] = "min", delta: float = 0.0):
        self.patience = patience
        self.mode = mode
        self.delta = delta
        self.counter = 0
        self.best_score: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.early_stop = False

    def improved(self, score: float) -> bool:
        if self.best_score is None:
            return True
        if self.mode == "min":
            return score < self.best_score - self.delta
        return score > self.best_score + self.delta

    def __call__(self, score: float, epoch: int) -> bool:
        if self.improved(score):
            self.best_score = score
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        if self.counter >= self.patience:
            self.early_stop = True
        return False


class TrainingLoop:
    def __init__(self, name: str, params: Dict[str, DiffArray], max_epochs: int, patience: int,
                 monitor: str, mode: Literal["min", "max"] = "min", verbose: bool = True):
        self.name = name
        self.params = params
        self.max_epochs = max_epochs
        self.monitor = monitor
        self.stopper = EarlyStopping(patience=patience, mode=mode)
        self.verbose = verbose
        self.history: List[Dict[str, float]] = []
        self.cost: Dict[str, float] = {}

    def run(self, train_epoch: Callable[[int], Dict[str, float]],
            validate: Callable[[int], float]) -> List[Dict[str, float]]:
        best = snapshot(self.params)
        started = time.perf_counter()
        epochs = tqdm(range(1, self.max_epochs + 1), desc=f"[{self.name}]", disable=not self.verbose, leave=False)
        for epoch in epochs:
            row: Dict[str, float] = {"epoch": epoch}
            row.update(train_epoch(epoch))
            row[self.monitor] = float(validate(epoch))

            bad = [key for key, value in row.items() if not math.isfinite(value)]
            if bad:
                raise NumericalError(f"[{self.name}] non-finite {', '.join(bad)} at epoch {epoch}: {row}")
            self.history.append(row)

            if self.stopper(row[self.monitor], epoch):
                best = snapshot(self.params)
            if self.stopper.early_stop:
                if self.verbose:
                    log(self.name, f"Early stop at epoch {epoch}; best {self.monitor}={self.stopper.best_score:.6g} (epoch {self.stopper.best_epoch})")
                break

        restore(self.params, best)
        elapsed = time.perf_counter() - started
        self.cost = {
            "parameters": count_parameters(self.params),
            "epochs": len(self.history),
            "best_epoch": self.stopper.best_epoch or 0,
            "train_seconds": elapsed,
            "epoch_seconds": elapsed / max(len(self.history), 1),
        }
        if self.verbose:
            log(self.name, f"Trained {self.cost['epochs']} epochs in {elapsed:.1f}s ({self.cost['parameters']} parameters)")
        return self.history

    @property
    def best_score(self) -> Optional[float]:
        return self.stopper.best_score


def minibatches(n: int, batch_size: int, rng) -> List:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
