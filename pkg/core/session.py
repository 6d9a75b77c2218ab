# core/session.py → Model Container
# Role: Save and load trained models as one JSON document.

# Layout: {format_version, model_kind, config, vocab, parameters: {name: {shape, values}}, extra}

# core/session.py

from pathlib import Path
from typing import Any, Dict, List, Union
import json

import numpy as np
from pydantic import BaseModel, Field

from core.console import log
from core.errors import CorpusParseError
from core.tensor import DiffArray

FORMAT_VERSION = 1


class ParameterBlob(BaseModel):
    shape: List[int]
    values: List[float]


class ModelContainer(BaseModel):
    format_version: int = FORMAT_VERSION
    model_kind: str
    config: Dict[str, Any]
    vocab: List[str]
    parameters: Dict[str, ParameterBlob]
    extra: Dict[str, Any] = Field(default_factory=dict)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            name: np.asarray(blob.values, dtype=np.float64).reshape(blob.shape)
            for name, blob in self.parameters.items()
        }


def save_model(path: Union[str, Path], model_kind: str, config: Dict[str, Any], vocab: List[str],
               parameters: Dict[str, Union[DiffArray, np.ndarray]], extra: Dict[str, Any] = None) -> Path:
    blobs = {}
    for name in sorted(parameters):
        value = parameters[name]
        array = value.value if isinstance(value, DiffArray) else np.asarray(value, dtype=np.float64)
        blobs[name] = ParameterBlob(shape=list(array.shape), values=array.reshape(-1).tolist())
    container = ModelContainer(model_kind=model_kind, config=config, vocab=list(vocab),
                               parameters=blobs, extra=extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(container.model_dump(), sort_keys=True))
    log("session", f"Saved {model_kind} model ({len(blobs)} arrays) → {path}")
    return path


def load_model(path: Union[str, Path]) -> ModelContainer:
    path = Path(path)
    if not path.exists():
        raise CorpusParseError("model file not found", path=str(path))
    try:
        container = ModelContainer.model_validate_json(path.read_text())
    except ValueError as e:
        raise CorpusParseError(f"not a model container: {e}", path=str(path)) from e
    if container.format_version != FORMAT_VERSION:
        raise CorpusParseError(f"unsupported format_version {container.format_version}", path=str(path))
    return container
