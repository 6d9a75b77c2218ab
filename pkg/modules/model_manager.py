# modules/model_manager.py → Model Registry
# Role: Dispatch by model kind (vae, gan, diffusion, classifier) for config building,
# training, saving/loading and generation, driven by config/models.json.

# modules/model_manager.py

from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Type

import numpy as np
import pandas as pd
from pydantic import BaseModel

from core.console import log
from core.context import RunProfile, load_registry
from core.errors import ConfigError, CorpusParseError, InvalidInputError
from core.layers import load_values
from core.loop import persistent_cost
from core.session import load_model, save_model
from models import DiffusionConfig, GanConfig, LabeledCorpus, MlpClassifierConfig, VaeConfig
from modules.classify import ClassifierModel, SpectrumGenerator, train_classifier
from modules.maldiffusion import DenoiserModel, generate_diffusion, schedule_from_dict, train_diffusion
from modules.maldigan import GanModel, generate_gan, train_gan
from modules.maldivae import VaeModel, generate_vae, train_vae

Trainer = Callable[..., Any]

KINDS: Dict[str, Tuple[Type[BaseModel], type, Trainer]] = {
    "vae": (VaeConfig, VaeModel, train_vae),
    "gan": (GanConfig, GanModel, train_gan),
    "diffusion": (DiffusionConfig, DenoiserModel, train_diffusion),
    "classifier": (MlpClassifierConfig, ClassifierModel, train_classifier),
}
PROFILE_SECTIONS = {"vae": "vae", "gan": "gan", "diffusion": "diffusion", "classifier": "classifier"}


class ModelManager:
    def __init__(self, profile: Optional[RunProfile] = None, registry_path: Optional[Path] = None):
        self.profile = profile or RunProfile()
        self.registry = load_registry(registry_path)
        self.models = self.registry["models"]

    def check_kind(self, kind: str) -> str:
        if kind not in KINDS or kind not in self.models:
            raise ConfigError(f"Unknown model kind '{kind}'; choose from {sorted(KINDS)}")
        return kind

    def kind_of(self, model_kind: str) -> str:
        for kind, info in self.models.items():
            if info["model_kind"] == model_kind:
                return kind
        raise CorpusParseError(f"model file has unknown model_kind '{model_kind}'")

    def build_config(self, kind: str, overrides: Optional[Dict[str, Any]] = None, seed: Optional[int] = None) -> BaseModel:
        """Profile section < JSON overrides < explicit seed."""
        config_cls = KINDS[self.check_kind(kind)][0]
        values = dict(self.profile.section(PROFILE_SECTIONS[kind]))
        values.update(overrides or {})
        if seed is not None:
            values["seed"] = seed
        try:
            return config_cls(**values)
        except ValueError as e:
            raise ConfigError(f"invalid {kind} config: {e}") from e

    def train(self, kind: str, train: LabeledCorpus, val: LabeledCorpus, cfg: BaseModel,
              threads: int = 1, verbose: bool = True):
        trainer = KINDS[self.check_kind(kind)][2]
        log("train", f"Training {kind} on {train.n} spectra ({train.num_classes} classes, {train.dim} bins)")
        if kind == "gan":
            return trainer(train, val, cfg, verbose=verbose, threads=threads)
        return trainer(train, val, cfg, verbose=verbose)

    def save(self, kind: str, model, path, corpus: LabeledCorpus) -> Path:
        extra: Dict[str, Any] = {
            "dim": model.dim, "mz_min": corpus.mz_min, "bin_width": corpus.bin_width,
            "cost": persistent_cost(model.cost), "history": model.history,
        }
        if kind == "diffusion":
            extra["schedule"] = model.schedule.to_dict()
        if kind == "gan":
            extra["collapsed"] = model.collapsed
        return save_model(path, self.models[kind]["model_kind"], model.cfg.model_dump(), model.vocab,
                          model.parameters(), extra)

    def load(self, path) -> Tuple[str, Any]:
        container = load_model(path)
        kind = self.kind_of(container.model_kind)
        config_cls, model_cls, _ = KINDS[kind]
        try:
            cfg = config_cls(**container.config)
        except ValueError as e:
            raise CorpusParseError(f"stored {kind} config is invalid: {e}", path=str(path)) from e
        dim = int(container.extra.get("dim", 0))
        if dim < 1:
            raise CorpusParseError("model file lacks the spectrum dimension", path=str(path))
        model = model_cls(cfg, dim, container.vocab)
        load_values(model.parameters(), container.arrays())
        model.history = list(container.extra.get("history", []))
        model.cost = dict(container.extra.get("cost", {}))
        model.mz_min = float(container.extra.get("mz_min", 2000.0))
        model.bin_width = float(container.extra.get("bin_width", 3.0))
        if kind == "diffusion" and "schedule" in container.extra:
            model.schedule = schedule_from_dict(container.extra["schedule"])
        log("session", f"Loaded {kind} model from {Path(path).name} ({len(container.vocab)} classes)")
        return kind, model

    def generator_for(self, kind: str, model, threads: int = 1) -> SpectrumGenerator:
        if kind == "vae":
            return lambda name, n, seed: generate_vae(model, name, n, seed)
        if kind == "gan":
            return lambda name, n, seed: generate_gan(model, name, n, seed)
        if kind == "diffusion":
            return lambda name, n, seed: generate_diffusion(model, name, n, seed, threads)
        raise InvalidInputError(f"a {kind} model cannot generate spectra")

    def history_frame(self, kind: str, model) -> pd.DataFrame:
        columns = self.models[kind]["history_columns"]
        return pd.DataFrame(model.history, columns=columns)


def generated_corpus(spectra: np.ndarray, class_name: str, vocab, mz_min: float = 2000.0,
                     bin_width: float = 3.0) -> LabeledCorpus:
    return LabeledCorpus(spectra=np.asarray(spectra).reshape(-1, np.asarray(spectra).shape[-1]),
                         labels=np.full(len(spectra), list(vocab).index(class_name), dtype=np.int64),
                         vocab=list(vocab), mz_min=mz_min, bin_width=bin_width)
