import copy
import logging
import os
from typing import Any, Dict, Iterable, Optional, Tuple

import yaml

from app.core.exceptions import ConfigError, MissingReference
from app.core.machine_model import MachineParams
from app.core.noise_lab import NoiseProfile
from app.core.scenario import Scenario
from app.core.schemas import SCHEMAS, validate
from app.utils.utils import apply_overrides

logger = logging.getLogger(__name__)

CONFIG_EXTENSIONS = (".json", ".yml", ".yaml")
KIND_LABELS = {"machines": "machine", "scenarios": "scenario", "profiles": "noise profile",
               "experiments": "experiment"}


def load_document(path: str, kind: str) -> Dict[str, Any]:
    """Reads one JSON/YAML document and validates it against the schema for ``kind``."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read {path}: {e}") from e
    return validate(kind, document, source=path)


class ConfigManager:
    """Loads machine, scenario, noise-profile and experiment documents and resolves them by name."""
    def __init__(self, config_dir: str = "configs"):
        self.config_dir = config_dir
        self.configs = self._load_configs()
        total = sum(len(v) for v in self.configs.values())
        logger.info(f"Loaded {total} configurations from '{self.config_dir}'.")

    def _load_configs(self) -> Dict[str, Dict[str, Any]]:
        """Loads every .json/.yml/.yaml file of each kind sub-directory, keyed by name."""
        loaded_configs = {kind: {} for kind in SCHEMAS}
        if not os.path.isdir(self.config_dir):
            logger.warning(f"Configuration directory '{self.config_dir}' not found.")
            return loaded_configs
        for kind in SCHEMAS:
            kind_dir = os.path.join(self.config_dir, kind)
            if not os.path.isdir(kind_dir):
                continue
            for filename in sorted(os.listdir(kind_dir)):
                if not filename.endswith(CONFIG_EXTENSIONS):
                    continue
                filepath = os.path.join(kind_dir, filename)
                try:
                    document = load_document(filepath, kind)
                except ConfigError as e:
                    logger.error(f"Skipping {filepath}: {e}")
                    continue
                name = document.get("name") or os.path.splitext(filename)[0]
                loaded_configs[kind][name] = document
                logger.debug(f"Loaded {KIND_LABELS[kind]} '{name}' from {filepath}")
        return loaded_configs

    def names(self, kind: str) -> Iterable[str]:
        return sorted(self.configs.get(kind, {}))

    def get(self, kind: str, name: str) -> Dict[str, Any]:
        try:
            return copy.deepcopy(self.configs[kind][name])
        except KeyError:
            raise MissingReference(name, KIND_LABELS.get(kind, kind)) from None

    def machine(self, name: str) -> MachineParams:
        data = self.get("machines", name)
        data.pop("name", None)
        try:
            return MachineParams.from_dict(data)
        except ValueError as e:
            raise ConfigError(f"machine '{name}': {e}") from e

    def scenario(self, name: str) -> Scenario:
        try:
            return Scenario.from_dict(self.get("scenarios", name))
        except ValueError as e:
            raise ConfigError(f"scenario '{name}': {e}") from e

    def profile(self, name: str, seed: Optional[int] = None) -> NoiseProfile:
        try:
            profile = NoiseProfile.from_dict(self.get("profiles", name))
        except ValueError as e:
            raise ConfigError(f"noise profile '{name}': {e}") from e
        return profile if seed is None else profile.with_seed(seed)

    def experiment(self, name_or_path: str, overrides: Iterable[Tuple[str, Any]] = ()) -> Dict[str, Any]:
        """
        Experiment document by name or by file path, with dotted overrides applied.

        The result is validated again after the overrides so a bad flag
        fails the same way a bad file does.
        """
        if os.path.isfile(name_or_path):
            document = load_document(name_or_path, "experiments")
        else:
            document = self.get("experiments", name_or_path)
        try:
            document = apply_overrides(document, overrides)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return validate("experiments", document, source=f"experiment '{document.get('name', name_or_path)}'")
