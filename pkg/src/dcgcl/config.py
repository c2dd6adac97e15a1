"""Run configuration: a small ``key = value`` format with four sections.

Example::

    [encoder]
    num_layers = 2

    [train]
    dataset = MUTAG
    epochs = 100

    [augment]
    ratio = 0.2

Lines starting with ``#`` or ``;`` are comments. Unknown sections or keys,
bad values and out-of-range values raise :class:`ConfigError` naming the
offending ``[section].key`` and line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .data_aug import DATA_AUG_KINDS
from .contrastive import LOSS_MODES
from .model_aug import MODEL_AUG_KINDS
from .train import BATCH_SIZES, LEARNING_RATES

DATA_ROOT_ENV = "DCGCL_DATA_ROOT"


class ConfigError(ValueError):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _optional_str(text: str) -> str | None:
    return None if text.lower() in ("", "none") else text


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _one_of(options) -> Callable[[Any], str | None]:
    return lambda v: None if v in options else f"must be one of {', '.join(map(str, options))}"


def _between(lo, hi, closed_hi=True):
    def check(v):
        ok = lo <= v <= hi if closed_hi else lo <= v < hi
        return None if ok else f"must lie in [{lo}, {hi}{']' if closed_hi else ')'}"
    return check


def _positive(v):
    return None if v > 0 else "must be positive"


def _at_least(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}"


def _nonempty(v):
    return None if len(v) else "must not be empty"


# section -> key -> (parser, default, validator)
SCHEMA: dict[str, dict[str, tuple]] = {
    "encoder": {
        "num_layers": (int, 2, _one_of((1, 2, 3))),
        "num_heads": (int, 4, _at_least(1)),
        "hidden_dim": (int, 64, _at_least(1)),
        "pe_dim": (int, 8, _at_least(1)),
    },
    "train": {
        "dataset": (str, "MUTAG", None),
        "dataset_path": (_optional_str, None, None),
        "synthetic_graphs": (int, 500, _at_least(2)),
        "synthetic_seed": (int, 0, None),
        "output_dir": (str, "runs/default", None),
        "epochs": (int, 100, _at_least(0)),
        "batch_size": (int, 32, _one_of(BATCH_SIZES)),
        "learning_rate": (float, 1e-3, _one_of(LEARNING_RATES)),
        "temperature": (float, 0.2, _positive),
        "mode": (str, "dual", _one_of(LOSS_MODES)),
        "seed": (int, 0, None),
        "checkpoint_every": (int, 10, _at_least(1)),
    },
    "augment": {
        "ratio": (float, 0.2, _between(0.0, 1.0, closed_hi=False)),
        "data_aug": (str, "selective_node_mask", _one_of(DATA_AUG_KINDS)),
        "data_aug_b": (_optional_str, None, lambda v: None if v is None else _one_of(DATA_AUG_KINDS)(v)),
        "model_aug": (str, "weight_prune", _one_of(MODEL_AUG_KINDS)),
        "gumbel_temperature": (float, 1.0, _positive),
        "noise_scale": (float, 0.1, _positive),
        "mae_epochs": (int, 50, _at_least(0)),
        "mae_mask_ratio": (float, 0.5, _between(0.0, 1.0, closed_hi=False)),
    },
    "eval": {
        "checkpoint": (_optional_str, None, None),
        "folds": (int, 10, _at_least(2)),
        "inner_folds": (int, 5, _at_least(2)),
        "seeds": (_int_list, (0, 1, 2, 3, 4), _nonempty),
        "c_grid": (_float_list, (1e-3, 1e-2, 1e-1, 1.0, 10.0), _nonempty),
        "probe_steps": (int, 500, _at_least(1)),
        "probe_lr": (float, 0.1, _positive),
        "alpha": (float, 2.0, _positive),
        "beta": (float, 2.0, _positive),
        "projected": (_bool, False, None),
        "gradcheck_coords": (int, 200, _at_least(1)),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, dotted: str) -> Any:
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    @property
    def output_dir(self) -> Path:
        return Path(self["train.output_dir"])

    def dataset_dir(self) -> Path | None:
        path = self["train.dataset_path"]
        if path is not None:
            return Path(path)
        root = os.environ.get(DATA_ROOT_ENV)
        return Path(root) if root else None

    def train_config(self):
        from .train import TrainConfig
        a = self.values["augment"]
        t = self.values["train"]
        return TrainConfig(
            epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
            temperature=t["temperature"], aug_ratio=a["ratio"], data_aug=a["data_aug"],
            data_aug_b=a["data_aug_b"], model_aug=a["model_aug"], mode=t["mode"], seed=t["seed"],
            gumbel_temperature=a["gumbel_temperature"], noise_scale=a["noise_scale"],
            checkpoint_every=t["checkpoint_every"], mae_epochs=a["mae_epochs"],
            mae_mask_ratio=a["mae_mask_ratio"])

    def encoder_config(self, input_dim: int):
        from .encoder import EncoderConfig
        return EncoderConfig(input_dim=input_dim, **self.values["encoder"])

    def render(self) -> str:
        """Effective configuration in the same format the loader reads."""
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key in keys:
                out.append(f"{key} = {_render_value(self.values[section][key])}")
            out.append("")
        return "\n".join(out)


def _render_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_render_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(section: str, key: str, raw: str, where: str) -> Any:
    if section not in SCHEMA:
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}: unknown key [{section}].{key}")
    parser, _, check = SCHEMA[section][key]
    try:
        value = parser(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: [{section}].{key}: cannot parse {raw.strip()!r} ({exc})") from None
    if check is not None:
        problem = check(value)
        if problem:
            raise ConfigError(f"{where}: [{section}].{key} = {raw.strip()} {problem}")
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, Any]]:
    found: dict[str, dict[str, Any]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of any section")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in found.get(section, {}):
            raise ConfigError(f"{where}: duplicate key [{section}].{key}")
        found.setdefault(section, {})[key] = _coerce(section, key, raw, where)
    return found


def load_config(path: str | Path | None = None, overrides: list[str] | dict | None = None) -> RunConfig:
    """Defaults, then the file (if any), then ``section.key=value`` overrides."""
    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    source = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        source = str(path)
        for section, keys in parse_config_text(path.read_text(), source).items():
            values[section].update(keys)
    items = overrides.items() if isinstance(overrides, dict) else (
        tuple(o.split("=", 1)) if "=" in o else (o, None) for o in (overrides or []))
    for dotted, raw in items:
        if raw is None or "." not in dotted:
            raise ConfigError(f"override {dotted!r}: expected section.key=value")
        section, key = dotted.strip().split(".", 1)
        values[section][key] = _coerce(section, key, str(raw), "override")
    enc = values["encoder"]
    if enc["hidden_dim"] % enc["num_heads"]:
        raise ConfigError(f"[encoder].hidden_dim = {enc['hidden_dim']} is not divisible by "
                          f"[encoder].num_heads = {enc['num_heads']}")
    return RunConfig(values, source)
