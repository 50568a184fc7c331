"""INI run configuration: typed defaults, override strings, stable hashing."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .contrastive import PretrainConfig
from .data import SplitSpec
from .encoders.graph import GraphEncoderConfig
from .encoders.text import TextEncoderConfig
from .errors import ConfigError
from .fingerprints import FingerprintSource
from .fusion import FinetuneConfig, FusionConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _strs(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in _strs(text))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in _strs(text))


# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "model": {
        "hidden_dim": (int, "128"),
        "local_layers": (int, "2"),
        "global_layers": (int, "2"),
        "heads": (int, "4"),
        "adjacency_gate": (str, "soft_blend"),
        "gate_init": (float, "1.0"),
        "text_layers": (int, "4"),
        "text_heads": (int, "4"),
        "max_relative": (int, "64"),
        "max_len": (int, "256"),
        "pooling": (str, "mean"),
        "text_towers": (int, "1"),
        "fusion_heads": (int, "4"),
    },
    "pretrain": {
        "temperature": (float, "0.1"),
        "epochs": (int, "100"),
        "lr": (float, "1e-3"),
        "batch_size": (int, "32"),
        "projection_dim": (int, "64"),
        "symmetrize": (_bool, "false"),
        "min_freq": (int, "1"),
        "limit": (int, "0"),
    },
    "finetune": {
        "epochs": (int, "50"),
        "lr": (float, "1e-3"),
        "batch_size": (int, "32"),
        "modalities": (str, "T+F+G"),
        "aggregation": (str, "dual_cross_attention"),
        "pairing": (str, "fingerprint_centered"),
        "pretrained_init": (str, "auto"),
        "graph_checkpoint": (str, ""),
        "text_checkpoint": (str, ""),
        "task": (str, "auto"),
        "text_fallback": (_bool, "true"),
    },
    "data": {
        "dataset": (str, "bundled:bace"),
        "text": (str, ""),
        "tasks": (_strs, ""),
        "pretrain_dataset": (str, "bundled:zinc_micro"),
        "pretrain_text": (str, ""),
        "split": (str, "random"),
        "fractions": (_floats, "0.6,0.2,0.2"),
        "seeds": (_ints, "0,1,2"),
    },
    "fingerprints": {
        "sources": (_strs, "builtin"),
        "radius": (int, "2"),
        "n_bits": (int, "2048"),
    },
}


def _jsonable(value: Any) -> Any:
    return list(value) if isinstance(value, tuple) else value


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    source: str | None = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def resolved(self) -> dict[str, dict[str, Any]]:
        return {s: {k: _jsonable(v) for k, v in sorted(kv.items())} for s, kv in sorted(self.values.items())}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for section, kv in self.resolved().items():
            lines.append(f"[{section}]")
            for k, v in kv.items():
                text = ",".join(str(x) for x in v) if isinstance(v, list) else str(v).lower() if isinstance(v, bool) else str(v)
                lines.append(f"{k} = {text}")
            lines.append("")
        return "\n".join(lines)

    # -- builders ------------------------------------------------------------

    def graph_config(self) -> GraphEncoderConfig:
        m = self["model"]
        return GraphEncoderConfig(m["hidden_dim"], m["local_layers"], m["global_layers"], m["heads"], m["adjacency_gate"], m["gate_init"])

    def text_config(self) -> TextEncoderConfig:
        m = self["model"]
        return TextEncoderConfig(m["text_layers"], m["hidden_dim"], m["text_heads"], m["max_relative"], m["max_len"], m["pooling"], m["text_towers"])

    def fusion_config(self) -> FusionConfig:
        f = self["finetune"]
        init = f["pretrained_init"].strip().lower()
        if init == "auto":
            chosen = tuple(w for w, key in (("graph", "graph_checkpoint"), ("text", "text_checkpoint")) if f[key])
        elif init in ("", "none"):
            chosen = ()
        else:
            chosen = _strs(init)
            for which in chosen:
                if which in ("graph", "text") and not f[f"{which}_checkpoint"]:
                    raise ConfigError(f"finetune.pretrained_init includes {which} but finetune.{which}_checkpoint is empty")
        return FusionConfig(f["modalities"], f["aggregation"], f["pairing"], chosen, self["model"]["fusion_heads"])

    def pretrain_config(self, seed: int) -> PretrainConfig:
        p = self["pretrain"]
        return PretrainConfig(p["epochs"], p["lr"], p["batch_size"], p["temperature"], p["symmetrize"], p["projection_dim"], seed)

    def finetune_config(self, seed: int) -> FinetuneConfig:
        f = self["finetune"]
        return FinetuneConfig(f["epochs"], f["lr"], f["batch_size"], seed)

    def split_spec(self, seed: int) -> SplitSpec:
        d = self["data"]
        return SplitSpec(d["split"], tuple(d["fractions"]), seed)

    def fingerprint_sources(self) -> list[FingerprintSource]:
        fp = self["fingerprints"]
        out = []
        for text in fp["sources"]:
            src = FingerprintSource.parse(text)
            if src.kind == "builtin":
                src = FingerprintSource("builtin", fp["radius"], fp["n_bits"], None)
            out.append(src)
        return out

    def validate(self) -> None:
        self.graph_config()
        self.text_config()
        self.fusion_config()
        self.pretrain_config(0)
        self.split_spec(0)
        self.fingerprint_sources()
        if self["finetune"]["task"] not in ("auto", "classification", "regression"):
            raise ConfigError(f"finetune.task must be auto, classification or regression, got {self['finetune']['task']!r}")
        for section, key in (("pretrain", "epochs"), ("finetune", "epochs"), ("pretrain", "batch_size"), ("finetune", "batch_size")):
            if self[section][key] < 1:
                raise ConfigError(f"{section}.{key} must be positive")
        if not self["data"]["seeds"]:
            raise ConfigError("data.seeds must list at least one seed")


def _parse_value(section: str, key: str, text: str) -> Any:
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    parser = SCHEMA[section][key][0]
    try:
        return parser(text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {text!r} ({exc})") from exc


def default_values() -> dict[str, dict[str, Any]]:
    return {s: {k: _parse_value(s, k, d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (), seed: int | None = None) -> RunConfig:
    """Defaults, then the INI file, then ``section.key=value`` overrides, then ``seed``."""
    values = default_values()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            for key, text in parser.items(section):
                parsed = _parse_value(section, key, text)
                values[section][key] = parsed
    for item in overrides:
        lhs, sep, rhs = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        parsed = _parse_value(section.strip(), key.strip(), rhs)
        values[section.strip()][key.strip()] = parsed
    if seed is not None:
        values["data"]["seeds"] = (int(seed),)
    cfg = RunConfig(values, str(path) if path is not None else None)
    cfg.validate()
    return cfg
