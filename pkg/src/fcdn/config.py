"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Unknown keys are rejected. Precedence: command-line flags, then the config
file, then the defaults below.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .data import STANDARD_BANDS
from .errors import ConfigError
from .model import DISTILL_SIGNS, FcdnConfig


def _int_tuple(n: int | None = None) -> Callable[[str], tuple[int, ...]]:
    def parse(text: str) -> tuple[int, ...]:
        vals = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} comma-separated integers")
        return vals

    return parse


def _optional_pools(text: str):
    return None if text.strip().lower() == "auto" else _int_tuple(2)(text)


def _float_pair(text: str) -> tuple[float, float]:
    vals = tuple(float(v) for v in text.replace(" ", "").split(",") if v)
    if len(vals) != 2:
        raise ValueError("expected 2 comma-separated numbers")
    return vals


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _bands(text: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    for n in names:
        if n not in STANDARD_BANDS:
            raise ValueError(f"unknown band {n!r} (known: {', '.join(STANDARD_BANDS)})")
    if len(names) != 3:
        raise ValueError("exactly three bands are required")
    return names


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _fmt(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


_ref = FcdnConfig()

# key -> (default, parser, description)
SCHEMA: dict[str, tuple[Any, Callable[[str], Any], str]] = {
    "seed": (0, int, "master seed for synthesis, splits, augmentation and training"),
    # synthetic data
    "synth_channels": (8, int, "electrodes in generated data"),
    "synth_samples": (250, int, "samples per generated trial"),
    "synth_fs_hz": (250.0, float, "sampling rate of generated data"),
    "synth_per_class": (200, int, "generated trials per class"),
    "synth_classes": (4, int, "number of generated classes"),
    "synth_noise": (1.0, float, "background noise scale relative to couplings"),
    # preprocessing
    "bands": (tuple(STANDARD_BANDS), _bands, "the three analysis bands"),
    "filter_order": (30, int, "FIR order of the band filters (taps - 1)"),
    "augment_factor": (5, int, "training-set size multiplier from Gaussian copies"),
    "augment_sigma": (0.05, float, "copy noise std relative to the trial's channel std"),
    "use_fc": (True, _bool, "apply connectivity weights (false = all-ones ablation)"),
    # model
    "conv_channels": (_ref.conv_channels, _int_tuple(3), "feature maps of the three conv layers"),
    "kernel_widths": (_ref.kernel_widths, _int_tuple(3), "temporal kernel widths"),
    "pool_widths": (None, _optional_pools, "two pooling widths, or auto"),
    "resize": (_ref.resize, int, "side of the square plane fed to the transformer"),
    "patch": (_ref.patch, int, "patch side"),
    "embed_dim": (_ref.embed_dim, int, "transformer width"),
    "depth": (_ref.depth, int, "transformer blocks"),
    "heads": (_ref.heads, int, "attention heads"),
    "mlp_ratio": (_ref.mlp_ratio, int, "MLP hidden size / width"),
    "dropout": (_ref.dropout, float, "dropout after each pooling"),
    "alpha": (_ref.alpha, float, "weight of the classification terms"),
    "beta": (_ref.beta, float, "weight of the teacher-similarity term (needs teacher)"),
    "distill_sign": (_ref.distill_sign, _choice(*DISTILL_SIGNS), "agreement or similarity"),
    "teacher": ("", str, "teacher checkpoint path (required when beta > 0)"),
    "epochs": (_ref.epochs, int, "training epochs"),
    "batch_size": (_ref.batch_size, int, "mini-batch size"),
    "lr": (_ref.lr, float, "Adam learning rate"),
    "dtype": (_ref.dtype, _choice("float32", "float64"), "parameter precision"),
    # evaluation
    "mode": ("holdout", _choice("holdout", "cv5", "loso", "pseudo-online"), "evaluate mode"),
    "folds": (5, int, "folds for cv5"),
    "compare_ablation": (False, _bool, "also train all-ones models and report a paired p-value"),
    "n_perm": (10000, int, "random sign flips when more than 12 pairs"),
    "target": (0, int, "held-out subject index for loso"),
    "window_s": (2.0, float, "pseudo-online window length in seconds"),
    "overlap": (0.5, float, "pseudo-online window overlap fraction"),
    "success_threshold": (0.75, float, "fraction of correct windows for a successful trial"),
    "strict": (False, _bool, "require strictly more than the threshold"),
    "runs": ("", str, "pseudo-online runs as index ranges, e.g. 0-39;40-79 (empty = one run of all)"),
    "threshold": (0.9, float, "edge threshold for connectivity exports"),
    "band": ("alpha", _choice(*STANDARD_BANDS), "band for the connectivity command"),
    # spectra
    "spectrum": ("psd", _choice("psd", "ersp"), "what the spectrum command computes"),
    "channel": ("0", str, "channel name or index for the spectrum command"),
    "tmin": (-1.0, float, "time of the first sample relative to the event (s), for ersp"),
    "baseline_ms": ((-500.0, 0.0), _float_pair, "ersp baseline interval in ms"),
    "n_times": (400, int, "ersp time points"),
}

DEFAULTS = {k: v[0] for k, v in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, value, f"{source}:{lineno}")
    return values


def parse_value(key: str, value: str, where: str = "") -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"{where + ': ' if where else ''}unknown key {key!r}")
    try:
        return SCHEMA[key][1](value)
    except ValueError as exc:
        raise ConfigError(f"{where + ': ' if where else ''}bad value for {key}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> "RunConfig":
        values = dict(DEFAULTS)
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
        for key, value in (overrides or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = value
        return cls(values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def with_values(self, **changes) -> "RunConfig":
        merged = dict(self.values)
        merged.update(changes)
        return RunConfig(merged)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in SCHEMA)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def model_config(self, K: int, T: int, C: int) -> FcdnConfig:
        v = self.values
        cfg = FcdnConfig(
            K=K, T=T, C=C,
            conv_channels=v["conv_channels"], kernel_widths=v["kernel_widths"], pool_widths=v["pool_widths"],
            resize=v["resize"], patch=v["patch"], embed_dim=v["embed_dim"], depth=v["depth"], heads=v["heads"],
            mlp_ratio=v["mlp_ratio"], dropout=v["dropout"], alpha=v["alpha"], beta=v["beta"],
            distill_sign=v["distill_sign"], epochs=v["epochs"], batch_size=v["batch_size"], lr=v["lr"],
            seed=v["seed"], dtype=v["dtype"],
        )
        cfg.validate()
        return cfg

    def band_specs(self):
        return tuple(STANDARD_BANDS[n] for n in self.values["bands"])


def describe_defaults() -> str:
    """The default config as commented ``key = value`` lines."""
    return "".join(f"# {doc}\n{k} = {_fmt(d)}\n" for k, (d, _, doc) in SCHEMA.items())
