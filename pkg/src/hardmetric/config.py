"""Flat `key = value` run configuration files.

One assignment per line; blank lines and `#` comments are ignored. Keys are
exactly the TrainConfig field names; unknown or duplicate keys fail fast.
Tuples are comma lists (`hidden_dims = 256,256`), optionals accept `none`.
"""

from __future__ import annotations

from .errors import ConfigError, InputError
from .training import TrainConfig


def _parse_bool(value: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_int_tuple(value: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in value.split(",") if part.strip())


def _parse_optional_float(value: str):
    return None if value.lower() == "none" else float(value)


def _parse_optional_int(value: str):
    return None if value.lower() == "none" else int(value)


_FIELD_PARSERS = {
    "loss_kind": str,
    "alpha": float,
    "beta": float,
    "lambda_balance": float,
    "margin": float,
    "npair_n": int,
    "batch_size": int,
    "epochs": int,
    "learning_rate": float,
    "fc_lr_multiplier": float,
    "seed": int,
    "embed_dim": int,
    "eval_every": int,
    "hidden_dims": _parse_int_tuple,
    "generator_hidden_dim": _parse_optional_int,
    "train_fraction": float,
    "split_seed": int,
    "normalize_embeddings": _parse_bool,
    "synthetics": _parse_bool,
    "fixed_reference_distance": _parse_optional_float,
    "recall_ks": _parse_int_tuple,
}


def parse_config_text(text: str) -> TrainConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    try:
        return TrainConfig(**values)
    except InputError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
