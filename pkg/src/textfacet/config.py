"""INI run configuration: strict keys, typed values, stable round trips.

Every recognized key has a default except the mandatory [data] entries, so a
minimal file names just the dataset, its file and its classes. Unknown
sections or keys are errors rather than silent noise. The default topic
count follows the dataset name; any other dataset must set it explicitly
when the topic branch is on.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields

from .encoder import EncoderConfig
from .model import ModelConfig, TrainConfig
from .topics import LdaConfig

DATASET_TOPIC_DEFAULTS = {"wz-ls": 15, "dt": 10, "founta": 15}

_MANDATORY = object()

# section -> key -> (type tag, default); type tags: str int float bool
# int_list str_list
_SCHEMA = {
    "data": {
        "dataset": ("str", _MANDATORY),
        "train_file": ("str", _MANDATORY),
        "class_names": ("str_list", _MANDATORY),
        "id_column": ("str", "id"),
        "label_column": ("str", "label"),
        "text_column": ("str", "text"),
        "max_len": ("int", 50),
    },
    "embeddings": {
        "dim": ("int", 300),
        "glove": ("str", ""),
        "word2vec_wiki": ("str", ""),
        "paragram": ("str", ""),
        "lexicon": ("str", ""),
        "stopwords": ("str", ""),
        "sentiment_labels": ("str", ""),
    },
    "encoder": {
        "filter_widths": ("int_list", (3, 4, 5)),
        "filters_per_width": ("int", 50),
        "hidden_size": ("int", 200),
        "attention_dim": ("int", 100),
    },
    "topics": {
        "topic_count": ("int", 0),  # 0 = use the dataset default
        "alpha": ("float", 0.1),
        "beta": ("float", 0.01),
        "iterations": ("int", 500),
        "burn_in": ("int", 200),
        "sample_lag": ("int", 10),
        "sparsify_threshold": ("float", 0.0),
    },
    "model": {
        "use_sentiment": ("bool", True),
        "use_topic": ("bool", True),
        "freeze_embeddings": ("bool", True),
    },
    "train": {
        "learning_rate": ("float", 0.001),
        "batch_size": ("int", 64),
        "epochs": ("int", 10),
        "dropout_embed": ("float", 0.5),
        "dropout_fc": ("float", 0.2),
        "folds": ("int", 5),
        "sentiment_epochs": ("int", 50),
    },
}


@dataclass(frozen=True)
class AppConfig:
    dataset: str
    train_file: str
    class_names: tuple
    id_column: str
    label_column: str
    text_column: str
    max_len: int
    dim: int
    glove: str
    word2vec_wiki: str
    paragram: str
    lexicon: str
    stopwords: str
    sentiment_labels: str
    filter_widths: tuple
    filters_per_width: int
    hidden_size: int
    attention_dim: int
    topic_count: int
    alpha: float
    beta: float
    iterations: int
    burn_in: int
    sample_lag: int
    sparsify_threshold: float
    use_sentiment: bool
    use_topic: bool
    freeze_embeddings: bool
    learning_rate: float
    batch_size: int
    epochs: int
    dropout_embed: float
    dropout_fc: float
    folds: int
    sentiment_epochs: int

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(embed_dim=self.dim,
                             filter_widths=self.filter_widths,
                             filters_per_width=self.filters_per_width,
                             hidden_size=self.hidden_size,
                             attention_dim=self.attention_dim)

    def model_config(self) -> ModelConfig:
        return ModelConfig(encoder=self.encoder_config(),
                           class_count=len(self.class_names),
                           topic_count=self.topic_count,
                           use_sentiment=self.use_sentiment,
                           use_topic=self.use_topic,
                           freeze_embeddings=self.freeze_embeddings)

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate,
                           batch_size=self.batch_size, epochs=self.epochs,
                           dropout_embed=self.dropout_embed,
                           dropout_fc=self.dropout_fc, seed=seed,
                           max_len=self.max_len)

    def lda_config(self, seed: int = 0) -> LdaConfig:
        return LdaConfig(topic_count=self.topic_count, alpha=self.alpha,
                         beta=self.beta, iterations=self.iterations,
                         burn_in=self.burn_in, sample_lag=self.sample_lag,
                         seed=seed)


def _convert(section: str, key: str, kind: str, raw: str):
    where = f"[{section}] {key}"
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        if kind == "str_list":
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        return raw
    except ValueError:
        raise ValueError(f"config value {where}: cannot parse {raw!r} as {kind}")


def _validate(values: dict) -> None:
    def positive(key):
        if values[key] <= 0:
            raise ValueError(f"config: {key} must be positive, got {values[key]}")

    for key in ("dim", "filters_per_width", "hidden_size", "attention_dim",
                "max_len", "learning_rate", "batch_size", "epochs",
                "sentiment_epochs", "alpha", "beta", "iterations",
                "sample_lag"):
        positive(key)
    if len(values["class_names"]) < 2:
        raise ValueError("config: class_names needs at least two entries")
    if len(set(values["class_names"])) != len(values["class_names"]):
        raise ValueError("config: class_names contains duplicates")
    if not values["filter_widths"]:
        raise ValueError("config: filter_widths is empty")
    if values["max_len"] < max(values["filter_widths"]):
        raise ValueError("config: max_len is shorter than the widest filter")
    for key in ("dropout_embed", "dropout_fc", "sparsify_threshold"):
        if not 0.0 <= values[key] < 1.0:
            raise ValueError(f"config: {key} must be in [0, 1)")
    if values["folds"] < 2:
        raise ValueError("config: folds must be at least 2")
    if values["burn_in"] < 0 or values["iterations"] <= values["burn_in"]:
        raise ValueError("config: iterations must exceed burn_in")
    if values["use_topic"] and values["topic_count"] < 1:
        raise ValueError(
            f"config: no topic_count given and dataset "
            f"{values['dataset']!r} has no default")


def parse_config(path) -> AppConfig:
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown config key [{section}] {key}")
    values = {}
    missing = []
    for section, keys in _SCHEMA.items():
        for key, (kind, default) in keys.items():
            if parser.has_option(section, key):
                values[key] = _convert(section, key, kind,
                                       parser.get(section, key))
            elif default is _MANDATORY:
                missing.append(f"[{section}] {key}")
            else:
                values[key] = default
    if missing:
        raise ValueError("missing mandatory config keys: " + ", ".join(missing))
    if values["topic_count"] == 0:
        values["topic_count"] = DATASET_TOPIC_DEFAULTS.get(values["dataset"], 0)
    _validate(values)
    return AppConfig(**values)


def serialize_config(config: AppConfig) -> str:
    """Render every key explicitly; parsing the result reproduces config."""
    parser = configparser.ConfigParser(interpolation=None)
    values = {f.name: getattr(config, f.name) for f in fields(config)}
    for section, keys in _SCHEMA.items():
        parser[section] = {}
        for key, (kind, _) in keys.items():
            value = values[key]
            if kind in ("int_list", "str_list"):
                rendered = ",".join(str(v) for v in value)
            elif kind == "bool":
                rendered = "true" if value else "false"
            else:
                rendered = repr(value) if isinstance(value, float) else str(value)
            parser[section][key] = rendered
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()
