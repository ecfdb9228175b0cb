"""Unified parameter checkpoint: embedder, and optionally generator and
classifier, in one versioned .npz container.

Layout (format version 1): a `format_version` scalar, a `meta_json` string
with layer shapes/activations and arbitrary run metadata, and one float64
array per parameter under keys like `embedder/extractor/0/weight`. Arrays
round-trip bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .embedder import EmbedderParams
from .errors import InputError
from .generator import ClassifierParams, GeneratorParams
from .nn import DenseLayer

FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    embedder: EmbedderParams
    generator: GeneratorParams | None
    classifier: ClassifierParams | None
    meta: dict


def _layer_entries(prefix: str, layer: DenseLayer, arrays: dict, meta_layers: list) -> None:
    arrays[f"{prefix}/weight"] = layer.weight
    arrays[f"{prefix}/bias"] = layer.bias
    meta_layers.append({"prefix": prefix, "activation": layer.activation})


def save_checkpoint(
    path,
    embedder: EmbedderParams,
    generator: GeneratorParams | None = None,
    classifier: ClassifierParams | None = None,
    meta: dict | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    layers: list[dict] = []
    for i, layer in enumerate(embedder.extractor):
        _layer_entries(f"embedder/extractor/{i}", layer, arrays, layers)
    _layer_entries("embedder/projector", embedder.projector, arrays, layers)
    if generator is not None:
        for i, layer in enumerate(generator.layers):
            _layer_entries(f"generator/{i}", layer, arrays, layers)
    if classifier is not None:
        _layer_entries("classifier", classifier.layer, arrays, layers)
    doc = {
        "layers": layers,
        "num_extractor_layers": len(embedder.extractor),
        "num_generator_layers": len(generator.layers) if generator is not None else 0,
        "has_classifier": classifier is not None,
        "normalize_embeddings": embedder.normalize,
        "meta": meta or {},
    }
    arrays["format_version"] = np.asarray(FORMAT_VERSION)
    arrays["meta_json"] = np.asarray(json.dumps(doc))
    np.savez(path, **arrays)


def load_checkpoint(path) -> CheckpointBundle:
    with np.load(path, allow_pickle=False) as npz:
        if "format_version" not in npz:
            raise InputError(f"{path} is not a checkpoint (missing format_version)")
        version = int(npz["format_version"])
        if version != FORMAT_VERSION:
            raise InputError(f"unsupported checkpoint format version {version}")
        doc = json.loads(str(npz["meta_json"]))
        activations = {entry["prefix"]: entry["activation"] for entry in doc["layers"]}

        def layer(prefix: str) -> DenseLayer:
            return DenseLayer(npz[f"{prefix}/weight"], npz[f"{prefix}/bias"], activations[prefix])

        extractor = [layer(f"embedder/extractor/{i}") for i in range(doc["num_extractor_layers"])]
        embedder = EmbedderParams(extractor, layer("embedder/projector"), doc["normalize_embeddings"])
        generator = None
        if doc["num_generator_layers"]:
            generator = GeneratorParams([layer(f"generator/{i}") for i in range(doc["num_generator_layers"])])
        classifier = ClassifierParams(layer("classifier")) if doc["has_classifier"] else None
    return CheckpointBundle(embedder, generator, classifier, doc["meta"])
