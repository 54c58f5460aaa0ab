"""
Versioned checkpoints: flat parameter vector + prior mask + JSON shape manifest in one .npz
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np
import torch

from ..errors import ConfigurationError
from .config import CcgConfig
from .model import CcgMsd, build_model

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def save_checkpoint(model: CcgMsd, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "n_channels": model.n_channels,
        "window": model.window,
        "parameters": [[name, list(p.shape)] for name, p in model.named_parameters()],
    }
    prior = model.channel.adjacency.m_prior.cpu().numpy() if model.channel is not None else np.zeros((0, 0))
    np.savez(
        path,
        params=model.flat_view().cpu().numpy(),
        m_prior=prior,
        manifest=np.array(json.dumps(manifest, sort_keys=True)),
    )
    logger.debug(f"Saved checkpoint {path} ({model.n_params} parameters)")
    return path


def load_checkpoint(path: Union[str, Path]) -> CcgMsd:
    with np.load(path) as data:
        manifest = json.loads(str(data["manifest"]))
        params = data["params"]
        prior = data["m_prior"]

    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: checkpoint format {manifest.get('format_version')} != {FORMAT_VERSION}")
    config = CcgConfig.from_dict(manifest["config"])
    model = build_model(config, manifest["n_channels"], manifest["window"], seed=0,
                        m_prior=prior if prior.size else None)

    expected = [[name, list(p.shape)] for name, p in model.named_parameters()]
    if expected != manifest["parameters"] or params.size != model.n_params:
        raise ConfigurationError(f"{path}: parameter manifest does not match the rebuilt model")
    model.load_flat_view(torch.from_numpy(params))
    return model
