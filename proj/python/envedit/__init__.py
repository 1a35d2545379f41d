"""Python access to the envedit core: world generation, edits, training and evaluation.

Configs are plain dicts with the same sections as the CLI config file. Commands write
into a workspace directory and return the summary the CLI would print.
"""

import json

from ._envedit import (
    EnvEditError,
    conditional_instance_norm,
    ensemble_decide,
    run,
    spl,
)
from . import _envedit

__all__ = [
    "EnvEditError",
    "conditional_instance_norm",
    "default_config",
    "dtw",
    "edit",
    "ensemble_decide",
    "evaluate",
    "normalize_config",
    "read_artifact",
    "run",
    "spl",
    "train",
    "train_speaker",
    "worldgen",
]


def _dump(config):
    return json.dumps(config if config is not None else {})


def default_config():
    return json.loads(_envedit._default_config())


def normalize_config(config):
    """Fills defaults and validates; unknown keys raise EnvEditError."""
    return json.loads(_envedit._normalize_config(_dump(config)))


def worldgen(out, config=None, seed=None):
    return json.loads(_envedit._worldgen(_dump(config), str(out), seed))


def edit(out, config=None):
    return json.loads(_envedit._edit(_dump(config), str(out)))


def train_speaker(out, config=None):
    return json.loads(_envedit._train_speaker(_dump(config), str(out)))


def train(out, config=None, name=""):
    return json.loads(_envedit._train(_dump(config), str(out), name))


def evaluate(out, checkpoints, config=None, split="val_unseen", source="original", ensemble=False, plot=False, name=""):
    if isinstance(checkpoints, str):
        checkpoints = [checkpoints]
    return json.loads(
        _envedit._evaluate(_dump(config), str(out), list(checkpoints), split, source, ensemble, plot, name)
    )


def read_artifact(out, rel):
    """Artifact bytes, verified against the workspace manifest."""
    return _envedit._read_artifact(str(out), rel)


def dtw(environment, predicted, reference, threshold=3.0):
    """DTW and nDTW between two node paths of an environment dict (as stored in world/envs)."""
    env_json = environment if isinstance(environment, str) else json.dumps(environment)
    return json.loads(_envedit._dtw(env_json, list(predicted), list(reference), threshold))
