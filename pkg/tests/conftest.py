import json
from pathlib import Path

import pytest

from cen.cli import default_config
from cen.evolution import RunConfig


def small_run_config(**overrides) -> RunConfig:
    """A fast chain config for unit tests; benchmark values live in default_config."""
    base = dict(
        tau=2.0,
        alpha=0.5,
        lambda1=4.0,
        lambda_t=4.0,
        epochs=5,
        batch_size=32,
        lr=0.01,
        momentum=0.9,
        weight_decay=1e-4,
        lr_decay_factor=0.1,
        lr_decay_interval=20,
        generations=2,
        warm_start=True,
        init_seed=0,
        shuffle_seed=0,
        trunk_dims=[16],
        activation="relu",
        head_mode="both",
        kl_tau_square_rescale=False,
        ce_at_transfer_tau=False,
        inference_tau=1.0,
    )
    base.update(overrides)
    return RunConfig(**base)


def small_config_dict(**section_overrides) -> dict:
    """A complete config document scaled down for CLI tests."""
    doc = default_config()
    doc["data"].update(
        {"n_train": 160, "n_test": 40, "feature_dim": 8, "n_identities": 10}
    )
    doc["run"].update(
        {"epochs": 3, "batch_size": 32, "generations": 2, "trunk_dims": [16]}
    )
    for section, values in section_overrides.items():
        doc.setdefault(section, {}).update(values)
    return doc


def write_config(tmp_path: Path, doc: dict, name: str = "config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture
def config_path(tmp_path):
    return write_config(tmp_path, small_config_dict())
