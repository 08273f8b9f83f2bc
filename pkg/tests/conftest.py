"""Shared fixtures: disk-cached trained supernet families.

Training a toy family takes minutes, so checkpoints and per-architecture
accuracy tables are cached under tests/_artifacts keyed by a hash of every
setting that affects the result (bump VERSION to invalidate).
"""

import hashlib
import json
from pathlib import Path

import pytest

from elasticnas.data import synthetic_dataset
from elasticnas.schedule import make_schedule, run_training
from elasticnas.space import get_space
from elasticnas.supernet import (
    build_supernet,
    evaluate_accuracy,
    load_checkpoint,
    save_checkpoint,
    toy_base,
)

VERSION = "v1"
ARTIFACTS = Path(__file__).parent / "_artifacts"

FAMILY_SEEDS = (0, 1, 2)
DATASET_SETTINGS = dict(seed=0, n_train=512, n_val=1024, noise=1.0)
TRAIN_SCALE = 1 / 12
TRAIN_BATCH = 64


def _run_key(kind: str, space_name: str, seed: int) -> str:
    cfg = {
        "version": VERSION,
        "kind": kind,
        "space": space_name,
        "seed": seed,
        "dataset": DATASET_SETTINGS,
        "scale": TRAIN_SCALE,
        "batch": TRAIN_BATCH,
    }
    canon = json.dumps(cfg, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


class FamilyStore:
    """Lazily trains (or reloads) weight-shared families and their metrics."""

    def __init__(self):
        ARTIFACTS.mkdir(exist_ok=True)
        self._params = {}
        self._tables = {}
        self._dataset = None

    @property
    def dataset(self):
        if self._dataset is None:
            self._dataset = synthetic_dataset(**DATASET_SETTINGS)
        return self._dataset

    def trained(self, kind: str, space_name: str, seed: int):
        key = _run_key(kind, space_name, seed)
        if key in self._params:
            return self._params[key]
        ckpt = ARTIFACTS / f"{key}.ckpt"
        if ckpt.exists():
            params = load_checkpoint(ckpt)
        else:
            space = get_space(space_name)
            params = build_supernet(toy_base(), space, seed=seed)
            params, _ = run_training(
                params, space, make_schedule(kind, TRAIN_SCALE), self.dataset,
                seed=seed, batch_size=TRAIN_BATCH,
            )
            save_checkpoint(params, ckpt, extra={"run_key": key})
        self._params[key] = params
        return params

    def accuracies(self, kind: str, space_name: str, seed: int, archs):
        """Held-out accuracy per arch, memoized on disk per training run."""
        key = _run_key(kind, space_name, seed)
        if key not in self._tables:
            path = ARTIFACTS / f"{key}.eval.json"
            self._tables[key] = (
                json.loads(path.read_text()) if path.exists() else {}
            )
        table = self._tables[key]
        missing = [a for a in archs if a.to_json() not in table]
        if missing:
            params = self.trained(kind, space_name, seed)
            data = self.dataset
            for arch in missing:
                table[arch.to_json()] = evaluate_accuracy(
                    params, arch, data.val_images, data.val_labels
                )
            (ARTIFACTS / f"{key}.eval.json").write_text(json.dumps(table))
        return {a: table[a.to_json()] for a in archs}


@pytest.fixture(scope="session")
def families():
    return FamilyStore()


_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
