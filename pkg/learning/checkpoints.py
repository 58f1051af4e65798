import json
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from learning.exceptions import LearningError, MissingCheckpoint, ShapeMismatch
from learning.network import AdamState, Learner, MlpParams

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_PARAM_SETS = ("online", "target", "adam_m", "adam_v")


@dataclass
class Checkpoint:
    learner: Learner
    meta: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))


def replay_path(path) -> Path:
    """Replay-buffer pickle stored next to a checkpoint: checkpoint.npz -> checkpoint.replay.pkl."""
    path = Path(path)
    return path.with_name(f"{path.stem}.replay.pkl")


def save_checkpoint(path, learner: Learner, meta: dict, replay=None) -> Path:
    """
    Write networks, optimizer state and metadata to a single .npz file.

    The replay buffer, if given, is pickled next to it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    opt = learner.opt
    arrays = {}
    for name, params in zip(_PARAM_SETS, (learner.online, learner.target, opt.m, opt.v)):
        for i, array in enumerate(params.arrays()):
            arrays[f"{name}_{i}"] = array
    arrays["adam"] = np.array([opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps], dtype=float)
    meta = {**meta, "format_version": FORMAT_VERSION, "sizes": learner.sizes}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))

    with path.open("wb") as f:
        np.savez(f, **arrays)
    if replay is not None:
        with replay_path(path).open("wb") as f:
            pickle.dump(replay, f, protocol=pickle.HIGHEST_PROTOCOL)
    logger.info(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path, expected_sizes=None) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        MissingCheckpoint: the file does not exist or is unreadable
        ShapeMismatch: stored shapes disagree with each other or with expected_sizes
    """
    path = Path(path) if path else None
    if path is None or not path.is_file():
        raise MissingCheckpoint(f"No checkpoint at {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (OSError, ValueError) as e:
        raise MissingCheckpoint(f"Unreadable checkpoint {path}: {e}") from e

    meta = json.loads(str(arrays.pop("meta")))
    if meta.get("format_version") != FORMAT_VERSION:
        raise LearningError(
            f"Checkpoint {path} has format {meta.get('format_version')}, expected {FORMAT_VERSION}"
        )

    param_sets = {}
    for name in _PARAM_SETS:
        count = sum(1 for key in arrays if key.startswith(f"{name}_"))
        param_sets[name] = MlpParams.from_arrays(arrays[f"{name}_{i}"] for i in range(count))
    shapes = param_sets["online"].shapes()
    for name, params in param_sets.items():
        if params.shapes() != shapes:
            raise ShapeMismatch(f"Checkpoint {path}: {name} shapes {params.shapes()} vs {shapes}")
    sizes = param_sets["online"].sizes
    if sizes != list(meta["sizes"]):
        raise ShapeMismatch(f"Checkpoint {path}: stored sizes {sizes}, metadata says {meta['sizes']}")
    if expected_sizes is not None and list(expected_sizes) != sizes:
        raise ShapeMismatch(f"Checkpoint {path} has layer sizes {sizes}, expected {list(expected_sizes)}")

    step, lr, beta1, beta2, eps = arrays["adam"].tolist()
    opt = AdamState(
        m=param_sets["adam_m"],
        v=param_sets["adam_v"],
        step=int(step),
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )
    learner = Learner(online=param_sets["online"], target=param_sets["target"], opt=opt)
    return Checkpoint(learner=learner, meta=meta, path=path)


def load_replay(path):
    """The pickled replay buffer stored next to a checkpoint, or None."""
    replay_file = replay_path(path)
    if not replay_file.is_file():
        logger.warning(f"No replay buffer next to {path}; resuming with an empty buffer")
        return None
    with replay_file.open("rb") as f:
        return pickle.load(f)
