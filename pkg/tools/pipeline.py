"""
Pipeline Module

Artifact plumbing between the library modules and the command line:
dataset preparation (Human3.6M directory or synthetic families), the
prepared-dataset container, run directories and model/completer file names.

Features:
- prepare_data(): ingest, downsample, compute statistics on the training
  subjects, normalize everything and cache it as a checkpoint container
- PreparedData: normalized train/test sequences with statistics, vocabulary
  and the metric matching the data source
- Deterministic synthetic datasets regenerated from (seed, family)

Dependencies:
- numpy: Array handling
- tools.config: RunConfig
- tools.checkpoint: Container persistence
"""

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from tools.checkpoint import CheckpointAux, load_checkpoint, save_checkpoint
from tools.config import RunConfig, get_config
from tools.decorators import log_duration
from tools.errors import DataError
from tools.evalbench import Metric
from tools.hs2sae import ArchConfig
from tools.motiondata import (
    H36M_ACTIONS,
    SYNTH_FAMILIES,
    LabelVocab,
    MotionSequence,
    NormStats,
    append_label,
    compute_norm_stats,
    downsample,
    load_dataset,
    normalize,
    synth_motion,
)
from tools.utils import make_rng

logger = logging.getLogger(__name__)

config = get_config()
INGEST_WORKERS = config.get("data.workers", 4)
DATASET_FILE = config.get("data.prepared_file", "dataset.hs2s")

_FILE_ID = re.compile(r"S(?P<subject>\d+)/(?P<action>.+)_(?P<subaction>\d+)$")


# -------------------------------------------------------------------
# PREPARED DATA
# -------------------------------------------------------------------
@dataclass
class PreparedData:
    """Normalized pose sequences of both splits with their preprocessing contract."""

    train: List[MotionSequence]
    test: List[MotionSequence]
    stats: NormStats
    vocab: LabelVocab
    source: str

    @property
    def fps(self) -> float:
        return self.train[0].fps

    @property
    def pose_channels(self) -> int:
        return self.stats.kept_count

    def label_block(self, action: str) -> np.ndarray:
        return self.vocab.one_hot(self.vocab.index(action))

    def split_frames(self, split: str, use_labels: bool = False) -> List[np.ndarray]:
        """Arrays of one split, label-appended when the model carries labels."""
        sequences = self.train if split == "train" else self.test
        if not use_labels:
            return [seq.frames for seq in sequences]
        return [append_label(seq.frames, self.vocab.index(seq.action), self.vocab) for seq in sequences]

    def test_dataset(self) -> Dict[str, np.ndarray]:
        return {seq.file_id: seq.frames for seq in self.test}

    def metric(self, run: RunConfig) -> Metric:
        if self.source == "synthetic":
            return Metric("euclidean", self.stats)
        return Metric("angle", self.stats, run.euler_convention, run.min_gt_std)


def _float32_stats(stats: NormStats) -> NormStats:
    # containers hold 32-bit values; normalize with exactly what will be reloaded
    cast = lambda a: a.astype(np.float32).astype(np.float64)
    return replace(stats, mean=cast(stats.mean), std=cast(stats.std), min=cast(stats.min), max=cast(stats.max))


def _parse_file_id(file_id: str, frames: np.ndarray, fps: float) -> MotionSequence:
    match = _FILE_ID.match(file_id)
    if not match:
        raise DataError(f"malformed file id '{file_id}' in prepared dataset")
    return MotionSequence(frames, fps, action=match.group("action"), subject=int(match.group("subject")),
                          subaction=int(match.group("subaction")))


# -------------------------------------------------------------------
# SOURCES
# -------------------------------------------------------------------
def synthetic_split(run: RunConfig, split: str, subject: int, per_family: int) -> List[MotionSequence]:
    seeds = make_rng(run.seed, "synthetic", split).integers(0, 2 ** 31, size=(len(SYNTH_FAMILIES), per_family))
    sequences = []
    for f, family in enumerate(SYNTH_FAMILIES):
        for i in range(per_family):
            seq = synth_motion(family, run.synthetic_channels, run.synthetic_length, int(seeds[f, i]))
            sequences.append(replace(seq, subject=subject, subaction=i + 1))
    return sequences


def load_h36m(run: RunConfig) -> tuple:
    if not run.data_dir:
        raise DataError("no dataset directory: set data_dir or HS2S_DATA_DIR")
    actions = run.actions or list(H36M_ACTIONS)
    train = load_dataset(run.data_dir, run.train_subjects, actions, workers=INGEST_WORKERS)
    test = load_dataset(run.data_dir, run.test_subjects, actions, workers=INGEST_WORKERS)
    train = [downsample(s, run.downsample) for s in train]
    test = [downsample(s, run.downsample) for s in test]
    return train, test, actions


@log_duration("prepare-data")
def prepare_data(run: RunConfig) -> PreparedData:
    """
    Build the normalized dataset of a run and cache it under output_dir.

    Statistics come from the training split only.
    """
    if run.data_source == "synthetic":
        train = synthetic_split(run, "train", 1, run.synthetic_train_per_family)
        test = synthetic_split(run, "test", 2, run.synthetic_test_per_family)
        actions = list(SYNTH_FAMILIES)
    else:
        train, test, actions = load_h36m(run)

    stats = _float32_stats(compute_norm_stats(train, run.scheme, run.ignore_threshold))
    prepared = PreparedData(
        train=[normalize(s, stats) for s in train],
        test=[normalize(s, stats) for s in test],
        stats=stats,
        vocab=LabelVocab(tuple(actions)),
        source=run.data_source,
    )
    save_prepared(prepared, Path(run.output_dir) / DATASET_FILE)
    logger.info(f"Prepared {len(train)} train / {len(test)} test sequences",
                extra={"kept_channels": stats.kept_count, "source": run.data_source})
    return prepared


def save_prepared(prepared: PreparedData, path: Path) -> Path:
    dataset = {f"train:{s.file_id}": s.frames for s in prepared.train}
    dataset.update({f"test:{s.file_id}": s.frames for s in prepared.test})
    meta = {"source": prepared.source, "fps": repr(prepared.fps)}
    return save_checkpoint(path, None, CheckpointAux(stats=prepared.stats, vocab=prepared.vocab,
                                                     dataset=dataset, meta=meta))


def load_prepared(run: RunConfig) -> PreparedData:
    """
    Load the prepared dataset of a run.

    Raises:
        DataError: If prepare-data has not been run for this output directory
    """
    path = Path(run.output_dir) / DATASET_FILE
    if not path.exists():
        raise DataError(f"no prepared dataset at '{path}'; run prepare-data first")
    _, aux = load_checkpoint(path)
    fps = float(aux.meta.get("fps", "25.0"))
    train, test = [], []
    for key, frames in aux.dataset.items():
        split, _, file_id = key.partition(":")
        (train if split == "train" else test).append(_parse_file_id(file_id, frames, fps))
    if not train or not test:
        raise DataError(f"prepared dataset '{path}' lacks a train or test split")
    return PreparedData(train, test, aux.stats, aux.vocab, aux.meta.get("source", "h36m"))


# -------------------------------------------------------------------
# RUN ARTIFACTS
# -------------------------------------------------------------------
def model_path(run: RunConfig, variant: Optional[str] = None, tag: str = "") -> Path:
    variant = variant or run.variant
    name = "model" if variant == "hs2sae" else f"model_{variant}"
    if variant == "h_seq2seq":
        name += f"_{run.seq2seq_target}"
    return Path(run.output_dir) / f"{name}{tag}.hs2s"


def completer_key(mode: str, target: str, j: int) -> str:
    return f"{mode}_{target}_j{j}"


def completer_path(model_file: Path, mode: str, target: str, j: int) -> Path:
    return model_file.with_name(f"{model_file.stem}.{completer_key(mode, target, j)}.hs2s")


def arch_for(run: RunConfig, prepared: PreparedData, variant: Optional[str] = None) -> ArchConfig:
    """ArchConfig of a run on prepared data (label channels counted when used)."""
    features = prepared.pose_channels + (prepared.vocab.size if run.use_labels else 0)
    return ArchConfig.from_run(run, features, variant)


def eval_windows(frames: Sequence[np.ndarray], T: int, count: int, seed: int, stream: str) -> np.ndarray:
    """`count` random full windows from sequences at least T frames long."""
    usable = [f for f in frames if f.shape[0] >= T]
    if not usable:
        raise DataError(f"no sequence has at least T={T} frames")
    rng = make_rng(seed, "windows", stream)
    picks = rng.integers(0, len(usable), size=count)
    starts = [int(rng.integers(0, usable[p].shape[0] - T + 1)) for p in picks]
    return np.stack([usable[p][s:s + T] for p, s in zip(picks, starts)])
