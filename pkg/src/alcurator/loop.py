"""The active-learning loop: fit, acquire, label, extend, measure.

Each iteration t fits a GP on the current training set, scores the held-out
pool, selects a batch according to the configured strategy and schedule,
labels it through the oracle, extends the training set, refits, and records
test metrics. All randomness is a pure function of (seed, purpose, t), and a
checkpoint is persisted after every iteration, so an interrupted or suspended
run resumes to bit-identical results.

Labeling may be deferred: the loop then writes the batch out as an XYZ
request file, suspends with status "awaiting_labels", and picks the batch
back up once a response table provides the labels.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import acquire, gp
from .config import ExperimentConfig, ConfigError, config_digest, render_config
from .descriptor import (
    DescriptorMatrix,
    MbtrConfig,
    dataset_descriptors,
    read_feature_table,
)
from .metrics import (
    IterationRecord,
    classification_rates,
    inrange_count,
    mae,
)
from .moldata import (
    Dataset,
    LabelTableError,
    Molecule,
    PoolState,
    TargetSpec,
    UnlabeledMoleculesError,
    attach_labels,
    default_n_test,
    format_xyz,
    load_xyz_dataset,
    make_pool,
    read_label_table,
    select_epsilon,
    synth_dataset,
)
from .report import (
    atomic_write_text,
    format_aggregate_csv,
    format_history_csv,
)

_STREAM_HYPEROPT = 6

THREADS_ENV_VAR = "AL_CURATOR_THREADS"

RUN_STATUSES = ("running", "awaiting_labels", "complete")

CHECKPOINT_FORMAT = 1


class LabelsPendingError(RuntimeError):
    """Raised when a batch needs labels that are not available yet."""

    def __init__(
        self,
        missing_ids: Sequence[str],
        request_path: str,
        response_path: str,
    ):
        self.missing_ids = tuple(missing_ids)
        self.request_path = request_path
        self.response_path = response_path
        shown = ", ".join(self.missing_ids[:10])
        if len(self.missing_ids) > 10:
            shown += ", ..."
        super().__init__(
            f"{len(self.missing_ids)} labels pending (request written to "
            f"{request_path}); add rows for {shown} to {response_path} "
            f"and resume"
        )


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file is unusable for the current config."""


@dataclass(frozen=True)
class PendingAcquisition:
    """A selected batch whose labels have not arrived yet."""

    t: int
    indices: tuple[int, ...]


@dataclass(frozen=True)
class RunState:
    """Everything one seed's run has decided so far."""

    strategy: str
    seed: int
    pool: PoolState
    t_done: int
    history: tuple[IterationRecord, ...]
    status: str
    hyper: Optional[gp.GpHyperparams] = None
    pending: Optional[PendingAcquisition] = None

    def __post_init__(self) -> None:
        if self.status not in RUN_STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.pending is not None and self.status != "awaiting_labels":
            raise ValueError("pending batch requires status awaiting_labels")


class _PendingLabels(Exception):
    """Internal: carries the batch that could not be labeled."""

    def __init__(self, t: int, indices: np.ndarray, cause: LabelsPendingError):
        self.t = t
        self.indices = tuple(int(i) for i in indices)
        self.cause = cause


def write_label_request(path: str, molecules: Sequence[Molecule]) -> None:
    """Emit the batch as concatenated XYZ blocks for an external labeler."""
    stripped = [dataclasses.replace(m, label=None) for m in molecules]
    atomic_write_text(path, format_xyz(stripped))


def read_label_response(
    path: str, expected_ids: Sequence[str]
) -> dict[str, float]:
    """Read an id-to-label table and require every expected id to be there."""
    table = read_label_table(path)
    missing = [i for i in expected_ids if i not in table]
    if missing:
        raise LabelTableError(
            "label response is missing ids: " + ", ".join(sorted(missing)[:10])
        )
    return {i: table[i] for i in expected_ids}


class PrecomputedOracle:
    """Labels come from the dataset itself; missing ones are an error."""

    def labels_for(
        self, ids: Sequence[str], molecules: Sequence[Molecule]
    ) -> dict[str, float]:
        missing = [m.id for m in molecules if m.label is None]
        if missing:
            raise UnlabeledMoleculesError(
                "oracle mode is precomputed but the pool lacks labels for: "
                + ", ".join(sorted(missing)[:10])
            )
        return {m.id: float(m.label) for m in molecules}


class DeferredOracle:
    """Labels come from a response table produced outside the run.

    Requested ids absent from the response (or the whole file being absent)
    suspend the run: the missing molecules are written to the request file
    and a LabelsPendingError is raised.
    """

    def __init__(self, request_path: str, response_path: str):
        self.request_path = request_path
        self.response_path = response_path

    def labels_for(
        self, ids: Sequence[str], molecules: Sequence[Molecule]
    ) -> dict[str, float]:
        table: dict[str, float] = {}
        if os.path.exists(self.response_path):
            table = read_label_table(self.response_path)
        missing = [i for i in ids if i not in table]
        if missing:
            by_id = {m.id: m for m in molecules}
            write_label_request(
                self.request_path, [by_id[i] for i in missing]
            )
            raise LabelsPendingError(
                missing, self.request_path, self.response_path
            )
        return {i: table[i] for i in ids}


class Runner:
    """Drives one seed's run over a prepared dataset and descriptors."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        dataset: Dataset,
        descriptors: DescriptorMatrix,
        target: Optional[TargetSpec],
        seed: int,
        oracle,
        checkpoint_path: Optional[str] = None,
    ):
        if len(dataset) != len(descriptors):
            raise ValueError("dataset and descriptors differ in length")
        self.cfg = cfg
        self.dataset = dataset
        self.descriptors = descriptors
        self.target = target
        self.seed = seed
        self.oracle = oracle
        self.checkpoint_path = checkpoint_path
        self.digest = config_digest(cfg)
        self.labels = dataset.known_labels()
        self._model_train: Optional[tuple[int, ...]] = None
        self._model: Optional[gp.GpModel] = None

    # -- lifecycle -------------------------------------------------------

    def initial_state(self) -> RunState:
        n = len(self.dataset)
        n_test = self.cfg.n_test
        if n_test is None:
            n_test = default_n_test(n, self.cfg.dataset.source == "synthetic")
        pool = make_pool(
            self.dataset, n_test, self.cfg.schedule.n_init, self.seed
        )
        if self.cfg.schedule.n_init > self.cfg.gp.max_exact_train:
            raise gp.TrainingSizeError(
                f"initial training size {self.cfg.schedule.n_init} exceeds "
                f"the exact-solver cap {self.cfg.gp.max_exact_train}"
            )
        return RunState(
            strategy=self.cfg.strategy,
            seed=self.seed,
            pool=pool,
            t_done=-1,
            history=(),
            status="running",
        )

    def effective_max_train(self) -> int:
        cap = self.cfg.gp.max_exact_train
        if self.cfg.max_train is not None:
            return min(self.cfg.max_train, cap)
        return cap

    def stop_reason(self, state: RunState) -> Optional[str]:
        if not state.history:
            return None
        if len(state.pool.train) >= self.effective_max_train():
            return "training size limit reached"
        if not state.pool.heldout:
            return "held-out pool exhausted"
        if self.target is not None:
            held = np.array(state.pool.heldout, dtype=int)
            held_labels = self.labels[held]
            if not np.any(np.isnan(held_labels)):
                if inrange_count(held_labels, self.target) == 0:
                    return "no in-range molecules left in the held-out pool"
        return None

    def run(self, state: Optional[RunState] = None) -> RunState:
        """Iterate to completion or suspension, checkpointing throughout."""
        if state is None:
            state = self.initial_state()
        while state.status != "complete":
            if state.status == "running" and self.stop_reason(state):
                state = dataclasses.replace(state, status="complete")
                self._save(state)
                break
            try:
                state = self.step(state)
            except _PendingLabels as pending:
                state = dataclasses.replace(
                    state,
                    status="awaiting_labels",
                    pending=PendingAcquisition(
                        t=pending.t, indices=pending.indices
                    ),
                )
                self._save(state)
                raise pending.cause from None
            self._save(state)
        return state

    # -- one iteration ---------------------------------------------------

    def step(self, state: RunState) -> RunState:
        t = state.t_done + 1
        if state.pending is not None:
            picked = np.array(state.pending.indices, dtype=int)
            assert state.pending.t == t
            self._label(picked, t)
            pool_new = state.pool.acquire(picked)
            hyper = state.hyper
        else:
            picked, hyper = self._select_batch(state, t)
            if len(picked) > 0:
                self._label(picked, t)
                pool_new = state.pool.acquire(picked)
            else:
                pool_new = state.pool
        model, hyper = self._fitted_model(pool_new.train, hyper)
        record = self._measure(t, pool_new, model)
        return RunState(
            strategy=state.strategy,
            seed=state.seed,
            pool=pool_new,
            t_done=t,
            history=state.history + (record,),
            status="running",
            hyper=hyper,
        )

    def _select_batch(
        self, state: RunState, t: int
    ) -> tuple[np.ndarray, Optional[gp.GpHyperparams]]:
        """Score the held-out pool and pick iteration t's batch."""
        requested = self.cfg.schedule.batch_size(t)
        heldout = np.array(state.pool.heldout, dtype=int)
        room = self.effective_max_train() - len(state.pool.train)
        # The user limit only stops runs; the solver cap also trims batches.
        solver_room = self.cfg.gp.max_exact_train - len(state.pool.train)
        n_batch = min(
            requested,
            acquire.max_batch(self.cfg.strategy, len(heldout)),
            solver_room,
        )
        if n_batch <= 0:
            return np.array([], dtype=int), state.hyper
        model, hyper = self._fitted_model(state.pool.train, state.hyper)
        predictions = gp.predict(model, self.descriptors.rows(heldout))
        ctx = acquire.AcquisitionContext(
            predictions=predictions,
            descriptors=self.descriptors.rows(heldout),
            seed=self.seed,
            iteration=t,
            target=self.target,
        )
        local = acquire.select(self.cfg.strategy, ctx, n_batch)
        return heldout[local], hyper

    def _label(self, picked: np.ndarray, t: int) -> None:
        unknown = picked[np.isnan(self.labels[picked])]
        if len(unknown) == 0:
            return
        molecules = [self.dataset.molecules[int(i)] for i in unknown]
        ids = [m.id for m in molecules]
        try:
            values = self.oracle.labels_for(ids, molecules)
        except LabelsPendingError as exc:
            raise _PendingLabels(t, picked, exc) from None
        for idx, mol_id in zip(unknown, ids):
            self.labels[int(idx)] = values[mol_id]

    def _hyperopt_seed(self, train_size: int) -> list[int]:
        return [self.seed, _STREAM_HYPEROPT, train_size]

    def _fitted_model(
        self,
        train: Sequence[int],
        current_hyper: Optional[gp.GpHyperparams],
    ) -> tuple[gp.GpModel, Optional[gp.GpHyperparams]]:
        """Fit (or reuse) the model for a training index tuple.

        Hyperparameters are re-tuned from the configured initial values on
        the first fit and, when re-optimization is enabled, on every later
        fit; the tuning restarts are seeded by the training-set size so a
        resumed run reproduces them exactly.
        """
        train_tuple = tuple(int(i) for i in train)
        if self._model is not None and self._model_train == train_tuple:
            return self._model, current_hyper
        idx = np.array(train_tuple, dtype=int)
        x_tr = self.descriptors.rows(idx)
        y_tr = self.labels[idx]
        assert not np.any(np.isnan(y_tr))
        settings = self.cfg.gp
        if settings.optimize and (
            settings.reoptimize_each_iteration or current_hyper is None
        ):
            hyper = gp.optimize_hyperparams(
                x_tr,
                y_tr,
                init=settings.hyper,
                restarts=settings.restarts,
                bounds_factor=settings.bounds_factor,
                seed=self._hyperopt_seed(len(train_tuple)),
                max_train=settings.max_exact_train,
            )
        elif current_hyper is not None:
            hyper = current_hyper
        else:
            hyper = settings.hyper
        model = gp.fit(x_tr, y_tr, hyper, max_train=settings.max_exact_train)
        self._model = model
        self._model_train = train_tuple
        return model, hyper

    def _measure(
        self, t: int, pool: PoolState, model: gp.GpModel
    ) -> IterationRecord:
        test = np.array(pool.test, dtype=int)
        mae_test = mae_inrange = tpr_test = fpr_test = None
        tpr_held = fpr_held = None
        n_inrange_train: Optional[int] = None
        if len(test) > 0:
            y_test = self.labels[test]
            pred_test = gp.predict(model, self.descriptors.rows(test))
            mae_test = mae(pred_test.mean, y_test)
            if self.target is not None:
                tpr_test, fpr_test = classification_rates(
                    pred_test.mean, y_test, self.target
                )
                inmask = self.target.in_range(y_test)
                if np.any(inmask):
                    mae_inrange = mae(pred_test.mean[inmask], y_test[inmask])
        if self.target is not None:
            train = np.array(pool.train, dtype=int)
            n_inrange_train = inrange_count(self.labels[train], self.target)
            held = np.array(pool.heldout, dtype=int)
            if len(held) > 0 and not np.any(np.isnan(self.labels[held])):
                pred_held = gp.predict(model, self.descriptors.rows(held))
                tpr_held, fpr_held = classification_rates(
                    pred_held.mean, self.labels[held], self.target
                )
        return IterationRecord(
            strategy=self.cfg.strategy,
            seed=self.seed,
            t=t,
            train_size=len(pool.train),
            mae_test=mae_test,
            mae_test_inrange=mae_inrange,
            tpr_test=tpr_test,
            fpr_test=fpr_test,
            tpr_held=tpr_held,
            fpr_held=fpr_held,
            n_inrange_train=n_inrange_train,
        )

    # -- persistence -----------------------------------------------------

    def _save(self, state: RunState) -> None:
        if self.checkpoint_path is not None:
            save_checkpoint(self.checkpoint_path, state, self)

    def acquired_labels(self, state: RunState) -> dict[str, float]:
        """Labels known to the run but absent from the source dataset."""
        out: dict[str, float] = {}
        for i, mol in enumerate(self.dataset.molecules):
            if mol.label is None and not math.isnan(self.labels[i]):
                out[mol.id] = float(self.labels[i])
        return out

    def restore_labels(self, table: dict[str, float]) -> None:
        index = {mol.id: i for i, mol in enumerate(self.dataset.molecules)}
        unknown = sorted(set(table) - set(index))
        if unknown:
            raise CheckpointError(
                "checkpoint labels reference unknown ids: "
                + ", ".join(unknown[:10])
            )
        for mol_id, value in table.items():
            self.labels[index[mol_id]] = float(value)


def _record_to_json(rec: IterationRecord) -> dict:
    return {
        "strategy": rec.strategy,
        "seed": rec.seed,
        "t": rec.t,
        "train_size": rec.train_size,
        "mae_test": rec.mae_test,
        "mae_test_inrange": rec.mae_test_inrange,
        "tpr_test": rec.tpr_test,
        "fpr_test": rec.fpr_test,
        "tpr_held": rec.tpr_held,
        "fpr_held": rec.fpr_held,
        "n_inrange_train": rec.n_inrange_train,
    }


def _record_from_json(data: dict) -> IterationRecord:
    return IterationRecord(**data)


def rng_digest(state: RunState) -> str:
    """Digest of everything the run's seeded randomness has produced so far.

    All random draws are pure functions of (seed, purpose, t), so the
    acquisition sequence fully determines the generator state; hashing it
    makes checkpoint tampering or corruption detectable on load.
    """
    payload = json.dumps(
        {
            "seed": state.seed,
            "t_done": state.t_done,
            "test": list(state.pool.test),
            "train": list(state.pool.train),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path: str, state: RunState, runner: Runner) -> None:
    """Persist a run state (atomically) for later resumption."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config_digest": runner.digest,
        "rng_digest": rng_digest(state),
        "strategy": state.strategy,
        "seed": state.seed,
        "status": state.status,
        "t_done": state.t_done,
        "test": list(state.pool.test),
        "train": list(state.pool.train),
        "hyper": None
        if state.hyper is None
        else {
            "length_scale": state.hyper.length_scale,
            "signal_variance": state.hyper.signal_variance,
            "noise": state.hyper.noise,
        },
        "pending": None
        if state.pending is None
        else {"t": state.pending.t, "indices": list(state.pending.indices)},
        "labels": runner.acquired_labels(state),
        "history": [_record_to_json(rec) for rec in state.history],
    }
    atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str, runner: Runner) -> RunState:
    """Load a checkpoint into a runner, validating config compatibility."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"unsupported checkpoint format {payload.get('format')!r}"
        )
    if payload["config_digest"] != runner.digest:
        raise CheckpointError(
            f"checkpoint {path} belongs to configuration "
            f"{payload['config_digest']}, not {runner.digest}"
        )
    if payload["seed"] != runner.seed:
        raise CheckpointError(
            f"checkpoint {path} belongs to seed {payload['seed']}, "
            f"not {runner.seed}"
        )
    n = len(runner.dataset)
    test = tuple(int(i) for i in payload["test"])
    train = tuple(int(i) for i in payload["train"])
    used = set(test) | set(train)
    heldout = tuple(i for i in range(n) if i not in used)
    pool = PoolState(test=test, train=train, heldout=heldout)
    hyper = None
    if payload["hyper"] is not None:
        hyper = gp.GpHyperparams(**payload["hyper"])
    pending = None
    if payload["pending"] is not None:
        pending = PendingAcquisition(
            t=int(payload["pending"]["t"]),
            indices=tuple(int(i) for i in payload["pending"]["indices"]),
        )
    runner.restore_labels(payload["labels"])
    state = RunState(
        strategy=payload["strategy"],
        seed=payload["seed"],
        pool=pool,
        t_done=int(payload["t_done"]),
        history=tuple(_record_from_json(r) for r in payload["history"]),
        status=payload["status"],
        hyper=hyper,
        pending=pending,
    )
    expected = payload.get("rng_digest")
    if expected is not None and rng_digest(state) != expected:
        raise CheckpointError(
            f"checkpoint {path} fails its integrity digest "
            f"(expected {expected}); the file was edited or corrupted"
        )
    return state


# -- experiment preparation ----------------------------------------------


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    if d.source == "synthetic":
        assert d.synth is not None
        return synth_dataset(d.synth, d.synth_seed)
    if d.source == "xyz":
        dataset = load_xyz_dataset(d.xyz_path, name=d.name)
        if d.labels_path:
            dataset = attach_labels(dataset, read_label_table(d.labels_path))
        return dataset
    ids, matrix = read_feature_table(d.features_path)
    labels = read_label_table(d.labels_path)
    molecules = tuple(
        Molecule(
            id=mol_id,
            species=("H",),
            positions=np.zeros((1, 3)),
            label=labels.get(mol_id),
        )
        for mol_id in ids
    )
    return Dataset(
        name=d.name,
        molecules=molecules,
        features=matrix.values,
        feature_hash=matrix.config_hash,
    )


def resolve_target(
    cfg: ExperimentConfig, dataset: Dataset
) -> Optional[TargetSpec]:
    if cfg.target.epsilon is not None:
        return TargetSpec(epsilon=cfg.target.epsilon)
    if cfg.target.fraction is not None:
        if not dataset.is_fully_labeled:
            raise ConfigError(
                "target.fraction: needs a fully labeled pool to place the "
                "threshold; set target.epsilon instead"
            )
        return select_epsilon(dataset, cfg.target.fraction)
    return None


def build_descriptors(
    cfg: ExperimentConfig, dataset: Dataset
) -> DescriptorMatrix:
    if dataset.features is not None:
        return dataset_descriptors(dataset, None)
    from .descriptor import infer_vocabulary

    elements = cfg.descriptor.elements or infer_vocabulary(dataset)
    mbtr = MbtrConfig(
        elements=elements,
        grid_min=cfg.descriptor.grid_min,
        grid_max=cfg.descriptor.grid_max,
        grid_n=cfg.descriptor.grid_n,
        sigma=cfg.descriptor.sigma,
        weight_scale=cfg.descriptor.weight_scale,
    )
    return dataset_descriptors(dataset, mbtr, cache_path=cfg.descriptor.cache_path)


def _oracle_paths(
    cfg: ExperimentConfig, out_dir: str, seed: int
) -> tuple[str, str]:
    request = cfg.oracle.request_path
    response = cfg.oracle.response_path
    if len(cfg.seeds) > 1:
        if request is not None or response is not None:
            raise ConfigError(
                "oracle.request_path: explicit oracle paths need a single "
                "seed; with several seeds each run gets its own files"
            )
        return (
            os.path.join(out_dir, f"label_request_seed{seed}.xyz"),
            os.path.join(out_dir, f"label_response_seed{seed}.tsv"),
        )
    return (
        request or os.path.join(out_dir, "label_request.xyz"),
        response or os.path.join(out_dir, "label_response.tsv"),
    )


def make_oracle(cfg: ExperimentConfig, out_dir: str, seed: int):
    if cfg.oracle.mode == "precomputed":
        return PrecomputedOracle()
    request, response = _oracle_paths(cfg, out_dir, seed)
    return DeferredOracle(request_path=request, response_path=response)


@dataclass
class SeedOutcome:
    seed: int
    state: Optional[RunState]
    error: Optional[str] = None
    pending_message: Optional[str] = None


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    digest: str
    run_dir: str
    outcomes: list[SeedOutcome]
    records: list[IterationRecord]
    target: Optional[TargetSpec]
    total_inrange: Optional[int]
    seed_csv_paths: dict[int, str]
    aggregate_path: str

    @property
    def pending_seeds(self) -> list[int]:
        return [
            o.seed
            for o in self.outcomes
            if o.state is not None and o.state.status == "awaiting_labels"
        ]

    @property
    def failed(self) -> list[SeedOutcome]:
        return [o for o in self.outcomes if o.error is not None]


def _worker_count(n_seeds: int) -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(
            f"{THREADS_ENV_VAR}: expected an integer, got {raw!r}"
        ) from None
    if workers < 1:
        raise ConfigError(f"{THREADS_ENV_VAR}: must be at least 1")
    return min(workers, n_seeds)


def checkpoint_path(out_dir: str, seed: int) -> str:
    return os.path.join(out_dir, f"checkpoint_seed{seed}.json")


def run_one_seed(
    cfg: ExperimentConfig,
    dataset: Dataset,
    descriptors: DescriptorMatrix,
    target: Optional[TargetSpec],
    seed: int,
    out_dir: Optional[str] = None,
    resume: bool = False,
) -> RunState:
    """Run (or resume) a single seed, checkpointing when out_dir is set."""
    ckpt = checkpoint_path(out_dir, seed) if out_dir is not None else None
    oracle = make_oracle(cfg, out_dir or ".", seed)
    runner = Runner(
        cfg,
        dataset,
        descriptors,
        target,
        seed,
        oracle,
        checkpoint_path=ckpt,
    )
    state = None
    if resume and ckpt is not None and os.path.exists(ckpt):
        state = load_checkpoint(ckpt, runner)
        if state.status == "complete":
            return state
    return runner.run(state)


def experiment_run_dir(out_dir: str, cfg: ExperimentConfig) -> str:
    """Each configuration gets its own digest-named directory under out_dir."""
    return os.path.join(out_dir, config_digest(cfg))


def run_experiment(
    cfg: ExperimentConfig, out_dir: str, resume: bool = False
) -> ExperimentResult:
    """Run every configured seed and write per-seed plus aggregate tables.

    Outputs land in <out_dir>/<config digest>/: one seed<k>.csv per seed, an
    aggregate.csv of per-train-size means and standard deviations, the
    rendered configuration, and checkpoints. Seeds run independently
    (optionally in parallel, see AL_CURATOR_THREADS) and their outputs are
    aggregated in seed order, so results do not depend on scheduling. A seed
    suspended for labels contributes the records it has; a failed seed is
    reported and skipped.
    """
    digest = config_digest(cfg)
    run_dir = experiment_run_dir(out_dir, cfg)
    os.makedirs(run_dir, exist_ok=True)
    dataset = load_dataset(cfg)
    descriptors = build_descriptors(cfg, dataset)
    target = resolve_target(cfg, dataset)
    atomic_write_text(os.path.join(run_dir, "config.txt"), render_config(cfg))

    def one(seed: int) -> SeedOutcome:
        try:
            state = run_one_seed(
                cfg, dataset, descriptors, target, seed,
                out_dir=run_dir, resume=resume,
            )
            return SeedOutcome(seed=seed, state=state)
        except LabelsPendingError as exc:
            ckpt = checkpoint_path(run_dir, seed)
            oracle = make_oracle(cfg, run_dir, seed)
            runner = Runner(
                cfg, dataset, descriptors, target, seed, oracle,
                checkpoint_path=ckpt,
            )
            state = load_checkpoint(ckpt, runner)
            return SeedOutcome(seed=seed, state=state, pending_message=str(exc))
        except Exception as exc:  # noqa: BLE001 - reported per seed
            return SeedOutcome(seed=seed, state=None, error=f"{exc}")

    workers = _worker_count(len(cfg.seeds))
    if workers == 1:
        outcomes = [one(seed) for seed in cfg.seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, cfg.seeds))
    outcomes.sort(key=lambda o: o.seed)

    records: list[IterationRecord] = []
    seed_csv_paths: dict[int, str] = {}
    for outcome in outcomes:
        if outcome.state is None:
            continue
        records.extend(outcome.state.history)
        seed_path = os.path.join(run_dir, f"seed{outcome.seed}.csv")
        atomic_write_text(
            seed_path,
            format_history_csv(list(outcome.state.history), digest),
        )
        seed_csv_paths[outcome.seed] = seed_path
    total_inrange: Optional[int] = None
    if target is not None and dataset.is_fully_labeled:
        total_inrange = inrange_count(dataset.label_array(), target)
    aggregate_path = os.path.join(run_dir, "aggregate.csv")
    atomic_write_text(
        aggregate_path, format_aggregate_csv(records, digest, total_inrange)
    )
    return ExperimentResult(
        cfg=cfg,
        digest=digest,
        run_dir=run_dir,
        outcomes=outcomes,
        records=records,
        target=target,
        total_inrange=total_inrange,
        seed_csv_paths=seed_csv_paths,
        aggregate_path=aggregate_path,
    )


# -- noise calibration sweep ----------------------------------------------


@dataclass(frozen=True)
class NoiseGridResult:
    """Validation MAE per observation-noise level on one fixed train split."""

    rows: list  # list[report.NoiseGridRow] in evaluated (ascending) order
    argmin_noise: float
    argmin_mae: float
    train_size: int
    n_validation: int


def run_noise_grid(
    cfg: ExperimentConfig, levels: Optional[Sequence[float]] = None
) -> NoiseGridResult:
    """Pick the observation-noise level that minimizes validation MAE.

    One train/validation split is drawn (seeded by the first configured
    seed) and held fixed; a GP is fit on the training half once per noise
    level and scored by MAE on the validation half. Ties go to the smallest
    level. Hyperparameter tuning, when enabled, reruns per level with the
    noise pinned, since the noise term changes the likelihood surface.
    """
    from .report import NoiseGridRow

    if cfg.oracle.mode != "precomputed":
        raise ConfigError(
            "oracle.mode: the noise sweep needs precomputed labels"
        )
    grid = tuple(cfg.noise_levels if levels is None else levels)
    if len(grid) == 0:
        raise ConfigError("noise_grid.levels: needs at least one level")
    if any(level < 0 for level in grid):
        raise ConfigError("noise_grid.levels: levels must be non-negative")
    grid = tuple(sorted(set(float(level) for level in grid)))
    dataset = load_dataset(cfg)
    if not dataset.is_fully_labeled:
        raise ConfigError(
            "dataset.labels: the noise sweep needs every molecule labeled"
        )
    descriptors = build_descriptors(cfg, dataset)
    labels = dataset.label_array()
    seed = cfg.seeds[0]
    n = len(dataset)
    n_validation = cfg.n_test
    if n_validation is None:
        n_validation = default_n_test(n, cfg.dataset.source == "synthetic")
    n_train = cfg.noise_grid_n_train or cfg.schedule.n_init
    pool = make_pool(dataset, n_validation, n_train, seed)
    train = np.array(pool.train, dtype=int)
    validation = np.array(pool.test, dtype=int)
    x_tr = descriptors.rows(train)
    y_tr = labels[train]
    x_val = descriptors.rows(validation)
    y_val = labels[validation]
    settings = cfg.gp
    rows: list[NoiseGridRow] = []
    for k, level in enumerate(grid):
        hyper = dataclasses.replace(settings.hyper, noise=level)
        if settings.optimize:
            hyper = gp.optimize_hyperparams(
                x_tr,
                y_tr,
                init=hyper,
                restarts=settings.restarts,
                bounds_factor=settings.bounds_factor,
                seed=[seed, _STREAM_HYPEROPT, k],
                max_train=settings.max_exact_train,
            )
        model = gp.fit(x_tr, y_tr, hyper, max_train=settings.max_exact_train)
        pred = gp.predict(model, x_val)
        rows.append(
            NoiseGridRow(
                noise=level,
                train_size=len(train),
                n_validation=len(validation),
                mae_validation=mae(pred.mean, y_val),
            )
        )
    best = min(range(len(rows)), key=lambda i: (rows[i].mae_validation, i))
    return NoiseGridResult(
        rows=rows,
        argmin_noise=rows[best].noise,
        argmin_mae=rows[best].mae_validation,
        train_size=len(train),
        n_validation=len(validation),
    )
