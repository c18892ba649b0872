"""Desk-scale two-task harness: train an adapter on one task, watch the other.

Data is synthetic and linear: inputs for the two tasks live in orthogonal
(by default) input subspaces, the preserved task's targets come from the
pretrained map and the fine-tuning task's targets from a perturbed map.
Training is plain mini-batch gradient descent with hand-derived gradients
so they can be checked against finite differences. Preservation drift is
the mean squared change of the merged layer's outputs on preserved-task
inputs; sweeping the balance weight reproduces the preservation/utility
trade-off qualitatively.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import AdapterPair, init_sc_lora
from .covariance import ActivationCovariance, TaskCovariance
from .subspace import delta_cov, select_subspace
from .validation import as_matrix

__all__ = [
    "SweepConfig",
    "SweepRecord",
    "SweepReport",
    "TrainConfig",
    "TrainingDivergedError",
    "TwoTaskDataset",
    "beta_sweep",
    "eval_preservation",
    "gen_two_task_data",
    "initialization_covariances",
    "task_loss",
    "train_adapter",
]

# Sub-stream tags so dataset generation, initialization sampling and batch
# selection draw from distinct deterministic streams of the same seed.
_STREAM_DATA = 0
_STREAM_INIT = 1
_STREAM_TRAIN = 2


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending step index."""

    def __init__(self, step: int, loss: float):
        self.step = int(step)
        super().__init__(f"training diverged at step {step}: loss = {loss}")


@dataclass(frozen=True)
class TwoTaskDataset:
    """Row-major sample arrays for the fine-tuning (+) and preserved (-) tasks."""

    x_plus: np.ndarray
    y_plus: np.ndarray
    x_minus: np.ndarray
    y_minus: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    seed: int
    task_overlap: float

    @property
    def d_in(self) -> int:
        return self.x_plus.shape[1]

    @property
    def d_out(self) -> int:
        return self.y_plus.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    learning_rate: float
    batch_size: int
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def gen_two_task_data(
    d_in: int,
    d_out: int,
    r_plus: int,
    r_minus: int,
    n_plus: int,
    n_minus: int,
    seed: int,
    task_overlap: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, TwoTaskDataset]:
    """Build the pretrained map, the fine-tuning target map, and both sample sets.

    The pretrained weight has Gaussian rows normalized to unit length; the
    target weight adds a Gaussian perturbation scaled to half its Frobenius
    norm. Task input subspaces are drawn jointly orthonormal;
    ``task_overlap`` in [0, 1) rotates the preserved subspace toward the
    fine-tuning one (cosine of the shared principal angles) for stress
    tests. Fully deterministic per seed.
    """
    if r_plus < 1 or r_minus < 1 or r_plus + r_minus > d_in:
        raise ValueError(
            f"task ranks must be >= 1 with r_plus + r_minus <= d_in, "
            f"got r_plus={r_plus}, r_minus={r_minus}, d_in={d_in}"
        )
    if n_plus < 1 or n_minus < 1:
        raise ValueError(f"sample counts must be >= 1, got n_plus={n_plus}, n_minus={n_minus}")
    if not 0.0 <= task_overlap < 1.0:
        raise ValueError(f"task_overlap must be in [0, 1), got {task_overlap}")

    rng = np.random.default_rng([int(seed), _STREAM_DATA])

    w0 = rng.standard_normal((d_out, d_in))
    w0 /= np.linalg.norm(w0, axis=1, keepdims=True)

    shift = rng.standard_normal((d_out, d_in))
    shift *= 0.5 * np.linalg.norm(w0) / np.linalg.norm(shift)
    w_target = w0 + shift

    joint = np.linalg.qr(rng.standard_normal((d_in, r_plus + r_minus))).Q
    u_plus = joint[:, :r_plus].copy()
    u_minus = joint[:, r_plus:].copy()
    if task_overlap > 0.0:
        # Rotate each preserved direction toward its fine-tuning partner;
        # columns stay orthonormal because the two blocks are orthogonal.
        shared = min(r_plus, r_minus)
        cos_t = task_overlap
        sin_t = np.sqrt(1.0 - cos_t * cos_t)
        u_minus[:, :shared] = cos_t * u_plus[:, :shared] + sin_t * u_minus[:, :shared]

    x_plus = rng.standard_normal((n_plus, r_plus)) @ u_plus.T
    y_plus = x_plus @ w_target.T
    x_minus = rng.standard_normal((n_minus, r_minus)) @ u_minus.T
    y_minus = x_minus @ w0.T

    data = TwoTaskDataset(
        x_plus=x_plus,
        y_plus=y_plus,
        x_minus=x_minus,
        y_minus=y_minus,
        u_plus=u_plus,
        u_minus=u_minus,
        seed=int(seed),
        task_overlap=float(task_overlap),
    )
    return w0, w_target, data


def task_loss(pair: AdapterPair, x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared error of the adapted layer over row samples."""
    pred = x @ pair.w_res.T + (x @ pair.a.T) @ pair.b.T
    err = pred - y
    return float(np.sum(err * err) / x.shape[0])


def train_adapter(
    pair: AdapterPair, data: TwoTaskDataset, cfg: TrainConfig
) -> tuple[AdapterPair, np.ndarray]:
    """Mini-batch gradient descent on the fine-tuning task.

    Only the two low-rank factors move; the residual array is shared with
    the input pair untouched. Batches are index draws with replacement
    from a seed-derived stream. The returned trace holds the pre-update
    batch loss of every step.
    """
    x, y = data.x_plus, data.y_plus
    if x.shape[1] != pair.d_in or y.shape[1] != pair.d_out:
        raise ValueError(
            f"adapter ({pair.d_out} x {pair.d_in}) does not match task data "
            f"({y.shape[1]} x {x.shape[1]})"
        )
    rng = np.random.default_rng([int(cfg.seed), _STREAM_TRAIN])
    a = pair.a.copy()
    b = pair.b.copy()
    base = x @ pair.w_res.T
    n = x.shape[0]
    lr = cfg.learning_rate
    trace = np.empty(cfg.steps)

    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        xb = x[idx]
        ax = xb @ a.T
        err = base[idx] + ax @ b.T - y[idx]
        loss = float(np.sum(err * err) / cfg.batch_size)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        trace[step] = loss
        scale = 2.0 / cfg.batch_size
        grad_b = scale * (err.T @ ax)
        grad_a = scale * (b.T @ err.T) @ xb
        a -= lr * grad_a
        b -= lr * grad_b

    return pair.with_weights(a=a, b=b), trace


def eval_preservation(pair: AdapterPair, data: TwoTaskDataset, w0: np.ndarray) -> float:
    """Mean squared output drift on preserved-task inputs vs. the pretrained map."""
    w0 = as_matrix(w0, "w0")
    diff = data.x_minus @ (pair.merged() - w0).T
    return float(np.sum(diff * diff) / data.x_minus.shape[0])


def initialization_covariances(
    data: TwoTaskDataset, w0: np.ndarray, n_init: int, seed: int
) -> tuple[TaskCovariance, TaskCovariance]:
    """Per-task output covariances from fresh single-token samples.

    Draws *n_init* inputs per task from the dataset's generating subspaces
    (a stream disjoint from the training samples), pushes them through the
    pretrained map, and accumulates each output as a one-token sample.
    """
    if n_init < 1:
        raise ValueError(f"n_init must be >= 1, got {n_init}")
    rng = np.random.default_rng([int(seed), _STREAM_INIT])
    acc = {}
    for key, basis in (("plus", data.u_plus), ("minus", data.u_minus)):
        inputs = rng.standard_normal((n_init, basis.shape[1])) @ basis.T
        outputs = inputs @ w0.T
        acc[key] = ActivationCovariance()
        for row in outputs:
            acc[key].partial_fit(row[:, None])
    return acc["plus"].finalize(), acc["minus"].finalize()


@dataclass(frozen=True)
class SweepConfig:
    """Geometry, data and optimization settings for one balance-weight sweep."""

    d_in: int = 48
    d_out: int = 32
    rank: int = 8
    r_plus: int = 8
    r_minus: int = 8
    n_plus: int = 256
    n_minus: int = 256
    init_samples: int = 256
    betas: tuple = (0.0, 0.25, 0.5, 0.75, 0.9)
    seeds: tuple = tuple(range(10))
    steps: int = 500
    learning_rate: float = 1e-2
    batch_size: int = 32
    task_overlap: float = 0.0

    def __post_init__(self):
        if len(self.betas) == 0 or len(self.seeds) == 0:
            raise ValueError("betas and seeds must be non-empty")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class SweepRecord:
    beta: float
    seed: int
    final_plus_loss: float
    preservation_drift: float
    loss_trace: np.ndarray


@dataclass(frozen=True)
class SweepReport:
    config: SweepConfig
    records: tuple

    def summary(self) -> list[tuple[float, float, float]]:
        """Seed-averaged (beta, final_plus_loss, preservation_drift) series."""
        out = []
        for beta in self.config.betas:
            rows = [r for r in self.records if r.beta == beta]
            out.append(
                (
                    beta,
                    float(np.mean([r.final_plus_loss for r in rows])),
                    float(np.mean([r.preservation_drift for r in rows])),
                )
            )
        return out

    def write(self, out_dir) -> None:
        """Emit report.csv, summary.csv and one trace CSV per sweep cell."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta", "seed", "final_plus_loss", "preservation_drift"])
            for r in self.records:
                writer.writerow([_fmt(r.beta), r.seed, _fmt(r.final_plus_loss), _fmt(r.preservation_drift)])
        with open(out / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta", "final_plus_loss", "preservation_drift"])
            for beta, loss, drift in self.summary():
                writer.writerow([_fmt(beta), _fmt(loss), _fmt(drift)])
        for r in self.records:
            with open(out / f"trace_{_fmt(r.beta)}_{r.seed}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["step", "loss"])
                for step, loss in enumerate(r.loss_trace):
                    writer.writerow([step, _fmt(loss)])


def _fmt(value: float) -> str:
    # repr of a Python float is the shortest exact round-trip form.
    return repr(float(value))


def _run_cell(args: tuple[SweepConfig, float, int]) -> SweepRecord:
    cfg, beta, seed = args
    w0, _, data = gen_two_task_data(
        cfg.d_in,
        cfg.d_out,
        cfg.r_plus,
        cfg.r_minus,
        cfg.n_plus,
        cfg.n_minus,
        seed,
        task_overlap=cfg.task_overlap,
    )
    cov_pos, cov_neg = initialization_covariances(data, w0, cfg.init_samples, seed)
    basis = select_subspace(delta_cov(cov_pos, cov_neg, beta), cfg.rank)
    pair = init_sc_lora(w0, basis)
    trained, trace = train_adapter(
        pair, data, TrainConfig(cfg.steps, cfg.learning_rate, cfg.batch_size, seed=seed)
    )
    return SweepRecord(
        beta=float(beta),
        seed=int(seed),
        final_plus_loss=task_loss(trained, data.x_plus, data.y_plus),
        preservation_drift=eval_preservation(trained, data, w0),
        loss_trace=trace,
    )


def beta_sweep(config: SweepConfig, n_jobs: int = 1) -> SweepReport:
    """Run every (beta, seed) cell and assemble the report.

    Cells are independent; with ``n_jobs > 1`` they run in worker
    processes, and the record order (betas outer, seeds inner) is fixed
    either way, so the report is identical regardless of parallelism.
    """
    cells = [(config, beta, seed) for beta in config.betas for seed in config.seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = tuple(pool.map(_run_cell, cells))
    else:
        records = tuple(_run_cell(c) for c in cells)
    return SweepReport(config=config, records=records)
