"""WGAN with quadratic transport cost: critic regresses batch OT duals.

Per critic step a real batch ``x`` and a generated batch ``y`` are matched
by exact optimal transport under ``|x - y|^2 / (2 d)``. With Kantorovich
potentials ``(phi, psi)`` the critic minimises::

    mean D(y) - mean D(x) + gamma * (mean (D(x) - phi)^2 + mean (D(y) + psi)^2)

and the generator minimises ``-mean D(G(z))``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from vpgan.autodiff import Tensor
from vpgan.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from vpgan.nn import ArchitectureSpec, NetworkParams, forward, predict
from vpgan.optim import Adam
from vpgan.ot import quadratic_cost, solve_ot
from vpgan.utility import mmd

log = logging.getLogger(__name__)

DIAG_FIELDS = ("iteration", "ot_estimate", "critic_regression_loss", "generator_loss", "sample_mmd")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, iteration=None, dump_path=None):
        super().__init__(message)
        self.iteration = iteration
        self.dump_path = dump_path


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    total_iterations: int
    noise_dim: int = 16
    gamma: float = 1.0
    batch_size: int = 64
    critic_steps: int = 1
    lr: float = 1e-4
    betas: tuple = (0.5, 0.999)
    eps: float = 1e-8
    architecture: str = "resnet"
    target_params: int = 150_000
    generator_spec: ArchitectureSpec | None = None
    critic_spec: ArchitectureSpec | None = None
    checkpoint_every: int = 0
    milestones: tuple = (5000, 35000, 135000)
    log_every: int = 100
    mmd_every: int = 1000
    mmd_samples: int = 256

    REQUIRED = ("seed", "total_iterations")

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")
        if self.noise_dim <= 0 or self.batch_size <= 0 or self.critic_steps <= 0:
            raise ValueError("noise_dim, batch_size and critic_steps must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.architecture not in ("resnet", "mlp"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.log_every <= 0:
            raise ValueError("log_every must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        missing = [k for k in cls.REQUIRED if k not in d]
        if missing:
            raise KeyError(missing[0])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config field(s): {sorted(unknown)}")
        d = dict(d)
        for key in ("generator_spec", "critic_spec"):
            if d.get(key) is not None:
                d[key] = ArchitectureSpec.from_dict(d[key])
        for key in ("betas", "milestones"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["milestones"] = list(self.milestones)
        return d

    def resolve(self, data_dim: int) -> "TrainConfig":
        """Fill in generator/critic specs sized to ``target_params``."""
        sized = ArchitectureSpec.sized_resnet if self.architecture == "resnet" else ArchitectureSpec.sized_mlp
        g = self.generator_spec or sized(self.noise_dim, data_dim, self.target_params)
        c = self.critic_spec or sized(data_dim, 1, self.target_params)
        if g.input_dim != self.noise_dim or g.output_dim != data_dim:
            raise ValueError("generator spec does not map noise_dim -> data dim")
        if c.input_dim != data_dim or c.output_dim != 1:
            raise ValueError("critic spec must map data dim -> 1")
        return replace(self, generator_spec=g, critic_spec=c)


def sample_noise(n: int, noise_dim: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0 or noise_dim <= 0:
        raise ValueError("n and noise_dim must be positive")
    return rng.standard_normal((n, noise_dim))


def centered_duals(plan):
    """Shift (phi, psi) -> (phi + a, psi - a) so the regression targets average zero."""
    a = 0.5 * (plan.psi.mean() - plan.phi.mean())
    return plan.phi + a, plan.psi - a


def critic_loss(critic: NetworkParams, real, fake, phi, psi, gamma: float):
    """Build the critic objective on the tape; returns (loss, regression term)."""
    dx = forward(critic, real)
    dy = forward(critic, fake)
    phi = np.asarray(phi, dtype=np.float64).reshape(-1, 1)
    psi = np.asarray(psi, dtype=np.float64).reshape(-1, 1)
    regression = ((dx - phi) ** 2).mean() + ((dy + psi) ** 2).mean()
    loss = dy.mean() - dx.mean()
    if gamma:
        loss = loss + gamma * regression
    return loss, regression


def critic_step(real, fake, critic: NetworkParams, optimizer: Adam, gamma: float) -> dict:
    """One optimizer step of the critic against the current batch OT duals."""
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ValueError(f"real and fake batches differ in shape: {real.shape} vs {fake.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        cost = quadratic_cost(real, fake)
    if not np.all(np.isfinite(cost)):
        raise TrainingDivergedError("non-finite transport cost between real and generated batch")
    plan = solve_ot(cost)
    phi, psi = centered_duals(plan)
    critic.zero_grad()
    loss, regression = critic_loss(critic, real, fake, phi, psi, gamma)
    value = float(loss.data)
    if not math.isfinite(value):
        raise TrainingDivergedError(f"critic loss is {value}")
    loss.backward()
    optimizer.step()
    return {
        "ot_estimate": plan.total_cost,
        "critic_loss": value,
        "critic_regression_loss": float(regression.data),
    }


def generator_step(noise, generator: NetworkParams, critic: NetworkParams, optimizer: Adam) -> dict:
    """One optimizer step of the generator on ``-mean D(G(z))``; the critic is frozen."""
    generator.zero_grad()
    critic.set_trainable(False)
    try:
        out = forward(critic, forward(generator, np.asarray(noise, dtype=np.float64)))
        loss = -out.mean()
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDivergedError(f"generator loss is {value}")
        loss.backward()
    finally:
        critic.set_trainable(True)
    optimizer.step()
    return {"generator_loss": value}


class GANState:
    """Both networks, their optimizers, the RNG and the iteration counter."""

    def __init__(self, config: TrainConfig, data_dim: int):
        self.config = config.resolve(data_dim)
        self.data_dim = data_dim
        init_rng = np.random.default_rng([config.seed, 0])
        self.generator = NetworkParams.initialize(self.config.generator_spec, init_rng)
        self.critic = NetworkParams.initialize(self.config.critic_spec, init_rng)
        c = self.config
        self.g_opt = Adam(self.generator, c.lr, c.betas, c.eps)
        self.c_opt = Adam(self.critic, c.lr, c.betas, c.eps)
        self.rng = np.random.default_rng([config.seed, 1])
        self.iteration = 0

    def step(self, data: np.ndarray) -> dict:
        c = self.config
        diag = {}
        for _ in range(c.critic_steps):
            real = data[self.rng.integers(0, len(data), size=c.batch_size)]
            fake = predict(self.generator, sample_noise(c.batch_size, c.noise_dim, self.rng))
            diag.update(critic_step(real, fake, self.critic, self.c_opt, c.gamma))
        z = sample_noise(c.batch_size, c.noise_dim, self.rng)
        diag.update(generator_step(z, self.generator, self.critic, self.g_opt))
        self.iteration += 1
        return diag

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return predict(self.generator, sample_noise(n, self.config.noise_dim, rng))

    def to_checkpoint(self) -> Checkpoint:
        arrays = {}
        arrays.update(self.g_opt.state_arrays("adam.generator"))
        arrays.update(self.c_opt.state_arrays("adam.critic"))
        meta = {
            "iteration": self.iteration,
            "config": self.config.to_dict(),
            "data_dim": self.data_dim,
            "rng_state": self.rng.bit_generator.state,
            "adam_steps": {"generator": self.g_opt.t, "critic": self.c_opt.t},
        }
        return Checkpoint(networks={"generator": self.generator, "critic": self.critic}, arrays=arrays, meta=meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "GANState":
        config = TrainConfig.from_dict(ckpt.meta["config"])
        state = cls(config, ckpt.meta["data_dim"])
        state.generator.load_flat(ckpt.networks["generator"].flat())
        state.critic.load_flat(ckpt.networks["critic"].flat())
        steps = ckpt.meta["adam_steps"]
        state.g_opt.load_state_arrays("adam.generator", ckpt.arrays, steps["generator"])
        state.c_opt.load_state_arrays("adam.critic", ckpt.arrays, steps["critic"])
        state.rng.bit_generator.state = ckpt.meta["rng_state"]
        state.iteration = int(ckpt.meta["iteration"])
        return state


@dataclass
class TrainResult:
    state: GANState
    diagnostics: list[dict]
    checkpoints: dict[int, Path] = field(default_factory=dict)
    snapshots: dict[int, NetworkParams] = field(default_factory=dict)

    @property
    def generator(self) -> NetworkParams:
        return self.state.generator

    @property
    def critic(self) -> NetworkParams:
        return self.state.critic


def checkpoint_iterations(config: TrainConfig) -> list[int]:
    """Iterations at which a checkpoint is written (always 0 and the last one)."""
    T = config.total_iterations
    its = {0, T}
    its.update(m for m in config.milestones if 0 < m <= T)
    if config.checkpoint_every:
        its.update(range(config.checkpoint_every, T + 1, config.checkpoint_every))
    return sorted(its)


def checkpoint_path(out_dir, iteration: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"step_{iteration:07d}.ckpt"


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_log(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAG_FIELDS)
        for r in rows:
            w.writerow([_format(r.get(k)) for k in DIAG_FIELDS])


def _append_log(path: Path, row: dict):
    with open(path, "a", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow([_format(row.get(k)) for k in DIAG_FIELDS])


def read_diagnostics(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(
                {
                    "iteration": int(r["iteration"]),
                    **{k: (float(r[k]) if r[k] != "" else None) for k in DIAG_FIELDS[1:]},
                }
            )
    return rows


def latest_checkpoint(out_dir) -> Path | None:
    found = sorted((Path(out_dir) / "checkpoints").glob("step_*.ckpt"))
    return found[-1] if found else None


def train(data, config: TrainConfig, out_dir=None, held_out=None, resume: bool = False, callback=None) -> TrainResult:
    """Train generator and critic on the rows of ``data``.

    Checkpoints land in ``out_dir/checkpoints`` and the diagnostics CSV in
    ``out_dir/logs/diagnostics.csv`` when ``out_dir`` is given. With
    ``resume=True`` training continues from the newest checkpoint there.
    ``held_out`` (rows of real data) enables the periodic sample MMD.
    ``callback(iteration, diag)`` is called after every iteration.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("training data must be a non-empty (n, dim) array")
    if not np.all(np.isfinite(data)):
        raise ValueError("training data contains non-finite values")
    if held_out is not None:
        held_out = np.asarray(held_out, dtype=np.float64)
        if held_out.shape[1] != data.shape[1]:
            raise ValueError("held-out data has a different dimension")
    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = out_dir / "logs" / "diagnostics.csv" if out_dir else None

    diagnostics: list[dict] = []
    state = None
    if resume:
        if out_dir is None:
            raise ValueError("resume needs an output directory")
        last = latest_checkpoint(out_dir)
        if last is not None:
            state = GANState.from_checkpoint(load_checkpoint(last))
            if state.config.to_dict() != config.resolve(data.shape[1]).to_dict():
                raise ValueError(f"config differs from the one stored in {last}")
            if log_path.exists():
                diagnostics = [r for r in read_diagnostics(log_path) if r["iteration"] <= state.iteration]
            log.info("resuming from %s at iteration %d", last, state.iteration)
    if state is None:
        state = GANState(config, data.shape[1])
    cfg = state.config
    if log_path is not None:
        _write_log(log_path, diagnostics)

    result = TrainResult(state=state, diagnostics=diagnostics)
    ckpt_its = set(checkpoint_iterations(cfg))

    def save(it):
        result.snapshots[it] = state.generator.copy()
        if out_dir is not None:
            path = checkpoint_path(out_dir, it)
            save_checkpoint(path, state.to_checkpoint())
            result.checkpoints[it] = path

    if state.iteration == 0:
        save(0)
    mmd_ref = None
    if held_out is not None:
        ref_rng = np.random.default_rng([cfg.seed, 2])
        take = min(cfg.mmd_samples, len(held_out))
        mmd_ref = held_out[ref_rng.choice(len(held_out), size=take, replace=False)]

    while state.iteration < cfg.total_iterations:
        try:
            diag = state.step(data)
        except (FloatingPointError, TrainingDivergedError) as exc:
            dump = None
            if out_dir is not None:
                dump = Path(out_dir) / "checkpoints" / f"diverged_{state.iteration:07d}.ckpt"
                save_checkpoint(dump, state.to_checkpoint())
            raise TrainingDivergedError(f"training diverged at iteration {state.iteration}: {exc}", state.iteration, dump) from exc
        it = state.iteration
        if it % cfg.log_every == 0 or it == cfg.total_iterations:
            row = {
                "iteration": it,
                "ot_estimate": diag["ot_estimate"],
                "critic_regression_loss": diag["critic_regression_loss"],
                "generator_loss": diag["generator_loss"],
                "sample_mmd": None,
            }
            if mmd_ref is not None and cfg.mmd_every and it % cfg.mmd_every == 0:
                fake = state.generate(len(mmd_ref), np.random.default_rng([cfg.seed, 3, it]))
                row["sample_mmd"] = mmd(fake, mmd_ref)
            diagnostics.append(row)
            if log_path is not None:
                _append_log(log_path, row)
        if it in ckpt_its:
            save(it)
        if callback is not None:
            callback(it, diag)
    return result
