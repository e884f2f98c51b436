"""Time integration of the gradient flows, the proximal scheme, and rate fits.

Four flows are supported: plain gradient descent on the student weights and
the induced Gram-matrix flow ``dA/dt = -A grad - grad A``, each against the
empirical or the population loss.  The weight recursion with learning rate
eta IS the Euler discretization of the flow (the factor m in
``dw/dt = -m dL/dw`` is absorbed into the stated update), so discrete GD and
the integrated flow can be compared at matched times ``t = step * eta``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .losses import (
    empirical_gram_grad,
    population_grad,
    population_loss,
    quad_forms,
)
from .model import Dataset, WeightMatrix, gram

DIVERGENCE_THRESHOLD = 1e12
PSD_FLAG_TOL = 1e-6


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size, budget and recording policy for one integration."""

    step: float
    max_steps: int
    record_every: int = 1
    stop_threshold: float | None = None
    stop_on: str = "gen"  # which recorded loss the threshold watches
    method: str = "euler"
    snapshot_every: int | None = None

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        if self.stop_on not in ("gen", "train"):
            raise ValueError(f"stop_on must be 'gen' or 'train', got {self.stop_on!r}")
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"method must be 'euler' or 'rk4', got {self.method!r}")
        if self.stop_threshold is not None and self.stop_threshold < 0:
            raise ValueError("stop_threshold must be nonnegative")


@dataclass
class Trajectory:
    """Recorded losses along one flow; train_loss is None for population flows."""

    times: np.ndarray
    steps: np.ndarray
    train_loss: np.ndarray | None
    gen_loss: np.ndarray
    terminal: object
    snapshots: list[tuple[float, np.ndarray]] | None = None
    diverged: bool = False
    psd_violated: bool = False
    stopped_early: bool = False
    steps_used: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "train_loss", "gen_loss"])
            for i in range(len(self.times)):
                train = "" if self.train_loss is None else repr(self.train_loss[i])
                w.writerow([int(self.steps[i]), repr(self.times[i]), train, repr(self.gen_loss[i])])


class _Recorder:
    def __init__(self, cfg: IntegratorConfig, with_train: bool):
        self.cfg = cfg
        self.with_train = with_train
        self.steps: list[int] = []
        self.train: list[float] = []
        self.gen: list[float] = []
        self.snapshots: list[tuple[float, np.ndarray]] | None = (
            [] if cfg.snapshot_every is not None else None
        )
        self.diverged = False
        self.stopped = False

    def due(self, step: int) -> bool:
        return step % self.cfg.record_every == 0 or step == self.cfg.max_steps

    def snapshot_due(self, step: int) -> bool:
        every = self.cfg.snapshot_every
        return every is not None and (step % every == 0 or step == self.cfg.max_steps)

    def record(self, step: int, train: float | None, gen: float) -> bool:
        """Append one record; returns False when integration must stop."""
        watched = gen if self.cfg.stop_on == "gen" or train is None else train
        for val in (train, gen):
            if val is not None and (not np.isfinite(val) or val > DIVERGENCE_THRESHOLD):
                self.diverged = True
                return False
        self.steps.append(step)
        if self.with_train:
            self.train.append(train)
        self.gen.append(gen)
        if self.cfg.stop_threshold is not None and watched <= self.cfg.stop_threshold:
            self.stopped = True
            return False
        return True

    def finish(self, terminal, steps_used: int, psd_violated: bool = False) -> Trajectory:
        steps = np.asarray(self.steps, dtype=int)
        return Trajectory(
            times=steps * self.cfg.step,
            steps=steps,
            train_loss=np.asarray(self.train) if self.with_train else None,
            gen_loss=np.asarray(self.gen),
            terminal=terminal,
            snapshots=self.snapshots,
            diverged=self.diverged,
            psd_violated=psd_violated,
            stopped_early=self.stopped,
            steps_used=steps_used,
        )


def gd_weights(
    W0: WeightMatrix,
    A_star: np.ndarray,
    data: Dataset | None,
    cfg: IntegratorConfig,
) -> Trajectory:
    """Gradient descent on the student weights (empirical iff data given).

    Empirical update: w_i += eta * mean_k[(x_k^T (A*-A) x_k) (x_k . w_i) x_k];
    population update: w_i += eta * (tr(A*-A) w_i + 2 (A*-A) w_i).
    """
    if cfg.method != "euler":
        raise ValueError("weight-space descent is the discrete GD recursion; only method='euler' is defined")
    A_star = np.asarray(A_star, dtype=float)
    if A_star.shape != (W0.d, W0.d):
        raise ValueError(f"A_star has shape {A_star.shape}, expected ({W0.d}, {W0.d})")
    empirical = data is not None
    if empirical and data.d != W0.d:
        raise ValueError(f"dataset dimension {data.d} does not match student dimension {W0.d}")

    W = W0.weights.copy()
    scale = W0.scale
    eta = cfg.step
    rec = _Recorder(cfg, with_train=empirical)

    if empirical:
        X = data.inputs
        n = data.n
        q_star = quad_forms(X, A_star)

    def losses() -> tuple[float | None, float]:
        A = scale * (W.T @ W)
        gen = population_loss(A, A_star)
        if not empirical:
            return None, gen
        r = q_star - scale * np.sum(P * P, axis=1)
        return float(np.sum(r * r)) / (2.0 * n), gen

    step = 0
    if empirical:
        P = X @ W.T
    if not rec.record(0, *losses()):
        return rec.finish(WeightMatrix(W, scale), 0)
    if rec.snapshot_due(0):
        rec.snapshots.append((0.0, scale * (W.T @ W)))

    for step in range(1, cfg.max_steps + 1):
        if empirical:
            P = X @ W.T
            r = q_star - scale * np.sum(P * P, axis=1)
            W += (eta / n) * ((r[:, None] * P).T @ X)
        else:
            D = A_star - scale * (W.T @ W)
            W += eta * (np.trace(D) * W + 2.0 * (W @ D))
        if rec.due(step):
            if empirical:
                P = X @ W.T
            if not rec.record(step, *losses()):
                break
            if rec.snapshot_due(step):
                rec.snapshots.append((step * eta, scale * (W.T @ W)))

    return rec.finish(WeightMatrix(W, scale), step)


def _check_gram_input(A0: np.ndarray) -> np.ndarray:
    A0 = np.asarray(A0, dtype=float)
    if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
        raise ValueError(f"A0 must be square, got shape {A0.shape}")
    scale = max(np.abs(A0).max(), 1.0)
    if np.abs(A0 - A0.T).max() > 1e-10 * scale:
        raise ValueError("A0 must be symmetric")
    eigs = np.linalg.eigvalsh(A0)
    if eigs[0] < -1e-8 * max(eigs[-1], 1.0):
        raise ValueError(f"A0 must be positive semidefinite (min eigenvalue {eigs[0]:.3e})")
    return 0.5 * (A0 + A0.T)


def flow_gram(
    A0: np.ndarray,
    A_star: np.ndarray,
    data: Dataset | None,
    cfg: IntegratorConfig,
) -> Trajectory:
    """Integrate dA/dt = -A grad(A) - grad(A) A in Gram space.

    grad is the empirical-loss gradient when data is given, else the
    population one.  A is re-symmetrized after every step; loss of positive
    semidefiniteness beyond -1e-6 (relative) only raises a flag.
    """
    A = _check_gram_input(A0)
    A_star = np.asarray(A_star, dtype=float)
    if A_star.shape != A.shape:
        raise ValueError(f"A_star has shape {A_star.shape}, expected {A.shape}")
    empirical = data is not None
    if empirical and data.d != A.shape[0]:
        raise ValueError(f"dataset dimension {data.d} does not match Gram dimension {A.shape[0]}")

    if empirical:
        grad: Callable[[np.ndarray], np.ndarray] = lambda M: empirical_gram_grad(M, A_star, data)
        train_of: Callable[[np.ndarray], float | None] = lambda M: float(
            np.sum(quad_forms(data.inputs, M - A_star) ** 2)
        ) / (2.0 * data.n)
    else:
        grad = lambda M: population_grad(M, A_star)
        train_of = lambda M: None

    def rhs(M: np.ndarray) -> np.ndarray:
        G = grad(M)
        return -(M @ G + G @ M)

    dt = cfg.step
    rec = _Recorder(cfg, with_train=empirical)
    psd_violated = False

    def psd_check(M: np.ndarray) -> bool:
        eigs = np.linalg.eigvalsh(M)
        return eigs[0] < -PSD_FLAG_TOL * max(abs(eigs[-1]), 1.0)

    step = 0
    rec.record(0, train_of(A), population_loss(A, A_star))
    if rec.snapshot_due(0):
        rec.snapshots.append((0.0, A.copy()))
    if rec.diverged or rec.stopped:
        return rec.finish(A, 0, psd_violated)

    for step in range(1, cfg.max_steps + 1):
        if cfg.method == "euler":
            A = A + dt * rhs(A)
        else:
            k1 = rhs(A)
            k2 = rhs(A + 0.5 * dt * k1)
            k3 = rhs(A + 0.5 * dt * k2)
            k4 = rhs(A + dt * k3)
            A = A + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        A = 0.5 * (A + A.T)
        if rec.due(step):
            if not rec.record(step, train_of(A), population_loss(A, A_star)):
                break
            if psd_check(A):
                psd_violated = True
            if rec.snapshot_due(step):
                rec.snapshots.append((step * dt, A.copy()))

    return rec.finish(A, step, psd_violated)


def proximal_flow(
    B0: np.ndarray,
    A_star: np.ndarray,
    data: Dataset,
    tau: float,
    steps: int,
    record_every: int = 1,
    snapshot_every: int | None = None,
) -> Trajectory:
    """Proximal factor iteration B_p = B_{p-1} - tau grad(B B^T) B.

    The iterate is the first-order solution of the proximal subproblem for
    the factorized Gram matrix; A_p = B_p B_p^T tracks the Gram flow as
    tau -> 0 with p tau -> t.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    B = np.asarray(B0, dtype=float).copy()
    A_star = np.asarray(A_star, dtype=float)
    if B.shape != A_star.shape:
        raise ValueError(f"B0 has shape {B.shape}, expected {A_star.shape}")
    cfg = IntegratorConfig(
        step=tau, max_steps=steps, record_every=record_every, snapshot_every=snapshot_every
    )
    rec = _Recorder(cfg, with_train=True)

    def losses(A: np.ndarray) -> tuple[float, float]:
        r = quad_forms(data.inputs, A - A_star)
        return float(np.sum(r * r)) / (2.0 * data.n), population_loss(A, A_star)

    A = B @ B.T
    step = 0
    rec.record(0, *losses(A))
    if rec.snapshot_due(0):
        rec.snapshots.append((0.0, A.copy()))
    if rec.diverged or rec.stopped:
        return rec.finish(B, 0)

    for step in range(1, steps + 1):
        G = empirical_gram_grad(B @ B.T, A_star, data)
        B = B - tau * (G @ B)
        if rec.due(step):
            A = B @ B.T
            if not rec.record(step, *losses(A)):
                break
            if rec.snapshot_due(step):
                rec.snapshots.append((step * tau, A.copy()))

    return rec.finish(B, step)


@dataclass(frozen=True)
class RateReport:
    """Tail classification of a loss trajectory."""

    decay_class: str  # "quadratic" | "exponential" | "undetermined"
    plateau: float | None = None  # limit of t^2 * loss for the quadratic class
    rate: float | None = None  # decay rate for the exponential class
    bound_ok: bool = False
    r2: float | None = None  # goodness of the winning tail fit
    c_bound: float | None = None  # best constant in loss <= L0 / (1 + 2 C L0 t)


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2 of y on x."""
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(icpt), r2


def _times_losses(traj) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(traj, "times"):
        times = np.asarray(traj.times, dtype=float)
        if hasattr(traj, "gen_loss") and traj.gen_loss is not None:
            return times, np.asarray(traj.gen_loss, dtype=float)
        if hasattr(traj, "loss"):
            return times, np.asarray(traj.loss, dtype=float)
    times, losses = traj
    return np.asarray(times, dtype=float), np.asarray(losses, dtype=float)


def rate_diagnostics(traj, tail_fraction: float = 1.0 / 3.0) -> RateReport:
    """Classify the tail decay of a loss trajectory as quadratic or exponential.

    Fits log-loss against log-t (power law, slope near -2 expected) and
    against t (exponential) over the final tail_fraction of the recorded
    points; the better, sufficiently clean fit wins.  bound_ok additionally
    checks that loss(t) <= loss(0) / (1 + 2 C loss(0) t) holds for the best
    constant C > 0 and that t * loss is decreasing across the tail.
    """
    times, losses = _times_losses(traj)
    n = len(times)
    tail_start = int(np.floor(n * (1.0 - tail_fraction)))
    tt, ll = times[tail_start:], losses[tail_start:]
    keep = (tt > 0) & (ll > 0)
    tt, ll = tt[keep], ll[keep]
    if len(tt) < 10:
        return RateReport(decay_class="undetermined")

    slope_pow, _, r2_pow = _linfit(np.log(tt), np.log(ll))
    slope_exp, _, r2_exp = _linfit(tt, np.log(ll))

    bound_ok, c_bound = _theorem_bound(times, losses, tt, ll)

    if r2_exp >= r2_pow and r2_exp >= 0.99:
        return RateReport(
            decay_class="exponential", rate=-slope_exp, bound_ok=bound_ok, r2=r2_exp, c_bound=c_bound
        )
    if r2_pow >= 0.99 and abs(slope_pow + 2.0) <= 0.25:
        plateau = float(np.mean(tt * tt * ll))
        return RateReport(
            decay_class="quadratic", plateau=plateau, bound_ok=bound_ok, r2=r2_pow, c_bound=c_bound
        )
    return RateReport(decay_class="undetermined", bound_ok=bound_ok, c_bound=c_bound)


def _theorem_bound(times, losses, tail_t, tail_l) -> tuple[bool, float | None]:
    l0 = losses[0]
    if l0 <= 0:
        return bool(np.all(losses <= 0) or np.all(losses <= l0)), None
    pos = (times > 0) & (losses > 0)
    if not np.any(pos):
        return True, None
    c_candidates = (l0 / losses[pos] - 1.0) / (2.0 * l0 * times[pos])
    c_bound = float(np.min(c_candidates))
    tl = tail_t * tail_l
    decreasing = bool(np.all(np.diff(tl) <= 1e-12 * np.abs(tl[:-1]).max()))
    return (c_bound > 0) and decreasing, c_bound
