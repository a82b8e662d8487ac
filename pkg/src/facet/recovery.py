"""Zeroth-order recovery: greedy best-of-batch ascent in coefficient space,
with a multi-start probe policy.

One iteration: draw a batch of normal coefficient perturbations, form the
candidate images clip(E @ (coeffs + z_j)), score the whole batch in a single
oracle call, and take the argmax.  In "always" mode the winning perturbation
is added unconditionally; in "monotone" mode (the default) it is added only
when its score strictly beats the best seen, so the best-score sequence never
regresses.

State lives in coefficient space, never pixels: accumulating z keeps the
unclipped iterate exactly inside span(E), and clipping touches only the
images submitted to the oracle.

Multi-start runs several short probes from zero with distinct derived seeds,
keeps the one whose best score is highest, and resumes it for the remaining
budget with the same coefficient vector and the same generator state.  A
single-probe run is therefore bit-identical to calling recover_single
directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .basis import EigenBasis, synthesize
from .errors import BudgetExhaustedError, ConfigError, GeometryError
from .image import clip, reshape

ACCEPT_MODES = ("monotone", "always")


@dataclass
class RecoveryConfig:
    """Optimizer settings; defaults follow the multi-start recipe of the
    method (10 probes of 100 iterations) at a 50k query budget."""

    batch_size: int = 16
    query_budget: int = 50_000
    sigma: float = 1.0
    restarts: int = 10
    restart_iters: int = 100
    accept_mode: str = "monotone"
    seed: int = 0

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.query_budget < 1:
            raise ConfigError(f"query_budget must be positive, got {self.query_budget}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.restarts < 0:
            raise ConfigError(f"restarts must be >= 0, got {self.restarts}")
        if self.restart_iters < 1:
            raise ConfigError(f"restart_iters must be positive, got {self.restart_iters}")
        if self.accept_mode not in ACCEPT_MODES:
            raise ConfigError(
                f"accept_mode must be one of {ACCEPT_MODES}, got {self.accept_mode!r}"
            )
        probe_cost = self.restarts * self.restart_iters * self.batch_size
        if probe_cost >= self.query_budget:
            raise ConfigError(
                f"restart probes need {probe_cost} queries, which does not leave "
                f"budget below the limit {self.query_budget}; shrink restarts, "
                f"restart_iters, or batch_size"
            )


@dataclass
class TrajectoryRecord:
    """One optimizer iteration as logged.

    chosen_index is the in-memory argmax position within the scored batch;
    it is deliberately not part of the CSV export, whose columns are fixed.
    """

    restart_id: int
    iteration: int
    queries_used: int
    best_score: float
    accepted: bool
    chosen_index: int


@dataclass
class RecoveryState:
    """Mutable optimizer state for one run segment."""

    coeffs: np.ndarray
    best_score: float = float("-inf")
    iteration: int = 0
    queries: int = 0
    exhausted: bool = False


@dataclass
class RecoveryResult:
    image: np.ndarray
    coeffs: np.ndarray
    final_score: float
    trajectory: list[TrajectoryRecord] = field(repr=False)
    total_queries: int = 0
    exhausted: bool = False


def sample_coeff_batch(k: int, batch_size: int, sigma: float, rng) -> np.ndarray:
    """(batch_size, k) of i.i.d. N(0, sigma^2) coefficient perturbations."""
    return rng.standard_normal((batch_size, k)) * sigma


def derived_rng(seed: int, restart_id: int):
    """Independent generator for one restart probe, reproducible from (seed, id)."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(restart_id,))
    )


def _check_geometry(oracle, basis: EigenBasis):
    geom = getattr(oracle, "geometry", None)
    if geom is not None and tuple(geom) != basis.geometry:
        raise GeometryError(
            f"basis geometry {basis.geometry} does not match oracle geometry {tuple(geom)}"
        )


def _ascend(oracle, identity, basis, cfg, state, rng, iters, trajectory, restart_id):
    """Run greedy ascent iterations on `state` until iters or budget runs out.

    Every scored image is counted against cfg.query_budget through
    state.queries; an iteration is only started when a full batch still fits.
    A budget refusal from the oracle itself marks the state exhausted and
    stops cleanly.
    """
    h, w, c = basis.geometry
    remaining = iters
    while remaining is None or remaining > 0:
        if state.queries + cfg.batch_size > cfg.query_budget:
            break
        z = sample_coeff_batch(basis.k, cfg.batch_size, cfg.sigma, rng)
        flats = _kernels.synthesize_clipped(basis.vectors, state.coeffs, z)
        images = [reshape(row, h, w, c) for row in flats]
        try:
            scores = np.asarray(oracle.score_batch(images, identity), dtype=np.float64)
        except BudgetExhaustedError:
            state.exhausted = True
            break
        state.queries += cfg.batch_size
        ind = int(np.argmax(scores))  # ties break to the lowest index
        top = float(scores[ind])
        if cfg.accept_mode == "always":
            accepted = True
            state.coeffs = state.coeffs + z[ind]
            if top > state.best_score:
                state.best_score = top
        else:
            accepted = top > state.best_score
            if accepted:
                state.coeffs = state.coeffs + z[ind]
                state.best_score = top
        trajectory.append(TrajectoryRecord(
            restart_id=restart_id,
            iteration=state.iteration,
            queries_used=state.queries,
            best_score=state.best_score,
            accepted=accepted,
            chosen_index=ind,
        ))
        state.iteration += 1
        if remaining is not None:
            remaining -= 1


def _finish(basis, state, trajectory) -> RecoveryResult:
    return RecoveryResult(
        image=clip(synthesize(basis, state.coeffs)),
        coeffs=state.coeffs,
        final_score=state.best_score,
        trajectory=trajectory,
        total_queries=state.queries,
        exhausted=state.exhausted,
    )


def _initial_state(basis, init_coeffs) -> RecoveryState:
    if init_coeffs is None:
        coeffs = np.zeros(basis.k)
    else:
        coeffs = np.asarray(init_coeffs, dtype=np.float64).copy()
        if coeffs.shape != (basis.k,):
            raise GeometryError(
                f"init_coeffs length {coeffs.shape} does not match k={basis.k}"
            )
    return RecoveryState(coeffs=coeffs)


def recover_single(oracle, identity: str, basis: EigenBasis, cfg: RecoveryConfig,
                   init_coeffs=None, iters=None) -> RecoveryResult:
    """One greedy ascent run from init_coeffs (zero by default).

    Runs until `iters` iterations or until the next batch would cross
    cfg.query_budget.  Uses the probe-0 generator stream so it coincides with
    a multi-start run of a single restart.
    """
    cfg.validate()
    _check_geometry(oracle, basis)
    state = _initial_state(basis, init_coeffs)
    trajectory: list[TrajectoryRecord] = []
    rng = derived_rng(cfg.seed, 0)
    _ascend(oracle, identity, basis, cfg, state, rng, iters, trajectory, restart_id=0)
    return _finish(basis, state, trajectory)


def recover_multistart(oracle, identity: str, basis: EigenBasis,
                       cfg: RecoveryConfig) -> RecoveryResult:
    """Probe-then-continue recovery: cfg.restarts short runs, best one resumed.

    Each probe starts from zero coefficients with its own derived generator
    and runs cfg.restart_iters iterations.  The probe with the highest best
    score (ties to the lowest restart id) is resumed in place, keeping its
    coefficients, score, and generator, until the shared budget is spent.  The returned trajectory concatenates every probe's records and
    the continuation's, which keep the winning probe's restart id and
    iteration numbering.  With restarts=0 the whole budget goes to a single
    run from zero, which is exactly recover_single.
    """
    cfg.validate()
    _check_geometry(oracle, basis)
    trajectory: list[TrajectoryRecord] = []

    if cfg.restarts == 0:
        state = _initial_state(basis, None)
        rng = derived_rng(cfg.seed, 0)
        _ascend(oracle, identity, basis, cfg, state, rng, None, trajectory, restart_id=0)
        return _finish(basis, state, trajectory)

    probes = []
    queries_spent = 0
    exhausted = False
    for restart_id in range(cfg.restarts):
        state = _initial_state(basis, None)
        state.queries = queries_spent  # budget is shared across the whole run
        rng = derived_rng(cfg.seed, restart_id)
        probe_rows: list[TrajectoryRecord] = []
        _ascend(oracle, identity, basis, cfg, state, rng, cfg.restart_iters,
                probe_rows, restart_id=restart_id)
        trajectory.extend(probe_rows)
        queries_spent = state.queries
        exhausted = exhausted or state.exhausted
        probes.append((state, rng))
        if state.exhausted:
            break

    best_id = max(range(len(probes)),
                  key=lambda r: (probes[r][0].best_score, -r))
    winner, rng = probes[best_id]
    winner.queries = queries_spent
    winner.exhausted = exhausted
    if not exhausted:
        _ascend(oracle, identity, basis, cfg, winner, rng, None, trajectory,
                restart_id=best_id)
    return _finish(basis, winner, trajectory)


def write_trajectory_csv(trajectory, path) -> None:
    """Export records under the fixed header; floats keep full precision."""
    lines = ["restart_id,iteration,queries_used,best_score,accepted"]
    for rec in trajectory:
        lines.append(
            f"{rec.restart_id},{rec.iteration},{rec.queries_used},"
            f"{rec.best_score!r},{int(rec.accepted)}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
