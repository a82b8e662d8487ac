"""Evaluation harness: recovery quality under an attacked oracle and an
independent critic, an ablation grid over loss variants and restart policies,
and a verification-style pair test.

The attacked oracle is the optimization surface; the critic only ever scores
final images, so it cannot leak query budget into the attack. Reports carry
per-target rows, and every aggregate is recomputed from rows by one shared
routine, so a report reloaded from its CSV reproduces the original numbers
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import LOSS_MODES, TrainConfig, loss_mode_flags, train
from .errors import ConfigError, GeometryError
from .image import reshape
from .oracle import make_random_embedder
from .recovery import RecoveryConfig, recover_multistart

REPORT_HEADER = "target,attacked_score,critic_score,queries"
ABLATION_HEADER = ("loss_mode,restarts,n_targets,attacked_mean,attacked_std,"
                   "critic_mean,critic_std,queries_mean")


@dataclass
class TargetResult:
    name: str
    attacked_score: float
    critic_score: float
    queries: int


@dataclass
class EvalReport:
    n_targets: int
    attacked_mean: float
    attacked_std: float
    critic_mean: float
    critic_std: float
    queries_mean: float
    rows: list[TargetResult] = field(repr=False)
    fingerprint: dict = field(default_factory=dict)


def _aggregate(rows, fingerprint=None) -> EvalReport:
    """The single source of truth for report aggregates."""
    attacked = np.array([r.attacked_score for r in rows], dtype=np.float64)
    critic = np.array([r.critic_score for r in rows], dtype=np.float64)
    queries = np.array([r.queries for r in rows], dtype=np.float64)
    return EvalReport(
        n_targets=len(rows),
        attacked_mean=float(attacked.mean()),
        attacked_std=float(attacked.std()),
        critic_mean=float(critic.mean()),
        critic_std=float(critic.std()),
        queries_mean=float(queries.mean()),
        rows=list(rows),
        fingerprint=dict(fingerprint or {}),
    )


def _check_same_geometry(basis, oracle, what):
    geom = getattr(oracle, "geometry", None)
    if geom is not None and tuple(geom) != basis.geometry:
        raise GeometryError(
            f"{what} geometry {tuple(geom)} does not match basis {basis.geometry}")


def evaluate(targets, attacked, critic, basis, cfg: RecoveryConfig) -> EvalReport:
    """Recover every target against `attacked`, score finals under both oracles.

    targets is an iterable of (name, image) pairs.  Each target gets a
    deterministic per-target seed (cfg.seed + its position) so paired
    comparisons across oracle or basis variants stay seed-aligned.  The final
    image is scored once under the attacked oracle (one extra query on top of
    the recovery budget) and once under the critic.
    """
    pairs = list(targets)
    if not pairs:
        raise ConfigError("evaluate needs at least one target")
    _check_same_geometry(basis, attacked, "attacked oracle")
    _check_same_geometry(basis, critic, "critic oracle")
    rows = []
    for index, (name, image) in enumerate(pairs):
        attacked.enroll(name, image)
        critic.enroll(name, image)
        run_cfg = replace(cfg, seed=cfg.seed + index)
        result = recover_multistart(attacked, name, basis, run_cfg)
        attacked_score = float(attacked.score_batch([result.image], name)[0])
        critic_score = float(critic.score_batch([result.image], name)[0])
        rows.append(TargetResult(
            name=name,
            attacked_score=attacked_score,
            critic_score=critic_score,
            queries=result.total_queries,
        ))
    rows.sort(key=lambda r: r.name)
    fingerprint = {
        "k": basis.k,
        "seed": cfg.seed,
        "restarts": cfg.restarts,
        "restart_iters": cfg.restart_iters,
        "batch_size": cfg.batch_size,
        "query_budget": cfg.query_budget,
        "accept_mode": cfg.accept_mode,
    }
    return _aggregate(rows, fingerprint)


def write_report_csv(report: EvalReport, path) -> None:
    lines = [REPORT_HEADER]
    for r in report.rows:
        lines.append(f"{r.name},{r.attacked_score!r},{r.critic_score!r},{r.queries}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report_csv(path) -> EvalReport:
    """Rebuild a report from persisted rows; aggregates are recomputed."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ConfigError(f"{path}: not a report CSV (bad header)")
    rows = []
    for line in lines[1:]:
        name, attacked, critic, queries = line.split(",")
        rows.append(TargetResult(name, float(attacked), float(critic), int(queries)))
    return _aggregate(rows)


@dataclass
class AblationCell:
    loss_mode: str
    restarts: int
    report: EvalReport


def ablation(targets, train_images, train_cfg: TrainConfig,
             recover_cfg: RecoveryConfig, attacked_seed: int, critic_seed: int,
             embed_dim: int = 64, nonlinearity: str = "tanh",
             restart_grid=(0, 10)) -> list[AblationCell]:
    """Loss-variant x restart-policy grid, every cell on identical targets.

    Each cell trains its own basis (the loss variant), builds fresh attacked
    and critic embedders from the shared seeds (so query accounting restarts
    per cell), and evaluates the same target list with the same per-target
    recovery seeds.  Cells differ in nothing else.
    """
    pairs = list(targets)
    if not pairs:
        raise ConfigError("ablation needs at least one target")
    h, w, c = pairs[0][1].shape
    cells = []
    for mode in LOSS_MODES:
        symmetry_on, generative_on = loss_mode_flags(mode)
        mode_cfg = replace(train_cfg, symmetry_on=symmetry_on,
                           generative_on=generative_on)
        basis = train(train_images, mode_cfg)
        for restarts in restart_grid:
            attacked = make_random_embedder(seed=attacked_seed, geometry=(h, w, c),
                                            dim=embed_dim, nonlinearity=nonlinearity)
            critic = make_random_embedder(seed=critic_seed, geometry=(h, w, c),
                                          dim=embed_dim, nonlinearity=nonlinearity)
            cell_cfg = replace(recover_cfg, restarts=restarts)
            report = evaluate(pairs, attacked, critic, basis, cell_cfg)
            report.fingerprint["loss_mode"] = mode
            report.fingerprint["attacked_seed"] = attacked_seed
            report.fingerprint["critic_seed"] = critic_seed
            cells.append(AblationCell(mode, restarts, report))
    return cells


def write_ablation_csv(cells, path) -> None:
    lines = [ABLATION_HEADER]
    for cell in cells:
        r = cell.report
        lines.append(
            f"{cell.loss_mode},{cell.restarts},{r.n_targets},"
            f"{r.attacked_mean!r},{r.attacked_std!r},"
            f"{r.critic_mean!r},{r.critic_std!r},{r.queries_mean!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def verification_test(genuine_pairs, impostor_pairs, oracle, threshold_sweep=None):
    """Best-threshold pair verification accuracy.

    Pairs are (probe_image, reference_image); each reference is enrolled under
    a throwaway identity and the probe scored against it.  With no explicit
    sweep, candidate thresholds are the midpoints between adjacent distinct
    scores plus sentinels outside the range, which makes the resulting
    accuracy invariant under any strictly increasing transform of scores.
    Returns (best_accuracy, best_threshold); a probe scoring >= threshold is
    predicted genuine.
    """
    genuine_pairs = list(genuine_pairs)
    impostor_pairs = list(impostor_pairs)
    if not genuine_pairs or not impostor_pairs:
        raise ConfigError("verification needs both genuine and impostor pairs")

    def pair_scores(pairs, tag):
        out = []
        for i, (probe, reference) in enumerate(pairs):
            identity = f"_verify_{tag}_{i}"
            oracle.enroll(identity, reference)
            out.append(float(oracle.score_batch([probe], identity)[0]))
        return np.array(out, dtype=np.float64)

    genuine = pair_scores(genuine_pairs, "g")
    impostor = pair_scores(impostor_pairs, "i")

    if threshold_sweep is None:
        values = np.unique(np.concatenate([genuine, impostor]))
        mids = (values[1:] + values[:-1]) / 2.0
        thresholds = np.concatenate([[values[0] - 1.0], mids, [values[-1] + 1.0]])
    else:
        thresholds = np.asarray(list(threshold_sweep), dtype=np.float64)
        if thresholds.size == 0:
            raise ConfigError("threshold_sweep is empty")

    total = genuine.size + impostor.size
    best_accuracy = -1.0
    best_threshold = float(thresholds[0])
    for theta in thresholds:
        tp = int(np.count_nonzero(genuine >= theta))
        tn = int(np.count_nonzero(impostor < theta))
        accuracy = (tp + tn) / total
        if accuracy > best_accuracy:
            best_accuracy = accuracy
            best_threshold = float(theta)
    return best_accuracy, best_threshold


def synthetic_faces(seed, height, width, channels, n, k=8, noise=0.02,
                    symmetric=True):
    """Face-like targets without a dataset: non-negative combinations of a
    held-out orthonormal pattern basis plus pixel noise, rescaled into the
    open value range.  symmetric=True mirror-averages the patterns first, so
    the population has the left-right structure real faces do, up to noise.
    """
    if n < 1 or k < 1:
        raise ConfigError(f"need positive n and k, got n={n} k={k}")
    rng = np.random.default_rng(seed)
    d = height * width * channels
    if k > d:
        raise ConfigError(f"k={k} patterns cannot exceed {d} pixels")
    patterns = rng.standard_normal((d, k))
    if symmetric:
        for j in range(k):
            img = reshape(patterns[:, j], height, width, channels)
            sym = (img + img[:, ::-1, :]) / 2.0
            patterns[:, j] = sym.transpose(2, 0, 1).ravel()
    q, _ = np.linalg.qr(patterns)
    weights_scale = np.linspace(1.0, 0.3, k)
    images = []
    for _ in range(n):
        coeffs = np.abs(rng.standard_normal(k)) * weights_scale
        flat = q @ coeffs + noise * rng.standard_normal(d)
        lo, hi = float(flat.min()), float(flat.max())
        if hi - lo < 1e-12:
            flat = np.full(d, 0.5)
        else:
            flat = 0.08 + (flat - lo) / (hi - lo) * 0.84
        images.append(reshape(flat, height, width, channels))
    return images
