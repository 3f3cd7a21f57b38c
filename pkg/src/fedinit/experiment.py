"""Experiment orchestration: config parsing, round scheduling, reporting.

An experiment is described by a single YAML file of nested key-value pairs.
Unknown keys are rejected so typos fail loudly instead of silently running a
different experiment. The orchestrator samples a participation fraction of
clients per round; each client uploads its statistics the first time it is
drawn, and once every client has been seen the classifier is solved from the
accumulated set. Because aggregation reduces over the stored shares in client
order, the number of rounds taken cannot change the solved weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import plotting, reports
from .analysis import BYTES_PER_VALUE
from .classifier import ScatterVariant, evaluate, write_weights
from .errors import ConfigError, FedInitError
from .features import (FeatureDataset, SyntheticSpec, anisotropic_covariance,
                       gaussian_benchmark_spec, generate_synthetic,
                       read_dataset)
from .methods import METHODS, shares_for, share_values, solve_from_shares
from .partition import dirichlet_partition, load_assignment, partition_stats
from .privacy import NoiseSpec
from .rng import STREAM_ROUND, derive_rng

_VARIANTS = {v.value: v for v in ScatterVariant}


def _check_keys(mapping: dict, allowed, where: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")


def _parse_synthetic(block: dict, where: str) -> tuple[SyntheticSpec, int | None]:
    _check_keys(block, {"classes", "dim", "samples_per_class", "mean_scale",
                        "covariance", "seed", "draw_seed"}, where)
    try:
        classes = int(block["classes"])
        dim = int(block["dim"])
        samples = block["samples_per_class"]
        mean_scale = float(block.get("mean_scale", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: classes, dim, samples_per_class required") from exc
    cov_block = block.get("covariance", {"kind": "isotropic", "scale": 1.0})
    _check_keys(cov_block, {"kind", "scale", "condition"}, f"{where}.covariance")
    kind = cov_block.get("kind", "isotropic")
    scale = float(cov_block.get("scale", 1.0))
    seed = int(block.get("seed", 0))
    if kind == "isotropic":
        cov = scale * np.eye(dim)
    elif kind == "anisotropic":
        cov = anisotropic_covariance(dim, float(cov_block.get("condition", 100.0)),
                                     scale, seed)
    else:
        raise ConfigError(f"{where}: unknown covariance kind {kind!r}")
    draw_seed = block.get("draw_seed")
    draw_seed = None if draw_seed is None else int(draw_seed)
    spec = gaussian_benchmark_spec(classes, dim, 1, mean_scale, cov, seed)
    if np.isscalar(samples):
        counts = np.full(classes, int(samples))
    else:
        counts = np.asarray(samples, dtype=np.int64)
    return SyntheticSpec(spec.class_means, cov, counts, seed), draw_seed


@dataclass(frozen=True)
class DatasetSource:
    path: str | None = None
    synthetic: SyntheticSpec | None = None
    draw_seed: int | None = None

    def load(self) -> FeatureDataset:
        if self.path is not None:
            return read_dataset(self.path)
        return generate_synthetic(self.synthetic, self.draw_seed)


def _parse_source(block, where: str) -> DatasetSource:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a mapping with path or synthetic")
    _check_keys(block, {"path", "synthetic"}, where)
    has_path = "path" in block
    has_synth = "synthetic" in block
    if has_path == has_synth:
        raise ConfigError(f"{where} needs exactly one of path / synthetic")
    if has_path:
        return DatasetSource(path=str(block["path"]))
    spec, draw_seed = _parse_synthetic(block["synthetic"], f"{where}.synthetic")
    return DatasetSource(synthetic=spec, draw_seed=draw_seed)


_TOP_KEYS = {"train", "test", "clients", "alpha", "assignment", "method",
             "variant", "gamma", "lambda", "means_per_client",
             "participation", "rounds_limit", "noise", "secure_aggregation",
             "seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see parse_config for the schema."""

    train: DatasetSource
    test: DatasetSource
    clients: int
    method: str
    seed: int
    alpha: float | None = None
    assignment_path: str | None = None
    variant: ScatterVariant = ScatterVariant.WITHIN_ONLY
    gamma: float | None = None
    ridge_lambda: float | None = None
    means_per_client: int = 1
    participation: float = 1.0
    rounds_limit: int | None = None
    noise: NoiseSpec | None = None
    secure_aggregation: bool = False

    def resolved_gamma(self, dim: int) -> float:
        """Shrinkage default: 1.0, or 0.1 for 1280-dimensional features."""
        if self.gamma is not None:
            return self.gamma
        return 0.1 if dim == 1280 else 1.0


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, _TOP_KEYS, "config")
    for key in ("train", "test", "clients", "method"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")
    method = str(raw["method"])
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; pick one of {METHODS}")
    clients = int(raw["clients"])
    if clients < 1:
        raise ConfigError("clients must be at least 1")
    has_alpha = raw.get("alpha") is not None
    has_assignment = raw.get("assignment") is not None
    if has_alpha == has_assignment:
        raise ConfigError("specify exactly one of alpha / assignment")
    variant_name = str(raw.get("variant", "within"))
    if variant_name not in _VARIANTS:
        raise ConfigError(f"unknown variant {variant_name!r}")
    variant = _VARIANTS[variant_name]
    if variant is not ScatterVariant.WITHIN_ONLY and method not in (
            "fedcof", "fedcof-oracle"):
        raise ConfigError("scatter variants apply to fedcof methods only")
    participation = float(raw.get("participation", 1.0))
    if not 0 < participation <= 1:
        raise ConfigError("participation must lie in (0, 1]")
    if participation * clients < 1:
        raise ConfigError("participation * clients must be at least 1")
    means_per_client = int(raw.get("means_per_client", 1))
    if means_per_client < 1:
        raise ConfigError("means_per_client must be at least 1")
    noise = None
    if raw.get("noise") is not None:
        block = raw["noise"]
        _check_keys(block, {"kind", "epsilon", "seed"}, "noise")
        try:
            noise = NoiseSpec(str(block["kind"]), float(block["epsilon"]),
                              int(block.get("seed", 0)))
        except KeyError as exc:
            raise ConfigError("noise needs kind and epsilon") from exc
    secure = bool(raw.get("secure_aggregation", False))
    if secure and method != "fedcof":
        raise ConfigError("secure_aggregation requires method fedcof")
    if secure and participation < 1.0:
        raise ConfigError("secure_aggregation requires full participation")
    rounds_limit = raw.get("rounds_limit")
    if rounds_limit is not None:
        rounds_limit = int(rounds_limit)
        if rounds_limit < 1:
            raise ConfigError("rounds_limit must be at least 1")
    gamma = raw.get("gamma")
    lam = raw.get("lambda")
    return ExperimentConfig(
        train=_parse_source(raw["train"], "train"),
        test=_parse_source(raw["test"], "test"),
        clients=clients,
        method=method,
        seed=int(raw.get("seed", 0)),
        alpha=float(raw["alpha"]) if has_alpha else None,
        assignment_path=str(raw["assignment"]) if has_assignment else None,
        variant=variant,
        gamma=None if gamma is None else float(gamma),
        ridge_lambda=None if lam is None else float(lam),
        means_per_client=means_per_client,
        participation=participation,
        rounds_limit=rounds_limit,
        noise=noise,
        secure_aggregation=secure,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return parse_config(raw)


@dataclass(frozen=True)
class RoundLog:
    round: int
    participants: tuple[int, ...]
    newly_seen: int
    coverage: float
    uplink_values: int
    uplink_bytes: int


@dataclass
class ExperimentResult:
    method: str
    accuracy: float
    per_class: list
    rounds: list[RoundLog]
    coverage_complete: bool
    total_uplink_bytes: int
    shared_means: int
    dim: int
    num_classes: int
    clients: int
    gamma: float | None
    ridge_lambda: float | None
    condition_number: float | None
    fallback_classes: int
    mask_residual: float | None
    seed: int
    weights: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "accuracy": self.accuracy,
            "per_class": list(self.per_class),
            "rounds": [{"round": r.round,
                        "participants": list(r.participants),
                        "newly_seen": r.newly_seen,
                        "coverage": r.coverage,
                        "uplink_values": r.uplink_values,
                        "uplink_bytes": r.uplink_bytes} for r in self.rounds],
            "coverage_complete": self.coverage_complete,
            "total_uplink_bytes": self.total_uplink_bytes,
            "shared_means": self.shared_means,
            "dim": self.dim,
            "num_classes": self.num_classes,
            "clients": self.clients,
            "gamma": self.gamma,
            "ridge_lambda": self.ridge_lambda,
            "condition_number": self.condition_number,
            "fallback_classes": self.fallback_classes,
            "mask_residual": self.mask_residual,
            "seed": self.seed,
        }


def _round_participants(config: ExperimentConfig, round_index: int) -> np.ndarray:
    size = max(1, int(round(config.participation * config.clients)))
    rng = derive_rng(config.seed, STREAM_ROUND, round_index)
    return np.sort(rng.choice(config.clients, size=size, replace=False))


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the federation to coverage (or the round limit) and evaluate."""
    train = config.train.load()
    test = config.test.load()
    if train.dim != test.dim:
        raise FedInitError("train and test dimensions differ")
    if train.num_classes != test.num_classes:
        raise FedInitError("train and test class counts differ")
    if config.assignment_path is not None:
        assignment = load_assignment(config.assignment_path)
        if assignment.num_samples != train.num_samples:
            raise FedInitError("assignment length does not match train set")
        if assignment.num_clients != config.clients:
            raise FedInitError("assignment client count does not match config")
    else:
        assignment = dirichlet_partition(train, config.clients, config.alpha,
                                         config.seed)
    gamma = config.resolved_gamma(train.dim)
    stats = partition_stats(assignment, train)

    # Every client's upload is fixed at partition time; rounds only decide
    # when the server first sees it.
    all_shares = {s.client_id: s for s in shares_for(
        config.method, train, assignment, range(config.clients),
        means_per_class=config.means_per_client, seed=config.seed,
        noise=config.noise)}

    seen: set[int] = set()
    collected: dict[int, object] = {}
    logs: list[RoundLog] = []
    round_index = 0
    while len(seen) < config.clients:
        if config.rounds_limit is not None and round_index >= config.rounds_limit:
            break
        participants = _round_participants(config, round_index)
        fresh = [int(k) for k in participants if int(k) not in seen]
        batch = [all_shares[k] for k in fresh]
        values = share_values(config.method, batch, train.num_classes,
                              secure=config.secure_aggregation)
        seen.update(fresh)
        for k in fresh:
            collected[k] = all_shares[k]
        round_index += 1
        logs.append(RoundLog(round_index, tuple(int(p) for p in participants),
                             len(fresh), len(seen) / config.clients,
                             values, values * BYTES_PER_VALUE))

    ordered = [collected[k] for k in sorted(collected)]
    outcome = solve_from_shares(
        config.method, ordered, train.num_classes, gamma=gamma,
        ridge_lambda=config.ridge_lambda, variant=config.variant,
        allow_single_mean=True, secure=config.secure_aggregation,
        secure_seed=config.seed)
    result = evaluate(outcome.weights, test)
    return ExperimentResult(
        method=config.method,
        accuracy=result.accuracy,
        per_class=[None if np.isnan(a) else float(a) for a in result.per_class],
        rounds=logs,
        coverage_complete=len(seen) == config.clients,
        total_uplink_bytes=sum(r.uplink_bytes for r in logs),
        shared_means=stats.total_class_entries,
        dim=train.dim,
        num_classes=train.num_classes,
        clients=config.clients,
        gamma=gamma if config.method != "fed3r" else None,
        ridge_lambda=outcome.ridge_lambda,
        condition_number=outcome.condition_number,
        fallback_classes=outcome.fallback_classes,
        mask_residual=outcome.mask_residual,
        seed=config.seed,
        weights=outcome.weights,
    )


def write_report(result: dict, out_dir) -> list[str]:
    """Render a persisted result to key=value text, CSV tables, and a figure.

    Accepts the plain-dict form so a report can be regenerated byte-for-byte
    from a saved result.json without rerunning the experiment.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    summary = {
        "method": result["method"],
        "accuracy": result["accuracy"],
        "clients": result["clients"],
        "dim": result["dim"],
        "classes": result["num_classes"],
        "shared_means": result["shared_means"],
        "rounds": len(result["rounds"]),
        "coverage_complete": result["coverage_complete"],
        "uplink_bytes": result["total_uplink_bytes"],
        "uplink_mb": result["total_uplink_bytes"] / 1e6,
        "gamma": result["gamma"],
        "ridge_lambda": result["ridge_lambda"],
        "condition_number": result["condition_number"],
        "fallback_classes": result["fallback_classes"],
        "mask_residual": result["mask_residual"],
        "seed": result["seed"],
    }
    paths.append(reports.write_kv(out / "report.txt", summary))
    paths.append(reports.write_csv(
        out / "rounds.csv",
        ["round", "newly_seen", "coverage", "uplink_values", "uplink_bytes"],
        [[r["round"], r["newly_seen"], r["coverage"], r["uplink_values"],
          r["uplink_bytes"]] for r in result["rounds"]]))
    paths.append(reports.write_csv(
        out / "per_class.csv", ["class", "accuracy"],
        [[c, a] for c, a in enumerate(result["per_class"])]))
    rounds = [r["round"] for r in result["rounds"]]
    coverage = [r["coverage"] for r in result["rounds"]]
    mb = [r["uplink_bytes"] / 1e6 for r in result["rounds"]]
    if rounds:
        paths.append(plotting.coverage_figure(rounds, coverage, mb,
                                              out / "coverage.png"))
    return paths


def save_result(result: ExperimentResult, out_dir) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "result.json"
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
    if result.weights is not None:
        write_weights(result.weights, out / "weights.fedw")
    return str(path)
