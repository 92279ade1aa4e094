"""Experiment configuration: a JSON schema for one simulator run.

A document names a game (inline payoff tensors, a bundled generator, or one
of the network applications), the learner for each player, the feedback
structure, a round count, a 64-bit seed, and output paths.  ``parse_config``
validates the whole document in one pass and reports *every* violation it
finds, each tagged with the path into the document that caused it.

The parsed ``ExperimentConfig`` echoes all effective values (defaults
filled), reparses to an equal config, and hashes canonically so reruns can
be tied to the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
import json
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .feedback import (
    Delayed,
    FeedbackSetup,
    GaussianTruncatedNoise,
    GlobalView,
    IndividualView,
    LocalView,
    NoNoise,
    Perfect,
    UniformNoise,
    Windowed,
)
from .games import (
    GENERATORS,
    FiniteGame,
    GameError,
    PlayerGraph,
    build_finite_game,
)
from .learners import (
    CONTINUOUS_KINDS,
    FINITE_KINDS,
    Constant,
    InverseK,
    InversePow,
    LearnerConfig,
    LearnerError,
    _validate_run,
)
from .netapps import (
    PDA,
    PUA,
    RUA,
    DmlInstance,
    GridInstance,
    RoutingInstance,
    make_dml_instance,
    make_grid_instance,
    make_routing_instance,
)
from .responses import Entropy, SquaredEuclidean, TieRule

LEARNER_KINDS = FINITE_KINDS + CONTINUOUS_KINDS


class ConfigError(ValueError):
    """All schema violations found in one document, path-tagged."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("\n".join(self.violations))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ---------------------------------------------------------------------------
# rate schedules and regularizers
# ---------------------------------------------------------------------------


class ConstantRate(_Model):
    kind: Literal["constant"]
    c: float

    def build(self) -> Constant:
        return Constant(self.c)


class InverseKRate(_Model):
    kind: Literal["inverse_k"]

    def build(self) -> InverseK:
        return InverseK()


class InversePowRate(_Model):
    kind: Literal["inverse_pow"]
    p: float

    def build(self) -> InversePow:
        return InversePow(self.p)


RateSpec = Annotated[
    Union[ConstantRate, InverseKRate, InversePowRate], Field(discriminator="kind")
]


class EntropyReg(_Model):
    kind: Literal["entropy"]
    epsilon: float = 1.0

    def build(self) -> Entropy:
        return Entropy(self.epsilon)


class SquaredEuclideanReg(_Model):
    kind: Literal["squared_euclidean"]
    epsilon: float = 1.0

    def build(self) -> SquaredEuclidean:
        return SquaredEuclidean(self.epsilon)


RegularizerSpec = Annotated[
    Union[EntropyReg, SquaredEuclideanReg], Field(discriminator="kind")
]


class LearnerSpec(_Model):
    type: Literal[LEARNER_KINDS]  # type: ignore[valid-type]
    regularizer: RegularizerSpec | None = None
    mu: RateSpec | None = None
    lambda_: RateSpec | None = Field(default=None, alias="lambda")
    tie_rule: Literal["lowest_index", "uniform_over_argmax"] = "lowest_index"
    p_floor: float | None = None
    estimator: Literal["importance", "exact"] = "importance"

    def build(self) -> LearnerConfig:
        kwargs = {
            "kind": self.type,
            "tie_rule": TieRule(self.tie_rule),
            "estimator": self.estimator,
        }
        if self.regularizer is not None:
            kwargs["regularizer"] = self.regularizer.build()
        if self.mu is not None:
            kwargs["mu"] = self.mu.build()
        if self.lambda_ is not None:
            kwargs["lam"] = self.lambda_.build()
        if self.p_floor is not None:
            kwargs["p_floor"] = self.p_floor
        return LearnerConfig(**kwargs)

    def filled(self) -> "LearnerSpec":
        """Echo form: every default the runtime would apply, made explicit."""
        built = self.build()
        update: dict = {}
        if self.mu is None:
            update["mu"] = _rate_spec(built.mu)
        if self.lambda_ is None:
            update["lambda_"] = _rate_spec(built.lam)
        if self.p_floor is None:
            update["p_floor"] = built.p_floor
        if self.regularizer is None and built.regularizer is not None:
            update["regularizer"] = _regularizer_spec(built.regularizer)
        return self.model_copy(update=update) if update else self


def _rate_spec(schedule) -> ConstantRate | InverseKRate | InversePowRate:
    if isinstance(schedule, Constant):
        return ConstantRate(kind="constant", c=schedule.c)
    if isinstance(schedule, InverseK):
        return InverseKRate(kind="inverse_k")
    if isinstance(schedule, InversePow):
        return InversePowRate(kind="inverse_pow", p=schedule.p)
    raise GameError(f"schedule {schedule!r} has no config form")


def _regularizer_spec(reg) -> EntropyReg | SquaredEuclideanReg:
    if isinstance(reg, Entropy):
        return EntropyReg(kind="entropy", epsilon=reg.epsilon)
    if isinstance(reg, SquaredEuclidean):
        return SquaredEuclideanReg(kind="squared_euclidean", epsilon=reg.epsilon)
    raise GameError(f"regularizer {reg!r} has no config form")


# ---------------------------------------------------------------------------
# feedback
# ---------------------------------------------------------------------------


class LocalVisibility(_Model):
    kind: Literal["local"]
    edges: list[tuple[int, int]]


class WindowedSpec(_Model):
    kind: Literal["windowed"]
    m: int


class DelayedSpec(_Model):
    kind: Literal["delayed"]
    m: int


class UniformNoiseSpec(_Model):
    kind: Literal["uniform"]
    half_width: float


class GaussianNoiseSpec(_Model):
    kind: Literal["gaussian_truncated"]
    sigma: float
    clip: float


class FeedbackSpec(_Model):
    visibility: Literal["global", "individual"] | LocalVisibility = "global"
    temporal: Literal["perfect"] | Annotated[
        Union[WindowedSpec, DelayedSpec], Field(discriminator="kind")
    ] = "perfect"
    noise: Literal["none"] | Annotated[
        Union[UniformNoiseSpec, GaussianNoiseSpec], Field(discriminator="kind")
    ] = "none"

    def build(self, n_players: int) -> FeedbackSetup:
        if self.visibility == "global":
            kind = GlobalView()
        elif self.visibility == "individual":
            kind = IndividualView()
        else:
            kind = LocalView(PlayerGraph(n_players, self.visibility.edges))
        if self.temporal == "perfect":
            temporal = Perfect()
        elif isinstance(self.temporal, WindowedSpec):
            temporal = Windowed(self.temporal.m)
        else:
            temporal = Delayed(self.temporal.m)
        if self.noise == "none":
            noise = NoNoise()
        elif isinstance(self.noise, UniformNoiseSpec):
            noise = UniformNoise(self.noise.half_width)
        else:
            noise = GaussianTruncatedNoise(self.noise.sigma, self.noise.clip)
        return FeedbackSetup(kind=kind, temporal=temporal, noise=noise)


# ---------------------------------------------------------------------------
# game specs
# ---------------------------------------------------------------------------


class FiniteGameSpec(_Model):
    type: Literal["finite"]
    players: int
    actions: list[int]
    payoffs: list[list[float]]
    labels: list[list[str]] | None = None

    def build(self) -> FiniteGame:
        doc = {
            "type": "finite",
            "players": self.players,
            "actions": self.actions,
            "payoffs": self.payoffs,
        }
        if self.labels is not None:
            doc["labels"] = self.labels
        return build_finite_game(doc)


class GeneratorGameSpec(_Model):
    type: Literal["generator"]
    name: str
    params: dict = Field(default_factory=dict)

    def build(self) -> FiniteGame:
        return build_finite_game(
            {"type": "generator", "name": self.name, "params": self.params}
        )


class RoutingGameSpec(_Model):
    type: Literal["routing"]
    edges: list[tuple[int, int, float, float]]
    source: int
    destination: int
    jammer_sets: list[list[int]] = Field(default_factory=list)
    lam: float = 1.0
    k_paths: int = 8
    degradation: float = 0.1

    def build(self) -> RoutingInstance:
        return make_routing_instance(
            [tuple(e) for e in self.edges],
            source=self.source,
            destination=self.destination,
            jammer_sets=[tuple(s) for s in self.jammer_sets],
            lam=self.lam,
            k_paths=self.k_paths,
            degradation=self.degradation,
        )


class RuaAlgo(_Model):
    kind: Literal["rua"]
    epsilon: float


class GridInline(_Model):
    susceptance: list[list[float]]
    loads: list[float]
    caps: list[float]
    unit_costs: list[float]
    price: float
    weights: list[float]
    players: list[int]


class GridGameSpec(_Model):
    type: Literal["grid"]
    algo: Literal["pua", "pda"] | RuaAlgo = "pua"
    n_buses: int | None = None
    topology: Literal["chain", "ring"] = "chain"
    instance_seed: int = 0
    instance: GridInline | None = None

    def build(self) -> tuple[GridInstance, PUA | RUA | PDA]:
        if (self.n_buses is None) == (self.instance is None):
            raise GameError("give exactly one of n_buses (generator) or instance (inline)")
        if self.instance is not None:
            inst = GridInstance(
                susceptance=np.asarray(self.instance.susceptance, dtype=np.float64),
                loads=np.asarray(self.instance.loads, dtype=np.float64),
                caps=np.asarray(self.instance.caps, dtype=np.float64),
                unit_costs=np.asarray(self.instance.unit_costs, dtype=np.float64),
                price=self.instance.price,
                weights=np.asarray(self.instance.weights, dtype=np.float64),
                players=tuple(self.instance.players),
            )
        else:
            inst = make_grid_instance(
                self.n_buses, topology=self.topology, seed=self.instance_seed
            )
        if self.algo == "pua":
            algo = PUA()
        elif self.algo == "pda":
            algo = PDA()
        else:
            algo = RUA(self.algo.epsilon)
        return inst, algo


class DmlInline(_Model):
    features: list[list[list[float]]]
    targets: list[list[float]]
    beta: float = 0.1


class DmlGameSpec(_Model):
    type: Literal["dml"]
    n_nodes: int | None = None
    dim: int = 2
    n_samples: int = 12
    instance_seed: int = 0
    noise: float = 0.1
    spread: float = 0.5
    beta: float = 0.1
    instance: DmlInline | None = None
    inner_iters: int = 500
    outer_rate: float = 0.1
    inner_rate: float | None = None

    def build(self) -> DmlInstance:
        if (self.n_nodes is None) == (self.instance is None):
            raise GameError("give exactly one of n_nodes (generator) or instance (inline)")
        if self.instance is not None:
            return DmlInstance(
                features=tuple(
                    np.asarray(X, dtype=np.float64) for X in self.instance.features
                ),
                targets=tuple(
                    np.asarray(y, dtype=np.float64) for y in self.instance.targets
                ),
                beta=self.instance.beta,
            )
        return make_dml_instance(
            self.n_nodes,
            dim=self.dim,
            n_samples=self.n_samples,
            seed=self.instance_seed,
            noise=self.noise,
            spread=self.spread,
            beta=self.beta,
        )


GameSpec = Annotated[
    Union[FiniteGameSpec, GeneratorGameSpec, RoutingGameSpec, GridGameSpec, DmlGameSpec],
    Field(discriminator="type"),
]


class OutputSpec(_Model):
    directory: str = "."
    prefix: str = "run"


class ExperimentConfig(_Model):
    game: GameSpec
    learners: list[LearnerSpec] | None = None
    feedback: FeedbackSpec | None = None
    rounds: int = Field(ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator("learners", mode="before")
    @classmethod
    def _single_block_as_list(cls, value):
        # one learner block (no list) means "the same learner for every player"
        return [value] if isinstance(value, dict) else value

    @property
    def is_netapp(self) -> bool:
        return self.game.type in ("routing", "grid", "dml")

    def learner_configs(self) -> list[LearnerConfig]:
        return [spec.build() for spec in self.learners]

    def feedback_setup(self, n_players: int) -> FeedbackSetup:
        spec = self.feedback if self.feedback is not None else FeedbackSpec()
        return spec.build(n_players)

    def echo(self) -> dict:
        """The effective configuration as a JSON document, defaults filled."""
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)

    def config_hash(self) -> str:
        canon = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing and cross-validation
# ---------------------------------------------------------------------------


def _path(loc: tuple) -> str:
    return "$." + ".".join(str(part) for part in loc) if loc else "$"


def _normalize(cfg: ExperimentConfig, n_players: int | None) -> None:
    """Fill echoed defaults in place: expanded learner list, feedback block."""
    if cfg.learners is not None:
        specs = [spec.filled() for spec in cfg.learners]
        if len(specs) == 1 and n_players is not None:
            specs = specs * n_players
        cfg.learners = specs
    if not cfg.is_netapp and cfg.feedback is None:
        cfg.feedback = FeedbackSpec()


def _cross_validate(cfg: ExperimentConfig) -> list[str]:
    violations: list[str] = []
    game = None

    if isinstance(cfg.game, FiniteGameSpec):
        if cfg.game.players != len(cfg.game.actions):
            violations.append(
                f"$.game.actions: players = {cfg.game.players} but "
                f"{len(cfg.game.actions)} action counts given"
            )
        elif len(cfg.game.payoffs) != cfg.game.players:
            violations.append(
                f"$.game.payoffs: expected {cfg.game.players} payoff lists, "
                f"got {len(cfg.game.payoffs)}"
            )
        else:
            expected = int(np.prod(cfg.game.actions, dtype=np.int64))
            for i, flat in enumerate(cfg.game.payoffs):
                if len(flat) != expected:
                    violations.append(
                        f"$.game.payoffs.{i}: has {len(flat)} entries, expected "
                        f"prod(actions) = {expected}"
                    )
    elif isinstance(cfg.game, GeneratorGameSpec) and cfg.game.name not in GENERATORS:
        violations.append(
            f"$.game.name: unknown game generator {cfg.game.name!r} "
            f"(known: {', '.join(sorted(GENERATORS))})"
        )
    if not violations:
        try:
            game = cfg.game.build()
        except TypeError as exc:
            violations.append(f"$.game.params: {exc}")
        except GameError as exc:
            violations.append(f"$.game: {exc}")

    if cfg.game.type in ("finite", "generator"):
        _check_players(cfg, game, violations)
    elif cfg.game.type == "routing":
        _check_routing(cfg, violations)
    else:
        if cfg.learners is not None:
            violations.append(
                f"$.learners: {cfg.game.type} games run their own update "
                "scheme; no learner configuration applies"
            )
        if cfg.feedback is not None:
            violations.append(
                f"$.feedback: {cfg.game.type} games fix their own feedback structure"
            )
        if cfg.game.type == "dml" and cfg.rounds < 1:
            violations.append("$.rounds: the two-layer run needs at least one outer iteration")
    return violations


def _check_players(cfg: ExperimentConfig, game, violations: list[str]) -> None:
    if cfg.learners is None:
        violations.append("$.learners: required for finite games (one per player)")
        return
    specs = cfg.learners
    if game is not None and len(specs) not in (1, game.n_players):
        violations.append(
            f"$.learners: {len(specs)} learner configs for {game.n_players} players"
        )
        return
    configs = []
    for i, spec in enumerate(specs):
        label = f"$.learners.{i}"
        if spec.type in CONTINUOUS_KINDS:
            violations.append(
                f"{label}.type: learner {spec.type!r} plays continuous games; "
                "this game is finite"
            )
            continue
        try:
            configs.append(spec.build())
        except (LearnerError, GameError) as exc:
            violations.append(f"{label}: {exc}")
    if violations or game is None:
        return
    if len(configs) == 1:
        configs = configs * game.n_players
    try:
        feedback = cfg.feedback_setup(game.n_players)
    except GameError as exc:
        violations.append(f"$.feedback: {exc}")
        return
    try:
        _validate_run(game, configs, cfg.rounds, cfg.seed, feedback)
    except (LearnerError, GameError) as exc:
        violations.append(f"$.learners: {exc}")


def _check_routing(cfg: ExperimentConfig, violations: list[str]) -> None:
    if cfg.feedback is not None:
        violations.append(
            "$.feedback: the routing runner fixes bandit (individual) feedback"
        )
    if cfg.learners is None:
        return
    if len(cfg.learners) != 1:
        violations.append(
            "$.learners: routing takes one learner block, applied to both sides"
        )
        return
    spec = cfg.learners[0]
    if spec.type != "sbr":
        violations.append("$.learners.0.type: secure routing runs smoothed best response")
        return
    try:
        spec.build()
    except (LearnerError, GameError) as exc:
        violations.append(f"$.learners.0: {exc}")


def parse_config(document: str) -> ExperimentConfig:
    """Parse and fully validate a JSON experiment document.

    Raises ConfigError carrying *every* violation found — structural schema
    errors, unknown learner or game types, and dimension mismatches — each
    prefixed with the JSON path that caused it.
    """
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"$: malformed JSON: {exc}"]) from exc
    try:
        cfg = ExperimentConfig.model_validate(obj)
    except ValidationError as exc:
        raise ConfigError(
            [f"{_path(err['loc'])}: {err['msg']}" for err in exc.errors()]
        ) from exc
    violations = _cross_validate(cfg)
    if violations:
        raise ConfigError(violations)
    n_players = None
    if cfg.game.type in ("finite", "generator"):
        n_players = cfg.game.build().n_players
    _normalize(cfg, n_players)
    return cfg
