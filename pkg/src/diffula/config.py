"""
Configuracoes e constantes do laboratorio.

Os valores padrao ficam como constantes de modulo e cada secao do arquivo
de configuracao vira uma dataclass congelada. Chaves desconhecidas sao
rejeitadas antes de qualquer trabalho comecar.
"""

import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

from src.diffula.errors import ConfigError

# Arquivo de configuracao usado quando --config nao e informado
DEFAULT_CONFIG_PATH = Path("configs/smoke.json")

# Variaveis de ambiente que sobrescrevem semente e diretorio de saida
ENV_SEED = "DIFFULA_SEED"
ENV_OUTPUT_DIR = "DIFFULA_OUTPUT_DIR"

# Imagens da vitima ficam em [0, 1]; o DDPM trabalha em [-1, 1]
PIXEL_RANGE: Tuple[float, float] = (0.0, 1.0)

SUPPORTED_ARCHITECTURES = ("small-cnn", "small-resnet")
DEFAULT_WIDTHS: Dict[str, int] = {
    "small-cnn": 4,
    "small-resnet": 16,
}

# Cronograma de ruido do DDPM (convencao linear 1e-4 -> 2e-2 em T=1000)
BETA_SCHEDULES = ("linear", "cosine")
DEFAULT_TIMESTEPS = 1000
BETA_START = 1e-4
BETA_END = 2e-2

# Transformacoes do augment (magnitudes conservadoras)
AUGMENT_DEFAULTS: Dict[str, float] = {
    "noise_sigma": 0.05,
    "brightness": 0.2,
    "contrast": 0.2,
    "saturation": 0.2,
    "perspective_scale": 0.3,
    "apply_probability": 0.5,
}

# Janela de Hamming assimetrica sobre a profundidade das camadas
WINDOW_DEFAULTS: Dict[str, float] = {
    "floor": 0.05,
    "left_width": 0.6,
    "right_width": 0.25,
}

# Cronograma de tempo 1000 -> 500 e de clipping 1.5 -> 1.0
TIME_SCHEDULE_START = 1000
TIME_SCHEDULE_END = 500
TIME_SCHEDULE_RIPPLES = 3
TIME_SCHEDULE_NOISE = 25.0
TIME_SCHEDULE_DEPTH = 1.0
ZETA_START = 1.5
ZETA_END = 1.0

DIFFULA_STEPS = 4000
INVERTING_STEPS = 24000
DENOISE_T_STAR = 200
TV_WEIGHT = 1e-2

# Limiar de "deteccao" do adaptador toy (maior posterior > 0.8)
DETECTION_THRESHOLD = 0.8

DISTANCES = ("cosine", "cosine-global", "euclidean")
ATTACK_MODES = ("diffula", "inverting")
LABEL_MODES = ("analytic", "provided")
ASSIGNMENT_BACKENDS = ("scipy", "scip", "gurobi")
TRACE_LEVELS = ("debug", "info", "warning")


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "small-cnn"
    input_shape: Tuple[int, int, int] = (1, 8, 8)
    num_classes: int = 2
    seed: int = 0
    width: Optional[int] = None
    hidden: int = 32

    def __post_init__(self) -> None:
        _check(len(self.input_shape) == 3, "input_shape must be (channels, height, width)")
        _check(self.num_classes >= 2, "num_classes must be at least 2")

    @property
    def resolved_width(self) -> int:
        return self.width if self.width is not None else DEFAULT_WIDTHS.get(self.architecture, 8)


@dataclass(frozen=True)
class CorpusConfig:
    num_users: int = 50
    images_per_user: int = 30
    # usuarios com tamanhos variados: N = images_per_user + U{-spread, spread}
    size_spread: int = 0
    image_shape: Tuple[int, int, int] = (3, 16, 16)
    shape_prob: float = 0.5
    palette_probs: Tuple[float, ...] = (0.4, 0.35, 0.25)
    scale_levels: int = 4
    noise_std: float = 0.03
    min_images: int = 30
    max_users: Optional[int] = 50
    seed: int = 0
    directory: Optional[str] = None

    def __post_init__(self) -> None:
        _check(self.num_users >= 1, "num_users must be positive")
        _check(self.images_per_user >= 1, "images_per_user must be positive")
        _check(0.0 <= self.shape_prob <= 1.0, "shape_prob must be in [0, 1]")
        _check(abs(sum(self.palette_probs) - 1.0) < 1e-6, "palette_probs must sum to 1")
        _check(self.scale_levels >= 2, "scale_levels must be at least 2")


@dataclass(frozen=True)
class CaptureConfig:
    batch_size: int = 30
    num_users: int = 20
    replicates: int = 1
    known_labels: bool = False
    label_mode: str = "analytic"

    def __post_init__(self) -> None:
        _check(self.batch_size >= 1, "batch_size must be positive")
        _check(self.label_mode in LABEL_MODES, f"label_mode must be one of {LABEL_MODES}")
        _check(
            self.label_mode != "provided" or self.known_labels,
            "label_mode 'provided' requires known_labels",
        )


@dataclass(frozen=True)
class PriorConfig:
    checkpoint: Optional[str] = None
    schedule: str = "linear"
    timesteps: int = DEFAULT_TIMESTEPS
    image_shape: Tuple[int, int, int] = (3, 32, 32)
    base_channels: int = 32
    channel_mults: Tuple[int, ...] = (1, 2, 2)
    epochs: int = 40
    batch_size: int = 64
    lr: float = 2e-3
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        _check(self.schedule in BETA_SCHEDULES, f"schedule must be one of {BETA_SCHEDULES}")
        _check(self.timesteps >= 1, "timesteps must be positive")
        _check(len(self.channel_mults) == 3, "the toy U-Net uses exactly 3 resolutions")
        _check(0.0 <= self.holdout_fraction < 1.0, "holdout_fraction must be in [0, 1)")


@dataclass(frozen=True)
class AdapterConfig:
    kind: str = "toy"
    checkpoint: Optional[str] = None
    epochs: int = 15
    batch_size: int = 64
    lr: float = 3e-3
    embed_dim: int = 32
    detection_threshold: float = DETECTION_THRESHOLD
    seed: int = 0


@dataclass(frozen=True)
class AugmentSpec:
    noise: bool = True
    noise_sigma: float = AUGMENT_DEFAULTS["noise_sigma"]
    color_jitter: bool = True
    brightness: float = AUGMENT_DEFAULTS["brightness"]
    contrast: float = AUGMENT_DEFAULTS["contrast"]
    saturation: float = AUGMENT_DEFAULTS["saturation"]
    perspective: bool = True
    perspective_scale: float = AUGMENT_DEFAULTS["perspective_scale"]
    blur: bool = True
    blur_kernel: int = 3
    blur_sigma: Tuple[float, float] = (0.1, 1.0)
    apply_probability: float = AUGMENT_DEFAULTS["apply_probability"]
    output_size: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        for name in ("noise_sigma", "brightness", "contrast", "saturation", "perspective_scale"):
            _check(getattr(self, name) >= 0.0, f"{name} must be nonnegative")
        _check(min(self.blur_sigma) >= 0.0, "blur_sigma must be nonnegative")
        _check(self.blur_sigma[0] <= self.blur_sigma[1], "blur_sigma must be (low, high)")
        _check(self.blur_kernel % 2 == 1, "blur_kernel must be odd")
        _check(0.0 <= self.apply_probability <= 1.0, "apply_probability must be in [0, 1]")

    @classmethod
    def identity(cls, output_size: Optional[Tuple[int, int]] = None) -> "AugmentSpec":
        return cls(
            noise=False,
            color_jitter=False,
            perspective=False,
            blur=False,
            output_size=output_size,
        )


@dataclass(frozen=True)
class WindowParams:
    floor: float = WINDOW_DEFAULTS["floor"]
    left_width: float = WINDOW_DEFAULTS["left_width"]
    right_width: float = WINDOW_DEFAULTS["right_width"]
    enabled: bool = True

    def __post_init__(self) -> None:
        _check(0.0 <= self.floor < 1.0, "floor must be in [0, 1)")
        _check(self.left_width > 0 and self.right_width > 0, "window widths must be positive")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    start_value: float
    end_value: float
    total_steps: int
    noise_halfwidth: float = 0.0
    ripples: int = TIME_SCHEDULE_RIPPLES
    modulation_depth: float = TIME_SCHEDULE_DEPTH
    seed: int = 0

    def __post_init__(self) -> None:
        _check(self.kind in ("time_cosine_linear", "zeta_cosine_ramp"), f"unknown schedule kind {self.kind!r}")
        _check(self.total_steps >= 1, "total_steps must be positive")
        _check(self.start_value >= self.end_value, "schedules must start above their end value")
        _check(self.noise_halfwidth >= 0.0, "noise_halfwidth must be nonnegative")
        _check(0.0 <= self.modulation_depth <= 1.0, "modulation_depth must be in [0, 1]")


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "diffula"
    steps: int = DIFFULA_STEPS
    lr: float = 0.05
    distance: str = "cosine"
    t_star: int = DENOISE_T_STAR
    seed: int = 0
    snapshot_every: int = 100
    time_start: int = TIME_SCHEDULE_START
    time_end: int = TIME_SCHEDULE_END
    time_noise_halfwidth: float = TIME_SCHEDULE_NOISE
    time_ripples: int = TIME_SCHEDULE_RIPPLES
    time_modulation_depth: float = TIME_SCHEDULE_DEPTH
    zeta_start: float = ZETA_START
    zeta_end: float = ZETA_END
    # "step": rampa pelo progresso da otimizacao; "timestep": zeta lido em tau_i
    zeta_indexing: str = "step"
    use_prior: bool = True
    window: WindowParams = field(default_factory=WindowParams)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    tv_weight: float = TV_WEIGHT
    optimizer: str = "adam"
    keep_updates: bool = False
    log_every: int = 100

    def __post_init__(self) -> None:
        _check(self.mode in ATTACK_MODES, f"mode must be one of {ATTACK_MODES}")
        _check(self.steps >= 1, "steps must be at least 1")
        _check(self.lr > 0, "lr must be positive")
        _check(self.distance in DISTANCES, f"distance must be one of {DISTANCES}")
        _check(self.t_star >= 0, "t_star must be nonnegative")
        _check(self.snapshot_every >= 1, "snapshot_every must be positive")
        _check(self.zeta_indexing in ("step", "timestep"), "zeta_indexing must be 'step' or 'timestep'")
        _check(self.optimizer in ("adam", "sgd"), "optimizer must be 'adam' or 'sgd'")
        _check(self.tv_weight >= 0, "tv_weight must be nonnegative")

    def time_schedule(self) -> ScheduleSpec:
        return ScheduleSpec(
            kind="time_cosine_linear",
            start_value=float(self.time_start),
            end_value=float(self.time_end),
            total_steps=self.steps,
            noise_halfwidth=self.time_noise_halfwidth,
            ripples=self.time_ripples,
            modulation_depth=self.time_modulation_depth,
            seed=self.seed,
        )

    def zeta_schedule(self) -> ScheduleSpec:
        return ScheduleSpec(
            kind="zeta_cosine_ramp",
            start_value=self.zeta_start,
            end_value=self.zeta_end,
            total_steps=self.steps,
            seed=self.seed,
        )


@dataclass(frozen=True)
class EvalConfig:
    assignment_backend: str = "scipy"
    max_pixel: float = 1.0

    def __post_init__(self) -> None:
        _check(
            self.assignment_backend in ASSIGNMENT_BACKENDS,
            f"assignment_backend must be one of {ASSIGNMENT_BACKENDS}",
        )
        _check(self.max_pixel > 0, "max_pixel must be positive")


@dataclass(frozen=True)
class RunConfig:
    output_dir: str = "runs"
    run_name: Optional[str] = None
    trace_level: str = "info"
    seed: int = 0
    workers: int = 1
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    victim: ModelSpec = field(default_factory=ModelSpec)
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        _check(self.trace_level in TRACE_LEVELS, f"trace_level must be one of {TRACE_LEVELS}")
        _check(self.workers >= 1, "workers must be at least 1")
        _check(
            tuple(self.corpus.image_shape) == tuple(self.victim.input_shape),
            "corpus.image_shape must match victim.input_shape",
        )
        _check(
            self.prior.image_shape[0] == self.victim.input_shape[0],
            "prior and victim must agree on the channel count",
        )
        _check(self.attack.t_star <= self.prior.timesteps, "attack.t_star must not exceed prior.timesteps")
        _check(self.attack.time_start <= self.prior.timesteps, "attack.time_start must not exceed prior.timesteps")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


T = TypeVar("T")


def _from_dict(cls: Type[T], raw: Any, where: str) -> T:
    """Constroi uma dataclass a partir de um dicionario, sem aceitar chaves extras."""
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")

    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in {where}: {', '.join(unknown)}")

    hints = typing.get_type_hints(cls)
    kwargs: Dict[str, Any] = {}
    for name, value in raw.items():
        hint = hints[name]
        if is_dataclass(hint):
            value = _from_dict(hint, value, f"{where}.{name}")
        elif isinstance(value, list):
            # JSON nao tem tupla
            value = tuple(value)
        kwargs[name] = value

    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def build_run_config(raw: Dict[str, Any]) -> RunConfig:
    """Valida e resolve um dicionario de configuracao completo."""
    return _from_dict(RunConfig, raw, "config")


def with_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Aplica sobrescritas de linha de comando (valores None sao ignorados)."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    attack_changes = {}
    if "mode" in changes:
        attack_changes["mode"] = changes.pop("mode")
    if "seed" in changes:
        attack_changes["seed"] = changes["seed"]
    try:
        if attack_changes:
            changes["attack"] = replace(config.attack, **attack_changes)
        return replace(config, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
