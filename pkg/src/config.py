import os
import io
import logging
import configparser
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

from src.exceptions import ConfigError

# Load environment variables from .env file
load_dotenv()


class Config:
    """Process-level configuration read from the environment."""

    PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

    # Logging
    LOG_LEVEL = os.environ.get("PVIC_LOG_LEVEL", "INFO")

    # File Storage
    DATA_DIR = os.environ.get("PVIC_DATA_DIR", os.path.join(PROJECT_ROOT, "data"))
    RUNS_DIR = os.path.join(PROJECT_ROOT, "runs")
    DEFAULT_CONFIG = os.path.join(PROJECT_ROOT, "configs", "synthetic.ini")

    @staticmethod
    def seed_override() -> Optional[int]:
        """PVIC_SEED, read at call time so it also applies to already-imported modules."""
        raw = os.environ.get("PVIC_SEED")
        if raw is None or raw.strip() == "":
            return None
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"PVIC_SEED must be an integer, got {raw!r}") from None

    @classmethod
    def validate_env_vars(cls):
        """Validate the optional environment variables."""
        if cls.LOG_LEVEL.upper() not in logging._nameToLevel:
            logging.warning(f"Unknown PVIC_LOG_LEVEL {cls.LOG_LEVEL!r}; falling back to INFO")
            cls.LOG_LEVEL = "INFO"
        cls.seed_override()
        logging.debug("Environment validation completed.")

    @classmethod
    def setup_directories(cls, *directories: str):
        """Create the given output directories if they don't exist."""
        for directory in directories:
            if directory:
                os.makedirs(directory, exist_ok=True)

    @classmethod
    def setup_logging(cls):
        """Configure logging."""
        logging.basicConfig(
            level=getattr(logging, cls.LOG_LEVEL.upper(), logging.INFO),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )


# Run configuration sections. Field defaults fix each key's type.

PE_MODES = ("none", "additive", "concat", "concat_modulated")
SWITCHES = ("on", "off")
FEATURE_HEADS = ("off", "window")
LOSS_NORMS = ("positives", "pairs")
ACTIVATIONS = ("relu", "leaky_relu")


@dataclass
class SinusoidConfig:
    d: int = 128
    tau: float = 20.0


@dataclass
class DecoderConfig:
    d_model: int = 256
    n_layers: int = 2
    n_heads: int = 8
    window: int = 8
    ffn_hidden: int = 1024
    activation: str = "relu"
    ln_eps: float = 1e-5
    in_channels: int = 0  # 0 means d_model

    @property
    def channels(self) -> int:
        return self.in_channels or self.d_model


@dataclass
class PairingConfig:
    score_thresh: float = 0.05
    min_n: int = 3
    max_n: int = 15
    human_class: int = 0
    log_spatial: bool = True

    @property
    def spatial_dim(self) -> int:
        return 36 if self.log_spatial else 18


@dataclass
class FocalConfig:
    alpha: float = 0.5
    gamma: float = 0.1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 30
    lr_drop_epoch: int = 20
    lr_drop_factor: float = 5.0
    batch_size: int = 4
    seed: int = 0
    init_std: float = 0.02
    pe_mode: str = "concat_modulated"
    cross_attn: str = "on"
    self_attn: str = "on"
    feature_head: str = "window"
    loss_norm: str = "positives"


@dataclass
class InferenceConfig:
    fusion_lambda: float = 0.26
    iou_thresh: float = 0.5


@dataclass
class SynthConfig:
    n_obj_classes: int = 6
    n_actions: int = 8
    n_geometry_actions: int = 4
    rare_actions: str = "7"
    rare_weight: float = 0.05
    rare_threshold: int = 10
    n_train: int = 2000
    n_test: int = 500
    height: int = 16
    width: int = 16
    stride: int = 32
    box_noise: float = 0.02
    score_noise: float = 0.1
    feature_noise: float = 0.1
    n_distractors: int = 2
    interact_prob: float = 0.75
    seed: int = 0

    @property
    def n_blob_actions(self) -> int:
        return self.n_actions - self.n_geometry_actions

    @property
    def rare_action_ids(self) -> Tuple[int, ...]:
        return tuple(int(a) for a in self.rare_actions.replace(" ", "").split(",") if a)


@dataclass
class PathsConfig:
    dataset: str = ""
    output: str = ""
    checkpoint: str = ""


SECTIONS = {
    "sinusoid": SinusoidConfig,
    "decoder": DecoderConfig,
    "pairing": PairingConfig,
    "focal": FocalConfig,
    "train": TrainConfig,
    "inference": InferenceConfig,
    "synth": SynthConfig,
    "paths": PathsConfig,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(section: str, key: str, raw: Any, default: Any) -> Any:
    """Convert a raw value to the type of the field default."""
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(
            f"[{section}] {key}: cannot read {raw!r} as {type(default).__name__}"
        ) from None


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    """Every hyperparameter and path of one run, one dataclass per INI section."""

    sinusoid: SinusoidConfig = field(default_factory=SinusoidConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    pairing: PairingConfig = field(default_factory=PairingConfig)
    focal: FocalConfig = field(default_factory=FocalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @classmethod
    def from_string(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
        config = cls()
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            current = getattr(config, section)
            known = {f.name for f in fields(current)}
            updates = {}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                updates[key] = _coerce(section, key, raw, getattr(current, key))
            setattr(config, section, replace(current, **updates))
        return config

    @classmethod
    def load(cls, path: Optional[str] = None, apply_env: bool = True) -> "RunConfig":
        """Read a config file (defaults when `path` is None), apply PVIC_SEED, validate."""
        if path is None:
            config = cls()
        else:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    text = f.read()
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from None
            config = cls.from_string(text)
        if apply_env:
            config = config.with_env_overrides()
        config.validate()
        return config

    def to_string(self) -> str:
        out = io.StringIO()
        for name in SECTIONS:
            out.write(f"[{name}]\n")
            for key, value in asdict(getattr(self, name)).items():
                out.write(f"{key} = {_format(value)}\n")
            out.write("\n")
        return out.getvalue()

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, Any]]) -> "RunConfig":
        config = cls()
        for section, values in data.items():
            config = config.with_overrides({(section, key): value for key, value in values.items()})
        return config

    def with_overrides(self, overrides: Dict[Tuple[str, str], Any]) -> "RunConfig":
        """Return a copy with `{(section, key): value}` applied (values are coerced)."""
        config = replace(self)
        for (section, key), value in overrides.items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            current = getattr(config, section)
            if key not in {f.name for f in fields(current)}:
                raise ConfigError(f"unknown config key [{section}] {key}")
            setattr(config, section, replace(current, **{key: _coerce(section, key, value, getattr(current, key))}))
        return config

    def with_env_overrides(self) -> "RunConfig":
        seed = Config.seed_override()
        if seed is None:
            return self
        logging.getLogger(__name__).info(f"PVIC_SEED={seed} overrides train.seed and synth.seed")
        return self.with_overrides({("train", "seed"): seed, ("synth", "seed"): seed})

    def validate(self):
        """Raise ConfigError on any inconsistent setting."""
        s, dec, pair, foc, tr, inf, syn = (
            self.sinusoid, self.decoder, self.pairing, self.focal,
            self.train, self.inference, self.synth,
        )
        problems = []
        if s.d <= 0 or s.d % 2:
            problems.append(f"sinusoid.d must be a positive even integer, got {s.d}")
        if s.tau <= 0:
            problems.append(f"sinusoid.tau must be positive, got {s.tau}")
        if dec.d_model <= 0 or dec.d_model % 4:
            problems.append(f"decoder.d_model must be a positive multiple of 4, got {dec.d_model}")
        if dec.n_heads <= 0 or dec.d_model % dec.n_heads:
            problems.append(f"decoder.d_model {dec.d_model} must be divisible by n_heads {dec.n_heads}")
        if dec.n_heads > 0 and (2 * s.d) % dec.n_heads:
            problems.append(f"box embedding width {2 * s.d} must be divisible by n_heads {dec.n_heads}")
        if dec.n_layers < 0:
            problems.append(f"decoder.n_layers must be >= 0, got {dec.n_layers}")
        if dec.window < 1:
            problems.append(f"decoder.window must be >= 1, got {dec.window}")
        if dec.ffn_hidden < 1:
            problems.append(f"decoder.ffn_hidden must be >= 1, got {dec.ffn_hidden}")
        if dec.activation not in ACTIVATIONS:
            problems.append(f"decoder.activation must be one of {ACTIVATIONS}, got {dec.activation!r}")
        if dec.ln_eps <= 0:
            problems.append("decoder.ln_eps must be positive")
        if dec.in_channels < 0:
            problems.append("decoder.in_channels must be >= 0")
        if not 0.0 <= pair.score_thresh <= 1.0:
            problems.append("pairing.score_thresh must lie in [0, 1]")
        if pair.min_n < 0 or pair.max_n < 1 or pair.min_n > pair.max_n:
            problems.append(f"pairing needs 0 <= min_n <= max_n, got {pair.min_n}/{pair.max_n}")
        if not 0.0 <= foc.alpha <= 1.0:
            problems.append(f"focal.alpha must lie in [0, 1], got {foc.alpha}")
        if foc.gamma < 0:
            problems.append(f"focal.gamma must be >= 0, got {foc.gamma}")
        if tr.lr < 0:
            problems.append(f"train.lr must be >= 0, got {tr.lr}")
        if tr.weight_decay < 0:
            problems.append("train.weight_decay must be >= 0")
        if tr.epochs < 0 or tr.batch_size < 1:
            problems.append("train.epochs must be >= 0 and train.batch_size >= 1")
        if tr.lr_drop_factor <= 0:
            problems.append("train.lr_drop_factor must be positive")
        if tr.seed < 0 or syn.seed < 0:
            problems.append("seeds must be non-negative")
        if tr.pe_mode not in PE_MODES:
            problems.append(f"train.pe_mode must be one of {PE_MODES}, got {tr.pe_mode!r}")
        if tr.pe_mode == "additive" and 2 * s.d != dec.d_model:
            problems.append(f"additive positional embeddings need 2*sinusoid.d == d_model ({2 * s.d} != {dec.d_model})")
        for key in ("cross_attn", "self_attn"):
            if getattr(tr, key) not in SWITCHES:
                problems.append(f"train.{key} must be one of {SWITCHES}")
        if tr.feature_head not in FEATURE_HEADS:
            problems.append(f"train.feature_head must be one of {FEATURE_HEADS}")
        if tr.loss_norm not in LOSS_NORMS:
            problems.append(f"train.loss_norm must be one of {LOSS_NORMS}")
        if not 0.0 <= inf.fusion_lambda <= 1.0:
            problems.append(f"inference.fusion_lambda must lie in [0, 1], got {inf.fusion_lambda}")
        if not 0.0 <= inf.iou_thresh < 1.0:
            problems.append("inference.iou_thresh must lie in [0, 1)")
        if syn.n_obj_classes < 2:
            problems.append("synth.n_obj_classes must be >= 2 (class 0 is the human)")
        if not 1 <= syn.n_geometry_actions < syn.n_actions:
            problems.append("synth needs 1 <= n_geometry_actions < n_actions")
        try:
            rare = syn.rare_action_ids
        except ValueError:
            rare = ()
            problems.append(f"synth.rare_actions must be a comma-separated list of ints, got {syn.rare_actions!r}")
        if any(not 0 <= a < syn.n_actions for a in rare):
            problems.append("synth.rare_actions out of range")
        if syn.height < 1 or syn.width < 1 or syn.stride < 1:
            problems.append("synth map size and stride must be >= 1")
        if syn.n_train < 0 or syn.n_test < 0 or syn.n_distractors < 0:
            problems.append("synth counts must be >= 0")
        if min(syn.box_noise, syn.score_noise, syn.feature_noise) < 0 or syn.score_noise > 1:
            problems.append("synth noise levels must be >= 0 (score_noise <= 1)")
        if not 0.0 <= syn.interact_prob <= 1.0 or not 0.0 < syn.rare_weight <= 1.0:
            problems.append("synth.interact_prob must lie in [0, 1] and rare_weight in (0, 1]")
        if problems:
            raise ConfigError("; ".join(problems))
