"""Flat ``key = value`` run configuration with strict validation.

Keys mirror the tuned-hyperparameter names (``cl_lr``, ``t_lr``, ``tau``,
``lambda`` ...). ``lambd`` is accepted as an alias of ``lambda``. Unknown keys
are rejected so a typo cannot silently fall back to a default. ``#`` and ``;``
start comments.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .augment import AugmentConfig
from .pretrain import PretrainConfig
from .transformer import ZayanTConfig

_SECTION = "run"
ALIASES = {"lambd": "lambda"}
# config keys that are not valid python identifiers
_KEY_TO_FIELD = {"lambda": "lambd"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
HASH_EXCLUDED = ("out",)


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class RunConfig:
    data: str = ""
    label: str = "-1"
    out: str = "runs/default"
    seed: int = 0
    folds: int = 5
    impute: bool = False
    # contrastive pretraining
    cl_lr: float = 1e-3
    cl_weight_decay: float = 1e-4
    cl_epochs: int = 100
    cl_batch_size: int = 128
    cl_dropout: float = 0.1
    emb_dim: int = 64
    hidden_dim: int = 256
    tau: float = 0.5
    lambd: float = 2.0
    include_positive_in_denominator: bool = False
    # augmentations
    sigma: float = 0.1
    mask_prob: float = 0.2
    warp_jitter: float = 0.1
    use_noise: bool = True
    use_warp: bool = True
    use_mask: bool = True
    # transformer
    t_lr: float = 1e-3
    t_weight_decay: float = 1e-4
    t_epochs: int = 100
    t_dropout: float = 0.1
    batch_size: int = 32
    nhead: int = 4
    num_layers: int = 2
    ff_dim: int | None = None
    gamma: float = 0.1
    finetune_encoder: bool = False
    ce_reduction: str = "mean"
    token_source: str = "sample"
    pos_init: str = "random"
    patience: int | None = None

    def __post_init__(self):
        validate(self)

    # -- derived configs -------------------------------------------------

    @property
    def effective_ff_dim(self) -> int:
        return self.hidden_dim if self.ff_dim is None else self.ff_dim

    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.sigma, self.mask_prob, self.warp_jitter, self.use_noise, self.use_warp, self.use_mask)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.cl_epochs, tau=self.tau, redundancy_weight=self.lambd, lr=self.cl_lr,
            weight_decay=self.cl_weight_decay, batch_size=self.cl_batch_size, emb_dim=self.emb_dim,
            hidden_dim=self.hidden_dim, dropout=self.cl_dropout, augment=self.augment(), seed=self.seed,
            include_positive_in_denominator=self.include_positive_in_denominator,
        )

    def transformer_config(self) -> ZayanTConfig:
        return ZayanTConfig(
            num_layers=self.num_layers, nhead=self.nhead, ff_dim=self.effective_ff_dim, dropout=self.t_dropout,
            gamma=self.gamma, lr=self.t_lr, weight_decay=self.t_weight_decay, epochs=self.t_epochs,
            batch_size=self.batch_size, finetune_encoder=self.finetune_encoder, ce_reduction=self.ce_reduction,
            token_source=self.token_source, pos_init=self.pos_init, patience=self.patience, seed=self.seed,
        )

    @property
    def label_column(self) -> str | int:
        try:
            return int(self.label)
        except ValueError:
            return self.label

    def replace(self, **changes) -> "RunConfig":
        changes = {_KEY_TO_FIELD.get(ALIASES.get(k, k), k): v for k, v in changes.items()}
        return dataclasses.replace(self, **changes)

    # -- serialization ---------------------------------------------------

    def to_items(self) -> dict[str, object]:
        return {_FIELD_TO_KEY.get(f.name, f.name): getattr(self, f.name) for f in fields(self)}

    def to_text(self, exclude=()) -> str:
        items = {k: v for k, v in self.to_items().items() if k not in exclude}
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(items.items()))

    def hash(self) -> str:
        """sha256 of the canonical text without the output directory."""
        return hashlib.sha256(self.to_text(exclude=HASH_EXCLUDED).encode()).hexdigest()


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, field_name: str, raw: str):
    kind = _FIELD_TYPES[field_name]
    text = raw.strip()
    optional = "None" in kind
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if kind.startswith("bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind.startswith("int"):
            f = float(text)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind.split(' ')[0]}") from None
    return text


def canonical_key(key: str) -> str:
    key = key.strip().lower().replace("-", "_")
    return ALIASES.get(key, key)


def parse_items(items: dict[str, str]) -> dict[str, object]:
    """Typed field values from raw string items; unknown keys raise :class:`ConfigError`."""
    out: dict[str, object] = {}
    seen: dict[str, str] = {}
    for raw_key, raw in items.items():
        key = canonical_key(raw_key)
        name = _KEY_TO_FIELD.get(key, key)
        if name not in _FIELD_TYPES:
            raise ConfigError(raw_key, "unknown configuration key")
        if name in seen:
            raise ConfigError(raw_key, f"given twice (also as {seen[name]!r})")
        seen[name] = raw_key
        out[name] = _convert(key, name, raw)
    return out


def parse_text(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";"),
        strict=True, delimiters=("=",),
    )
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(None, f"malformed config: {exc}") from None
    values = parse_items(dict(cp[_SECTION]))
    if overrides:
        values.update(parse_items(overrides))
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(None, str(exc)) from None


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(None, f"cannot read config {p}: {exc}") from None
    return parse_text(text, overrides)


def _check(ok: bool, key: str, message: str):
    if not ok:
        raise ConfigError(key, message)


def validate(c: RunConfig) -> None:
    for key in ("cl_lr", "t_lr", "tau"):
        _check(getattr(c, key) > 0, key, f"must be > 0, got {getattr(c, key)}")
    for key in ("cl_weight_decay", "t_weight_decay", "sigma", "warp_jitter", "gamma"):
        _check(getattr(c, key) >= 0, key, f"must be >= 0, got {getattr(c, key)}")
    _check(c.lambd >= 0, "lambda", f"must be >= 0, got {c.lambd}")
    _check(0 <= c.mask_prob < 1, "mask_prob", f"must be in [0, 1), got {c.mask_prob}")
    for key in ("cl_dropout", "t_dropout"):
        _check(0 <= getattr(c, key) < 1, key, f"must be in [0, 1), got {getattr(c, key)}")
    for key in ("emb_dim", "hidden_dim", "nhead", "cl_epochs", "t_epochs", "batch_size"):
        _check(getattr(c, key) >= 1, key, f"must be >= 1, got {getattr(c, key)}")
    _check(c.cl_batch_size >= 2, "cl_batch_size", f"must be >= 2, got {c.cl_batch_size}")
    _check(c.num_layers >= 1, "num_layers", f"must be >= 1, got {c.num_layers}")
    _check(c.emb_dim % c.nhead == 0, "nhead", f"must divide emb_dim={c.emb_dim}, got {c.nhead}")
    _check(c.folds >= 2, "folds", f"must be >= 2, got {c.folds}")
    _check(c.ff_dim is None or c.ff_dim >= 1, "ff_dim", f"must be >= 1, got {c.ff_dim}")
    _check(c.patience is None or c.patience >= 1, "patience", f"must be >= 1, got {c.patience}")
    _check(c.ce_reduction in ("mean", "sum"), "ce_reduction", f"must be mean or sum, got {c.ce_reduction!r}")
    _check(c.token_source in ("sample", "frozen"), "token_source", f"must be sample or frozen, got {c.token_source!r}")
    _check(c.pos_init in ("random", "from_z"), "pos_init", f"must be random or from_z, got {c.pos_init!r}")
    _check(c.seed >= 0, "seed", f"must be >= 0, got {c.seed}")
