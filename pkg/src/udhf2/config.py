"""Flat key=value run configuration with validation and echo."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError


def _parse_bool(s):
    t = s.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    return tuple(int(p) for p in s.split(","))


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 64
    num_classes: int = 6
    channels: tuple = (16, 32, 64, 128)
    window: int = 4
    heads: int = 2
    groups: int = 2
    points: int = 9
    ffn_expansion: int = 2
    blocks_per_stage: int = 2
    decoder: str = "fusion"
    stationary_only: bool = False
    non_stationary_only: bool = False
    disable_mudm: bool = False
    hftm_vs_plain: bool = False
    difference_architecture: bool = False
    fully_shared_siamese: bool = False
    rho: float = 0.7
    buffer_radius: int = 2
    diffusion_steps: int = 50
    mu_min: float = 1e-4
    mu_max: float = 0.02
    time_emb_channels: int = 8
    gamma: float = 0.5
    omega: float = 0.5
    cd_g: float = 0.5
    cd_lambda: float = 0.5
    cd_refine_lambda: float = 0.5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    batch_size: int = 4
    steps: int = 2000
    stage2_steps: int = 800
    num_scenes: int = 8
    stage1_target: float = 0.0
    mixed_pixel: bool = True
    occlusion: bool = True
    registration: bool = True
    random_scaling: bool = False
    random_flip: bool = False

    def domains(self):
        """Active frequency domains in fixed order (non-stationary first)."""
        if self.non_stationary_only:
            return ("non_stationary",)
        if self.stationary_only:
            return ("stationary",)
        return ("non_stationary", "stationary")

    def validate(self):
        c = self
        checks = [
            (len(c.channels) == 4 and all(isinstance(v, int) and v > 0 for v in c.channels),
             "channels must be 4 positive integers"),
            (c.image_size % 32 == 0 and c.image_size > 0, "image_size must be a positive multiple of 32"),
            (c.num_classes >= 2, "num_classes must be >= 2"),
            (c.window >= 1, "window must be >= 1"),
            (c.heads >= 1, "heads must be >= 1"),
            (c.groups >= 1, "groups must be >= 1"),
            (c.points >= 1 and int(round(c.points ** 0.5)) ** 2 == c.points,
             "points must be a positive perfect square (grid of sampling offsets)"),
            (c.ffn_expansion >= 1, "ffn_expansion must be >= 1"),
            (c.blocks_per_stage >= 1, "blocks_per_stage must be >= 1"),
            (c.decoder in ("fusion", "plain"), "decoder must be 'fusion' or 'plain'"),
            (not (c.stationary_only and c.non_stationary_only),
             "stationary_only and non_stationary_only are mutually exclusive"),
            (0.0 <= c.rho <= 1.0, "rho must be in [0,1]"),
            (c.buffer_radius >= 0, "buffer_radius must be >= 0"),
            (c.diffusion_steps >= 1, "diffusion_steps must be >= 1"),
            (0.0 < c.mu_min <= c.mu_max < 1.0, "need 0 < mu_min <= mu_max < 1"),
            (c.time_emb_channels >= 2 and c.time_emb_channels % 2 == 0,
             "time_emb_channels must be a positive even number"),
            (0.0 <= c.gamma <= 1.0, "gamma must be in [0,1]"),
            (0.0 <= c.omega <= 1.0, "omega must be in [0,1]"),
            (0.0 <= c.cd_g <= 1.0, "cd_g must be in [0,1]"),
            (0.0 <= c.cd_lambda <= 1.0, "cd_lambda must be in [0,1]"),
            (0.0 <= c.cd_refine_lambda <= 1.0, "cd_refine_lambda must be in [0,1]"),
            (c.lr >= 0, "lr must be >= 0"),
            (0.0 <= c.beta1 < 1.0 and 0.0 <= c.beta2 < 1.0, "betas must be in [0,1)"),
            (c.weight_decay >= 0, "weight_decay must be >= 0"),
            (c.adam_eps > 0, "adam_eps must be > 0"),
            (c.batch_size >= 1, "batch_size must be >= 1"),
            (c.steps >= 1, "steps must be >= 1"),
            (c.stage2_steps >= 1, "stage2_steps must be >= 1"),
            (c.num_scenes >= 1, "num_scenes must be >= 1"),
            (0.0 <= c.stage1_target <= 1.0, "stage1_target must be in [0,1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for ch in c.channels:
            if ch % c.heads:
                raise ConfigError(f"channel width {ch} not divisible by heads={c.heads}")
            if ch % c.groups:
                raise ConfigError(f"channel width {ch} not divisible by groups={c.groups}")
        return self


_PARSERS = {int: int, float: float, bool: _parse_bool, str: str, tuple: _parse_int_list}


def _field_types():
    out = {}
    for f in fields(RunConfig):
        out[f.name] = f.type if isinstance(f.type, type) else {"int": int, "float": float,
                                                               "bool": bool, "str": str,
                                                               "tuple": tuple}[f.type]
    return out


def parse_config(text):
    """Parse flat key=value lines ('#' comments allowed) into a validated RunConfig."""
    types = _field_types()
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = _PARSERS[types[key]](value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {e}") from None
        setattr(cfg, key, parsed)
    try:
        cfg.validate()
    except ConfigError as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_text(cfg):
    """Echo the full effective configuration, one key per line, declaration order."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"
