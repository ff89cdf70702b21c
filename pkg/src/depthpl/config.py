"""Run configuration: flat key=value files with '#' comments, one pair per
line, validated against a closed key table. Defaults carry the published
training settings; any file either yields a fully valid RunConfig or a
line-numbered ConfigError.
"""

from dataclasses import dataclass, fields

import numpy as np

from .geometry import CameraModel
from .losses import LossWeights


class ConfigError(ValueError):
    pass


def derive_seed(root, *labels):
    """Stable per-stage seed: fold string labels into the root via FNV-1a.

    Every random draw in the pipeline flows from the run seed through this,
    so stages can be re-run independently yet reproducibly.
    """
    h = 1469598103934665603
    for token in (str(root),) + tuple(str(l) for l in labels):
        for byte in token.encode():
            h = ((h ^ byte) * 1099511628211) % (1 << 64)
    return h & 0x7FFFFFFFFFFFFFFF


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit(x):
    return 0 <= x <= 1


def _unit_open(x):
    return 0 < x <= 1


# name -> (type, default, predicate, description of the accepted range)
KEY_TABLE = {
    "seed":            (int, 0, _nonneg, ">= 0"),
    "mode":            (str, "single", lambda v: v in ("single", "stereo"), "single|stereo"),
    "width":           (int, 192, lambda v: v >= 16 and v % 16 == 0, "multiple of 16"),
    "height":          (int, 64, lambda v: v >= 16 and v % 16 == 0, "multiple of 16"),
    "f":               (float, 725.0, _positive, "> 0"),
    "o_x":             (float, None, None, "0 <= o_x < width (default: center)"),
    "o_y":             (float, None, None, "0 <= o_y < height (default: center)"),
    "epsilon":         (float, 40.0, _nonneg, ">= 0"),
    "depth_scale":     (float, 1.0 / 80.0, _positive, "> 0"),
    "d_min":           (float, 1.0, _positive, "> 0"),
    "d_max":           (float, 80.0, _positive, "> 0"),
    "baseline":        (float, 0.54, _positive, "> 0"),
    "lambda_task":     (float, 100.0, _nonneg, ">= 0"),
    "lambda_sm":       (float, 0.1, _nonneg, ">= 0"),
    "lambda_cons":     (float, 1.0, _nonneg, ">= 0"),
    "lambda_comp":     (float, 0.1, _nonneg, ">= 0"),
    "lambda_tgc":      (float, 50.0, _nonneg, ">= 0"),
    "alpha":           (float, 0.7, _unit, "in [0, 1]"),
    "eta":             (float, 0.85, _nonneg, ">= 0"),
    "mu":              (float, 0.15, _nonneg, ">= 0"),
    "tau":             (float, 0.5, _positive, "> 0"),
    "learning_rate":   (float, 1e-4, _positive, "> 0"),
    "learning_rate_completion": (float, 0.0, _nonneg, ">= 0 (0 = inherit learning_rate)"),
    "learning_rate_stage2": (float, 0.0, _nonneg, ">= 0 (0 = inherit learning_rate)"),
    "decay_start":     (int, 10, _nonneg, ">= 0"),
    "epochs_stage1":   (int, 20, _positive, ">= 1"),
    "epochs_stage2":   (int, 10, _positive, ">= 1"),
    "epochs_completion": (int, 20, _positive, ">= 1"),
    "epochs_stereo_extra": (int, 10, _positive, ">= 1"),
    "batch_size":      (int, 4, _positive, ">= 1"),
    "stylized_copies_per_source": (int, 3, _positive, ">= 1"),
    "sample_ratio":    (float, 0.25, _unit_open, "in (0, 1]"),
    "feature_dim":     (int, 256, lambda v: v >= 8, ">= 8"),
    "n_source":        (int, 20, _positive, ">= 1"),
    "n_target":        (int, 20, _positive, ">= 1"),
    "n_eval":          (int, 6, _positive, ">= 1"),
    "pseudo_mode":     (str, "full", lambda v: v in ("cons", "full"), "cons|full"),
    "eval_cap":        (float, 80.0, _positive, "> 0"),
}


@dataclass
class RunConfig:
    seed: int
    mode: str
    width: int
    height: int
    f: float
    o_x: float
    o_y: float
    epsilon: float
    depth_scale: float
    d_min: float
    d_max: float
    baseline: float
    lambda_task: float
    lambda_sm: float
    lambda_cons: float
    lambda_comp: float
    lambda_tgc: float
    alpha: float
    eta: float
    mu: float
    tau: float
    learning_rate: float
    learning_rate_completion: float
    learning_rate_stage2: float
    decay_start: int
    epochs_stage1: int
    epochs_stage2: int
    epochs_completion: int
    epochs_stereo_extra: int
    batch_size: int
    stylized_copies_per_source: int
    sample_ratio: float
    feature_dim: int
    n_source: int
    n_target: int
    n_eval: int
    pseudo_mode: str
    eval_cap: float

    def camera(self):
        return CameraModel(f=self.f, o_x=self.o_x, o_y=self.o_y,
                           epsilon=self.epsilon, depth_scale=self.depth_scale,
                           width=self.width, height=self.height)

    def weights(self):
        return LossWeights(lambda_task=self.lambda_task, lambda_sm=self.lambda_sm,
                           lambda_cons=self.lambda_cons, lambda_comp=self.lambda_comp,
                           lambda_tgc=self.lambda_tgc, alpha=self.alpha,
                           eta=self.eta, mu=self.mu, tau=self.tau)

    def completion_k(self):
        return max(1, int(round(1.0 / self.sample_ratio)))

    def completion_lr(self):
        return self.learning_rate_completion or self.learning_rate

    def stage2_lr(self):
        return self.learning_rate_stage2 or self.learning_rate

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _convert(key, raw, where):
    typ = KEY_TABLE[key][0]
    try:
        if typ is int:
            val = int(raw)
        elif typ is float:
            val = float(raw)
            if not np.isfinite(val):
                raise ValueError
        else:
            val = raw
    except ValueError:
        raise ConfigError(f"{where}: value {raw!r} for key '{key}' is not a valid "
                          f"{typ.__name__}") from None
    pred, desc = KEY_TABLE[key][2], KEY_TABLE[key][3]
    if pred is not None and not pred(val):
        raise ConfigError(f"{where}: key '{key}' = {raw} out of range (expected {desc})")
    return val


def parse_config_text(text, source="<config>"):
    """Parse key=value lines into a validated {key: value} dict."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in KEY_TABLE:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = _convert(key, raw, f"{source}:{lineno}")
    return values


def load_config(path=None, overrides=(), seed=None):
    """Build a RunConfig from defaults, an optional file, --set overrides,
    and an optional seed override (in that precedence order)."""
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values = parse_config_text(text, source=str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set override {item!r} must be key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in KEY_TABLE:
            raise ConfigError(f"--set: unknown key '{key}'")
        values[key] = _convert(key, raw, "--set")
    merged = {k: (values[k] if k in values else spec[1]) for k, spec in KEY_TABLE.items()}
    if seed is not None:
        merged["seed"] = int(seed)
    if merged["o_x"] is None:
        merged["o_x"] = merged["width"] / 2.0
    if merged["o_y"] is None:
        merged["o_y"] = merged["height"] / 2.0
    cfg = RunConfig(**merged)
    if not 0 <= cfg.o_x < cfg.width:
        raise ConfigError(f"o_x = {cfg.o_x} outside [0, width)")
    if not 0 <= cfg.o_y < cfg.height:
        raise ConfigError(f"o_y = {cfg.o_y} outside [0, height)")
    if cfg.d_min >= cfg.d_max:
        raise ConfigError(f"d_min = {cfg.d_min} must be below d_max = {cfg.d_max}")
    return cfg
