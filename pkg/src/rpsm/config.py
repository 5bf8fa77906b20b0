"""Flat key=value run configuration.

A config file holds one ``key = value`` pair per line; blank lines and
``#`` comments are ignored.  The documented keys mirror ModelConfig and
TrainConfig.  Unknown keys are rejected, never silently ignored, so a
typo cannot change an experiment.  Command-line overrides use the same
keys and win over the file.
"""

from rpsm.model import ModelConfig
from rpsm.training import TrainConfig


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean, got %r" % raw)


def _parse_floats(raw):
    parts = [p for p in raw.replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


def _parse_preset(raw):
    low = raw.strip().lower()
    if low not in ("desk", "full"):
        raise ValueError("preset must be 'desk' or 'full', got %r" % raw)
    return low


# key -> (parser, which config it lands in)
KEYS = {
    "preset": (_parse_preset, "model"),
    "stages": (int, "model"),
    "clip_len": (int, "model"),
    "joints": (int, "model"),
    "share_recurrent": (_parse_bool, "model"),
    "share_2d": (_parse_bool, "model"),
    "lr": (float, "train"),
    "decay": (float, "train"),
    "alphas": (_parse_floats, "train"),
    "epochs": (int, "train"),
    "seed": (int, "train"),
    "scale_min": (float, "train"),
    "scale_max": (float, "train"),
    "augment": (_parse_bool, "train"),
    "eval_every": (int, "train"),
    "max_steps": (int, "train"),
}

# ModelConfig field names where they differ from the config key
MODEL_FIELDS = {
    "stages": "stages",
    "clip_len": "clip_len",
    "joints": "joints",
    "share_recurrent": "share_recurrent_across_stages",
    "share_2d": "share_all_2d_layers",
}


def parse_value(key, raw):
    """Parse one documented key's raw string; unknown keys raise."""
    if key not in KEYS:
        raise ValueError("unknown config key %r (known: %s)"
                         % (key, ", ".join(sorted(KEYS))))
    parser, _ = KEYS[key]
    try:
        return parser(raw)
    except ValueError as exc:
        raise ValueError("bad value for %r: %s" % (key, exc))


def load_config(path):
    """Read a key=value file into a dict of typed settings."""
    settings = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError("%s:%d: expected key = value, got %r"
                                 % (path, lineno, line.rstrip("\n")))
            key, raw = text.split("=", 1)
            key = key.strip()
            try:
                settings[key] = parse_value(key, raw.strip())
            except ValueError as exc:
                raise ValueError("%s:%d: %s" % (path, lineno, exc))
    return settings


def parse_overrides(pairs):
    """Parse repeated key=value override strings."""
    settings = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError("override must be key=value, got %r" % pair)
        key, raw = pair.split("=", 1)
        settings[key.strip()] = parse_value(key.strip(), raw.strip())
    return settings


def make_configs(settings):
    """Build (ModelConfig, TrainConfig) from merged settings."""
    model_kw = {}
    train_kw = {}
    for key, value in settings.items():
        _, target = KEYS[key]
        if target == "model":
            if key != "preset":
                model_kw[MODEL_FIELDS[key]] = value
        else:
            train_kw[key] = value
    preset = settings.get("preset", "desk")
    base = ModelConfig.full if preset == "full" else ModelConfig.desk
    return base(**model_kw), TrainConfig(**train_kw)
