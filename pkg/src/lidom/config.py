"""One aggregate configuration for the whole pipeline, as key=value text.

Every tunable named by a stage config lives here under a dotted key
(``section.field``), so a single plain-text file can override any
default.  Angles are stored in radians internally but serialized in
degrees under a ``_deg``-suffixed key, which keeps files readable
(``ground.max_angle_deg=5.0``).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .ground import GroundSegConfig
from .kitti import CALIB_ANGLE_DEFAULT
from .normals import WindowLimits
from .projection import BevConfig, SphericalConfig
from .registration import RegistrationConfig


@dataclass
class PipelineConfig:
    """All stage configurations plus the few pipeline-level scalars.

    ``model_window`` is the map retention window in seconds;
    ``calib_angle`` the vertical beam correction applied to raw scans;
    ``ground_cost`` switches the BEV ground term on (off reduces the
    optimization to the spherical cost alone, the comparison baseline).
    """

    spherical: SphericalConfig = field(default_factory=SphericalConfig)
    bev: BevConfig = field(default_factory=BevConfig)
    ground: GroundSegConfig = field(default_factory=GroundSegConfig)
    normals: WindowLimits = field(default_factory=WindowLimits)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    model_window: float = 10.0
    calib_angle: float = CALIB_ANGLE_DEFAULT
    ground_cost: bool = True


_SECTIONS = {
    "spherical": "spherical",
    "bev": "bev",
    "ground": "ground",
    "normals": "normals",
    "registration": "registration",
}

# angle-valued dataclass fields: stored in radians, serialized in degrees
_ANGLE_FIELDS = {
    ("spherical", "fov_up"),
    ("spherical", "fov_down"),
    ("ground", "max_angle"),
}

# top-level scalars that do not belong to a stage dataclass:
# key -> (attribute, parser, is_angle)
_SCALARS = {
    "model.window": ("model_window", float, False),
    "kitti.calib_angle": ("calib_angle", float, True),
    "pipeline.ground_cost": ("ground_cost", bool, False),
}


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_lines(cfg: PipelineConfig) -> list[str]:
    """The complete configuration as sorted ``key=value`` lines."""
    lines = []
    for section, attr in _SECTIONS.items():
        sub = getattr(cfg, attr)
        for f in dataclasses.fields(sub):
            value = getattr(sub, f.name)
            if (section, f.name) in _ANGLE_FIELDS:
                lines.append(f"{section}.{f.name}_deg={math.degrees(value)!r}")
            else:
                lines.append(f"{section}.{f.name}={_format_value(value)}")
    for key, (attr, _, is_angle) in _SCALARS.items():
        value = getattr(cfg, attr)
        if is_angle:
            lines.append(f"{key}_deg={math.degrees(value)!r}")
        else:
            lines.append(f"{key}={_format_value(value)}")
    return sorted(lines)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text("\n".join(config_lines(cfg)) + "\n")


def _assign(cfg: PipelineConfig, key: str, raw: str, where: str) -> None:
    plain = key[: -len("_deg")] if key.endswith("_deg") else key
    degrees = key.endswith("_deg")
    if plain in _SCALARS:
        attr, parser, is_angle = _SCALARS[plain]
        if is_angle != degrees:
            raise ValueError(f"{where}: unknown key {key!r}")
        value = _parse_bool(raw) if parser is bool else parser(raw)
        if is_angle:
            value = math.radians(value)
        setattr(cfg, attr, value)
        return
    if "." not in plain:
        raise ValueError(f"{where}: unknown key {key!r}")
    section, name = plain.split(".", 1)
    if section not in _SECTIONS:
        raise ValueError(f"{where}: unknown key {key!r}")
    sub = getattr(cfg, _SECTIONS[section])
    names = {f.name for f in dataclasses.fields(sub)}
    if name not in names or degrees != ((section, name) in _ANGLE_FIELDS):
        raise ValueError(f"{where}: unknown key {key!r}")
    current = getattr(sub, name)
    if isinstance(current, bool):
        value = _parse_bool(raw)
    elif isinstance(current, int):
        value = int(raw)
    elif isinstance(current, float):
        value = math.radians(float(raw)) if degrees else float(raw)
    else:
        value = raw
    setattr(sub, name, value)


def parse_config(text: str, where: str = "<config>") -> PipelineConfig:
    """Configuration from ``key=value`` text; unset keys keep defaults.

    Raises ``ValueError`` naming the offending line for unknown keys and
    unparseable values.  Re-runs each stage dataclass's own validation
    after assignment, so out-of-range values fail the same way they
    would when constructed directly.
    """
    cfg = PipelineConfig()
    for ln, line in enumerate(text.splitlines()):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{where}:{ln + 1}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            _assign(cfg, key, raw, f"{where}:{ln + 1}")
        except ValueError as err:
            if "unknown key" in str(err):
                raise
            raise ValueError(f"{where}:{ln + 1}: bad value for {key!r}: {raw!r}") from err
    for attr in _SECTIONS.values():
        sub = getattr(cfg, attr)
        if hasattr(sub, "__post_init__"):
            sub.__post_init__()
    return cfg


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(), where=str(path))
