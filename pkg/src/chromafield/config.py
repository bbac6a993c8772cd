"""Pipeline configuration: TOML or JSON files, resolved to dataclasses.

TOML support is a deliberately small reader covering the subset these config
files use (tables, dotted keys are not needed, scalars, homogeneous arrays,
inline comments); full documents written by humans for this tool stay well
inside it. JSON is accepted everywhere a TOML file is.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .distill import DistillConfig
from .train_luma import TrainConfig


def _parse_toml_value(text: str, where: str):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ValueError(f"{where}: unterminated array: {text!r}")
        inner = text[1:-1].strip()
        if not inner:
            return []
        parts, depth, cur = [], 0, ""
        for ch in inner:
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
            if ch == "," and depth == 0:
                parts.append(cur)
                cur = ""
            else:
                cur += ch
        parts.append(cur)
        return [_parse_toml_value(p, where) for p in parts]
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{where}: cannot parse value {text!r}") from None


def _strip_comment(line: str) -> str:
    out, in_str = [], False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_toml(text: str, name: str = "<toml>") -> dict:
    """Parse the TOML subset used by chromafield config files."""
    doc: dict = {}
    table = doc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        where = f"{name}:{lineno}"
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            path = line[1:-1].strip()
            if not path:
                raise ValueError(f"{where}: empty table name")
            table = doc
            for part in path.split("."):
                table = table.setdefault(part.strip(), {})
            continue
        if "=" not in line:
            raise ValueError(f"{where}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        table[key.strip().strip('"')] = _parse_toml_value(value, where)
    return doc


def load_structured(path) -> dict:
    """Read a JSON or TOML document by extension."""
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".json":
        return json.loads(text)
    if p.suffix.lower() == ".toml":
        return parse_toml(text, str(p))
    # fall back on content sniffing
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    return parse_toml(text, str(p))


@dataclass
class GridSpec:
    resolution: list = field(default_factory=lambda: [64, 64, 64])
    sh_degree: int = 1
    bbox_min: list | None = None  # None = take the scene/dataset bbox
    bbox_max: list | None = None
    density_init: float = -5.0
    sh0_init: float = 0.5

    @property
    def basis_size(self) -> int:
        return (self.sh_degree + 1) ** 2


@dataclass
class TeacherSpec:
    kind: str = "oracle"  # "oracle" or "dir"
    path: str = ""  # teacher directory when kind == "dir"
    sigma_h_deg: float = 15.0
    sigma_c: float = 0.1


@dataclass
class MetricsSpec:
    delta_short: int = 1
    delta_long: int = 7
    mode: str = "chroma"


@dataclass
class RenderSpec:
    trajectory: str = "orbit"  # "orbit" or "train"
    frame_count: int = 30
    radius: float = 1.05
    height: float = 0.25
    target: list = field(default_factory=lambda: [0.0, -0.85, 0.0])


@dataclass
class PipelineConfig:
    dataset_dir: str = ""
    output_dir: str = ""
    grid: GridSpec = field(default_factory=GridSpec)
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    render: RenderSpec = field(default_factory=RenderSpec)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {
            "grid": GridSpec,
            "teacher": TeacherSpec,
            "train": TrainConfig,
            "distill": DistillConfig,
            "metrics": MetricsSpec,
            "render": RenderSpec,
        }
        kwargs: dict = {}
        for key, value in doc.items():
            if key in known:
                kwargs[key] = known[key](**value)
            elif key in ("dataset_dir", "output_dir", "seed"):
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(load_structured(path))

    def to_dict(self) -> dict:
        return asdict(self)

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
