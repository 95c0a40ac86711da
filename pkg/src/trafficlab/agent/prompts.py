"""Prompt templates stored as UTF-8 text files with ``{name}`` placeholders.

The shipped templates are reconstructions of the prompt structure rather than
verbatim prompt texts. Point ``prompts_dir`` at a directory of replacements to
override any of them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from trafficlab.errors import TrafficlabError

TEMPLATE_NAMES = (
    "idea-generation",
    "idea-refinement",
    "code-generation",
    "code-refinement",
    "analysis-success",
    "analysis-failure",
)
DEFAULT_DIR = Path(__file__).with_name("prompts")

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class PromptRenderError(TrafficlabError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else ""


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def placeholders(self) -> tuple:
        return tuple(dict.fromkeys(_PLACEHOLDER.findall(self.text)))

    def render(self, **bindings) -> str:
        """Single-pass literal substitution; bound values are never re-scanned."""
        missing = [p for p in self.placeholders if p not in bindings]
        if missing:
            raise PromptRenderError(f"template {self.name!r}: unbound placeholder(s): {', '.join(missing)}")
        return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), self.text)


def render_prompt(template: PromptTemplate, bindings: dict) -> str:
    return template.render(**bindings)


def load_template(name: str, directory=None) -> PromptTemplate:
    path = Path(directory or DEFAULT_DIR) / f"{name}.txt"
    if not path.is_file():
        raise FileNotFoundError(f"prompt template not found: {path}")
    return PromptTemplate(name, path.read_text(encoding="utf-8"))


def load_templates(directory=None) -> dict:
    """All six templates plus ``system``; a custom directory may override any subset."""
    out = {}
    for name in TEMPLATE_NAMES + ("system",):
        custom = Path(directory) / f"{name}.txt" if directory else None
        out[name] = load_template(name, directory if custom and custom.is_file() else None)
    return out
