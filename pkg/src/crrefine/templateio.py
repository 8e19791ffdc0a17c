"""Access to the prompt templates shipped with the package."""

from __future__ import annotations

import importlib.resources
import string


class TemplateError(Exception):
    """A template is missing or a placeholder was left unfilled."""


def load_template(name: str) -> str:
    """Return the exact text of a shipped template file."""
    resource = importlib.resources.files("crrefine").joinpath("templates", name)
    try:
        return resource.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateError(f"unknown template: {name}") from exc


def render_template(name: str, **subs: str) -> str:
    """Fill every ``{placeholder}`` in a template; unfilled placeholders are an error."""
    text = load_template(name)
    try:
        return string.Formatter().vformat(text, (), _StrictDict(subs))
    except KeyError as exc:
        raise TemplateError(f"template {name}: missing substitution {exc}") from exc


class _StrictDict(dict):
    def __missing__(self, key: str) -> str:
        raise KeyError(key)


def load_fixture_text(name: str) -> str:
    """Return the text of a shipped data fixture."""
    resource = importlib.resources.files("crrefine").joinpath("fixtures", name)
    try:
        return resource.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateError(f"unknown fixture: {name}") from exc
