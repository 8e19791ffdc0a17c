from __future__ import annotations

import string

import pytest

from crrefine.templateio import TemplateError, load_fixture_text, load_template, render_template

TEMPLATE_FIELDS = {
    "attack_verifier.txt": ["analysis", "attack_description", "threat_model"],
    "diff_analysis_instruction.txt": [],
    "educational_value.txt": ["answer", "instruction", "query"],
    "fill_cr_instruction.txt": [],
    "hint_distill.txt": ["reference"],
    "hint_select.txt": ["catalog", "query"],
    "judge_fill_cr.txt": ["draft", "reference"],
    "outline_revision_instruction.txt": [],
    "rationale_augmentation.txt": ["answer", "instruction", "principles", "query"],
    "rationale_principles.txt": [],
    "security_relevance.txt": ["consequences_if_not_revised", "reason_for_change"],
}


@pytest.mark.parametrize("name", sorted(TEMPLATE_FIELDS))
def test_template_loads_and_is_nonempty(name):
    text = load_template(name)
    assert text.strip()


@pytest.mark.parametrize("name", sorted(TEMPLATE_FIELDS))
def test_template_placeholders_are_exactly_declared(name):
    text = load_template(name)
    fields = sorted({f for _, f, _, _ in string.Formatter().parse(text) if f})
    assert fields == TEMPLATE_FIELDS[name]


@pytest.mark.parametrize("name", sorted(TEMPLATE_FIELDS))
def test_template_renders_without_stray_braces(name):
    subs = {field: f"<{field.upper()}>" for field in TEMPLATE_FIELDS[name]}
    rendered = render_template(name, **subs)
    for field, value in subs.items():
        assert value in rendered
    # every brace must belong to a consumed placeholder
    assert "{" not in rendered
    assert "}" not in rendered


def test_unknown_template_is_an_error():
    with pytest.raises(TemplateError, match="unknown template"):
        load_template("no_such_template.txt")


def test_missing_substitution_is_an_error():
    with pytest.raises(TemplateError, match="missing substitution"):
        render_template("judge_fill_cr.txt", draft="only the draft")


def test_extra_substitutions_are_ignored():
    rendered = render_template("fill_cr_instruction.txt", unused="value")
    assert rendered == load_template("fill_cr_instruction.txt")


def test_fixture_text_loader():
    text = load_fixture_text("root_causes.txt")
    assert text.strip()
    with pytest.raises(TemplateError, match="unknown fixture"):
        load_fixture_text("no_such_fixture.txt")


def test_instruction_templates_name_their_answer_sections():
    fill = load_template("fill_cr_instruction.txt")
    assert "REASON FOR CHANGE" in fill
    assert "SUMMARY OF CHANGE" in fill
    assert "CONSEQUENCES IF NOT REVISED" in fill

    diff = load_template("diff_analysis_instruction.txt")
    assert "REASON FOR CHANGE" in diff
    assert "CONSEQUENCES IF NOT REVISED" in diff
    assert "SUMMARY OF CHANGE" not in diff

    outline = load_template("outline_revision_instruction.txt")
    assert "summarize the necessary changes" in outline
