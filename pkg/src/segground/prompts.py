"""Knowledge-based prompts that drive Q&A generation for the two
question-answering perspectives.

Every prompt embeds the entity names and their knowledge paragraphs, states
the perspective-specific requirement, and fixes the output contract to
``Question:`` / ``Answer:`` lines so completions can be parsed mechanically.
Multi-label prompts additionally instruct the generator to consider each
label and their interrelationships.  P3 prompts carry one in-context example
chosen deterministically from a pool; P4 prompts describe the visual prompt
instead.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import UnknownLabelError
from .knowledge import KnowledgeBase

MISSING_KNOWLEDGE = "No additional knowledge available."

# Question from a worked single-label case; the answer shows the grounded
# markup the generator is asked to imitate.
DEFAULT_IN_CONTEXT_EXAMPLES = (
    "Question: Could you identify the organ in the image that has rhythmic "
    "sequences of contractions that propagate through the atrioventricular "
    "node and conduction system?\n"
    "Answer: The organ is the heart. The rhythmic contractions visible in "
    "the image originate at the sinoatrial node and propagate through the "
    "atrioventricular node and the conduction system, which is "
    "characteristic of cardiac muscle.",
)

_OUTPUT_CONTRACT = (
    "Write exactly one question and one answer, in a tone as if you could "
    "see the image, even though you only have access to the text. Mention "
    "every entity name verbatim in the answer so it can be grounded. Use "
    "this format:\n"
    "Question: <the question>\n"
    "Answer: <the answer>"
)

_P3_REQUIREMENT_SINGLE = (
    "The question must identify the organ or lesion through a complex "
    "question about its appearance, location or function, without naming it "
    "directly. The answer must name the entity and give the analytical "
    "reason."
)

_P3_REQUIREMENT_MULTI = (
    "The question must identify the organs or lesions through a complex "
    "question about their appearance, location or function, without naming "
    "them directly. The answer must name every entity and give the "
    "analytical reasons. The generated questions and answers must consider "
    "each label and their interrelationships."
)

_P4_REQUIREMENT_SINGLE = (
    "A visual prompt (a bounding box or a point) marks the entity in the "
    "image. The question must ask about the marked region and rely on the "
    "visual prompt for reference. The answer must analyze the visual "
    "content of the marked region and name the entity."
)

_P4_REQUIREMENT_MULTI = (
    "A visual prompt (a bounding box or a point) marks the entities in the "
    "image. The question must ask about the marked region and rely on the "
    "visual prompt for reference. The answer must analyze the visual "
    "content of the marked region and name every entity. The generated "
    "questions and answers must consider each label and their "
    "interrelationships."
)


@dataclass(frozen=True)
class GenerationPrompt:
    """Rendered prompt plus the fields it was assembled from."""

    perspective: str  # "P3" or "P4"
    labels: tuple[str, ...]
    knowledge: str
    multi_label: bool
    in_context_example: str | None
    text: str

    def __post_init__(self):
        if self.perspective not in ("P3", "P4"):
            raise ValueError(f"perspective must be P3 or P4, got {self.perspective!r}")
        if self.multi_label != (len(self.labels) > 1):
            raise ValueError("multi_label flag must mirror the label count")


def _knowledge_block(labels, kb: KnowledgeBase, strict: bool) -> str:
    lines = []
    for label in labels:
        entry = kb.get(label)
        if entry is None:
            if strict:
                raise UnknownLabelError(label)
            lines.append(f"{label}: {MISSING_KNOWLEDGE}")
        else:
            lines.append(f"{label}: {entry.text}")
    return "\n".join(lines)


def build_generation_prompt(
    perspective: str,
    labels,
    kb: KnowledgeBase,
    examples=DEFAULT_IN_CONTEXT_EXAMPLES,
    rng_seed: int = 0,
    strict: bool = True,
) -> GenerationPrompt:
    """Assemble the generation prompt for one image's labels.

    Unknown labels raise in strict mode; otherwise a placeholder line keeps
    the prompt structure intact.  The P3 in-context example is drawn from
    ``examples`` by the seed, so identical inputs render identical prompts.
    """
    labels = tuple(labels)
    if not labels:
        raise ValueError("need at least one label")
    if perspective not in ("P3", "P4"):
        raise ValueError(f"perspective must be P3 or P4, got {perspective!r}")
    multi = len(labels) > 1
    knowledge = _knowledge_block(labels, kb, strict)

    if perspective == "P3":
        requirement = _P3_REQUIREMENT_MULTI if multi else _P3_REQUIREMENT_SINGLE
    else:
        requirement = _P4_REQUIREMENT_MULTI if multi else _P4_REQUIREMENT_SINGLE

    noun = "entities" if multi else "entity"
    parts = [
        "You are a medical expert writing a question and answer about a "
        f"medical image. The image contains the following {noun}: "
        f"{', '.join(labels)}.",
        f"Reference knowledge:\n{knowledge}",
        requirement,
        _OUTPUT_CONTRACT,
    ]

    example = None
    if perspective == "P3" and examples:
        example = random.Random(rng_seed).choice(tuple(examples))
        parts.append(f"Example:\n{example}")

    return GenerationPrompt(
        perspective=perspective,
        labels=labels,
        knowledge=knowledge,
        multi_label=multi,
        in_context_example=example,
        text="\n\n".join(parts),
    )
