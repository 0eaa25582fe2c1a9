"""Instruction and response templates for the two template-driven perspectives.

The strings are fixed wire text: tests pin them byte-for-byte, so any edit
here is a dataset-format change.  ``{}`` is the single substitution slot;
box/point instruction templates carry no slot.  The box-prompt and
point-prompt response families share the same six strings.
"""

from __future__ import annotations

from .grounded_text import P_CLOSE, P_OPEN, SEG

P1_INSTRUCTIONS = (
    "Please segment the {} in the image.",
    "Can you identify and segment the distinct {} elements within the image?",
    "I need the {} in the image to be categorized into individual segments.",
    "Could you analyze the image and segment the {} into separate segments?",
    "Can you perform an image segmentation to extract the {}?",
    "Segment the {} in the given image for analysis.",
    "Segment and highlight the {} in the image.",
    "Cut out the {} from the image and display it.",
    "Segment the {} regions in the medical image.",
)

P1_RESPONSES_SINGLE = (
    "The image includes {}. The segmentation result is shown in the image.",
    "The segmentation result is displayed in the image, which includes {}.",
    "You can see the segmentation result in the image, along with {}.",
    "The image shows the segmentation result, which includes {}.",
    "The segmentation result in the image includes {}.",
    "Within the image, {} is present, and the segmentation result is visible.",
)

P1_RESPONSES_MULTI = (
    "The image includes {}. The segmentation results are shown in the image.",
    "The segmentation results are displayed in the image, which include {}.",
    "You can see the segmentation results in the image, along with {}.",
    "The image shows the segmentation results, which include {}.",
    "The segmentation results in the image include {}.",
    "Within the image, {} are present, and the segmentation results are visible.",
)

P2_BOX_INSTRUCTIONS = (
    "Please segment out the organs or lesions in the bounding box.",
    "Please identify and segment the organs or lesions within the given bounding box.",
    "Segment the organs or lesions that are located inside the bounding box.",
    "Can you segment out the organs or lesions found in the specified bounding box?",
    "Please perform segmentation of the organs or lesions within this bounding box.",
    "Segment any organs or lesions present within the provided bounding box.",
    "Conduct segmentation of organs or lesions contained in the bounding box.",
    "Could you segment the organs or lesions that are inside the bounding box?",
)

P2_POINT_INSTRUCTIONS = (
    "Please segment out the organs or lesions at the specified point.",
    "Please identify and segment the organs or lesions at the given point.",
    "Segment the organs or lesions that are located at the specified point.",
    "Can you segment out the organs or lesions found at the specified point?",
    "Please perform segmentation of the organs or lesions at this point.",
    "Segment any organs or lesions present at the provided point.",
    "Conduct segmentation of organs or lesions at the specified point.",
    "Could you segment the organs or lesions at the specified point?",
)

P2_RESPONSES = (
    "The result of segmentation is {} and is shown in the image.",
    "The outcome of the segmentation is {} and is displayed in the image.",
    "The segmentation result is {} and is shown in the image.",
    "The organs or lesions have been segmented and the result is {}.",
    "The segmentation output is {} and is present in the image.",
    "Segmentation results in {}, which is shown in the image.",
)

P2_BOX_RESPONSES = P2_RESPONSES
P2_POINT_RESPONSES = P2_RESPONSES

ALL_TEMPLATE_FAMILIES = {
    "p1_instructions": P1_INSTRUCTIONS,
    "p1_responses_single": P1_RESPONSES_SINGLE,
    "p1_responses_multi": P1_RESPONSES_MULTI,
    "p2_box_instructions": P2_BOX_INSTRUCTIONS,
    "p2_box_responses": P2_BOX_RESPONSES,
    "p2_point_instructions": P2_POINT_INSTRUCTIONS,
    "p2_point_responses": P2_POINT_RESPONSES,
}


def fill(template: str, value: str) -> str:
    """Substitute the single ``{}`` slot; templates without a slot pass through."""
    if template.count("{}") > 1:
        raise ValueError(f"template has multiple slots: {template!r}")
    return template.replace("{}", value)


def join_labels(labels) -> str:
    labels = list(labels)
    if not labels:
        raise ValueError("need at least one label")
    return ", ".join(labels)


def wrap_label(label: str) -> str:
    return f"{P_OPEN}{label}{SEG}{P_CLOSE}"


def join_wrapped_labels(labels) -> str:
    labels = list(labels)
    if not labels:
        raise ValueError("need at least one label")
    return ", ".join(wrap_label(label) for label in labels)
