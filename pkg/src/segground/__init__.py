"""Grounded segmentation responses for medical imaging: response grammar,
mask geometry and losses, evaluation metrics, a dataset construction
pipeline, and a numerically verified aligner/decoder reference.
"""

from .grounded_text import (
    Entity,
    GroundedParseError,
    GroundedResponse,
    ParseDiagnostic,
    DiagnosticKind,
    extract_entities,
    parse_grounded,
    parse_with_diagnostics,
    serialize,
    strip_markup,
)
from .masks import (
    BinaryMask,
    Box,
    LossWeights,
    Point,
    SoftMask,
    bbox_of,
    bce_loss,
    dice_coeff,
    dice_loss,
    iou,
    mask_from_wire,
    mask_to_wire,
    mask_union,
    rle_decode,
    rle_encode,
    sample_point,
    total_loss,
)
from .metrics import (
    GroundedPrediction,
    MetricReport,
    ap50,
    grounding_counts,
    grounding_f1,
    merge_reports,
    miou,
)
from .text_metrics import bleu4, meteor_lite, rouge_l, tokenize, vqa_accuracy
from .knowledge import KnowledgeBase, KnowledgeEntry, load_knowledge
from .prompts import GenerationPrompt, build_generation_prompt
from .provider import (
    CompletionProvider,
    HttpCompletionProvider,
    StubCompletionProvider,
    prompt_key,
    write_stub_response,
)
from .forge import (
    ForgeResult,
    ManifestRecord,
    Modality,
    Perspective,
    Sample,
    derive_seed,
    forge_dataset,
    generate_qa,
    make_p1_sample,
    make_p2_sample,
    make_qa_sample,
    mix,
    read_manifest,
    read_samples,
    sample_from_record,
    sample_to_record,
    split,
    validate_samples,
    write_samples,
    wrap_labels_in_text,
)

__version__ = "0.1.0"
