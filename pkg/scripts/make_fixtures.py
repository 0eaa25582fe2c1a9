#!/usr/bin/env python3
"""Regenerate the bundled fixture manifest and knowledge base.

Deterministic: re-running reproduces byte-identical files.  The manifest
holds 50 synthetic images (24x24 rasters, 1-3 labeled shapes each) covering
all eight modalities; labels all resolve in the knowledge base.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from segground.jsonio import write_jsonl  # noqa: E402
from segground.masks import BinaryMask, mask_to_wire  # noqa: E402

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "fixtures"

KNOWLEDGE = [
    ("heart", "The heart is a muscular organ in the chest that pumps blood through the circulatory system. It sits between the lungs, slightly left of the midline, and its rhythmic contractions are driven by the cardiac conduction system."),
    ("liver", "The liver is a large organ in the right upper abdomen. It filters blood from the digestive tract, produces bile, stores glycogen, and synthesizes plasma proteins."),
    ("lung", "The lungs are paired respiratory organs in the thorax where gas exchange occurs. Each lung is divided into lobes and surrounded by the pleura."),
    ("kidney", "The kidneys are paired retroperitoneal organs that filter waste from the blood, regulate fluid balance, and produce urine that drains through the ureters."),
    ("spleen", "The spleen is a lymphatic organ in the left upper abdomen. It filters aged blood cells, stores platelets, and supports the immune response."),
    ("brain tumor", "A brain tumor is an abnormal mass of tissue within the skull. Symptoms depend on location and can include headaches, seizures, and focal neurological deficits; treatment may combine surgery, radiation, and chemotherapy."),
    ("edema", "Edema is swelling caused by excess fluid trapped in tissue. Around brain lesions it appears as a region of altered signal surrounding the lesion core."),
    ("lung nodule", "A lung nodule is a small, roughly round growth in the lung, often found incidentally on imaging. Most nodules are benign, but size and growth rate guide follow-up."),
    ("polyp", "A polyp is a growth projecting from a mucous membrane, commonly found in the colon during endoscopy. Some polyps can progress to cancer and are removed when detected."),
    ("vertebrae", "Vertebrae are the bones of the spinal column that protect the spinal cord and support the trunk. Each vertebra has a body, an arch, and processes for muscle attachment."),
    ("ischemic stroke", "An ischemic stroke occurs when a blood vessel supplying the brain is blocked, depriving tissue of oxygen. Early imaging signs include restricted diffusion and loss of gray-white differentiation."),
    ("skin lesion", "A skin lesion is an area of skin that differs from the surrounding tissue, such as a mole, plaque, or ulcer. Dermoscopy helps distinguish benign lesions from melanoma."),
    ("optic disc", "The optic disc is the point on the retina where the optic nerve fibers exit the eye. It appears as a bright circular region on fundus photographs and has no photoreceptors."),
    ("bladder", "The urinary bladder is a hollow muscular organ in the pelvis that stores urine. Its wall stretches as it fills and contracts during voiding."),
]

MODALITIES = ("CT", "MRI", "Dermoscopy", "PET", "Endoscopy", "X-Ray", "Ultrasound", "Fundus")

SIZE = 24


def make_shape(rng: random.Random) -> BinaryMask:
    grid = np.zeros((SIZE, SIZE), dtype=bool)
    if rng.random() < 0.5:
        x0 = rng.randrange(0, SIZE - 6)
        y0 = rng.randrange(0, SIZE - 6)
        w = rng.randrange(3, min(10, SIZE - x0))
        h = rng.randrange(3, min(10, SIZE - y0))
        grid[y0 : y0 + h, x0 : x0 + w] = True
    else:
        cx = rng.randrange(4, SIZE - 4)
        cy = rng.randrange(4, SIZE - 4)
        r = rng.randrange(2, 5)
        yy, xx = np.mgrid[0:SIZE, 0:SIZE]
        grid = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return BinaryMask(grid)


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    entries = [
        {"label": label, "text": text, "source": "manual"} for label, text in KNOWLEDGE
    ]
    (FIXTURE_DIR / "knowledge.json").write_text(
        json.dumps(entries, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    rng = random.Random(20240 + 7)
    labels = [label for label, _ in KNOWLEDGE]
    records = []
    for i in range(50):
        n_labels = rng.choice((1, 1, 2, 2, 3))
        chosen = rng.sample(labels, n_labels)
        masks = []
        for label in chosen:
            masks.append({"label": label, "rle": mask_to_wire(make_shape(rng))})
        records.append(
            {
                "id": f"img{i:03d}",
                "image": f"images/img{i:03d}.png",
                "modality": MODALITIES[i % len(MODALITIES)],
                "masks": masks,
            }
        )
    write_jsonl(FIXTURE_DIR / "manifest_50.jsonl", records)
    print(f"wrote {FIXTURE_DIR / 'knowledge.json'} and {FIXTURE_DIR / 'manifest_50.jsonl'}")


if __name__ == "__main__":
    main()
