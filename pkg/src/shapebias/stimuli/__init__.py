from .types import (
    CorruptionConfig,
    DatasetError,
    NavonConfig,
    PatchworkConfig,
    SplitPlan,
    Stimulus,
    StimulusSet,
    item_rng,
    quantize,
)
from .glyphs import LETTERS, glyph_bitmap, render_glyph
from .navon import generate_navon, navon_item_count, render_navon
from .patchwork import generate_patchwork, patchwork_item_count, render_patchwork_item
from .corruption import (
    CORRUPTION_NAMES,
    apply_corruption,
    corruption_item_count,
    generate_corruption_set,
)
from .raster import (
    SILHOUETTE_NAMES,
    TEXTURE_NAMES,
    resize_bilinear,
    rotate_bilinear,
    silhouette_mask,
    texture_field,
    value_noise,
)
from .splits import make_split, subsample_fraction
from .io import read_dataset, write_dataset
