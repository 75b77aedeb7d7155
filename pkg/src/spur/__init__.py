"""Spatial audio front end: FOA scene synthesis, spectro-spatial covariance
features, a forward-only encoder, and an intensity-vector DoA oracle with
localization metrics."""

from .config import PipelineConfig, config_hash, load_pipeline_config
from .container import read_header, read_tensor, write_tensor
from .encoder import (
    EncoderConfig,
    EncoderTrace,
    EncoderWeights,
    TokenSequence,
    adapter_forward,
    conv_block_forward,
    encode,
    init_weights,
    load_weights,
    patchify,
    save_weights,
    token_count,
    transformer_forward,
)
from .errors import ValidationError
from .foa import (
    CANONICAL,
    ChannelConvention,
    FoaClip,
    Normalization,
    Ordering,
    Rotation3,
    load_foa_wav,
    rotate_field,
    save_foa_wav,
)
from .scene import (
    EventSpec,
    Keyframe,
    LabelRow,
    SceneSpec,
    SeldFrameLabels,
    corpus_stats,
    encode_source,
    export_metadata,
    import_metadata,
    load_scene_spec,
    render_scene,
)
from .seldeval import (
    DoaEstimate,
    SeldMetrics,
    angular_error,
    direction_from_angles,
    evaluate,
    intensity_doa,
)
from .spectral import MelBands, StftConfig, StftTensor, Window, mel_filterbank, stft
from .sscv import (
    CovarianceSeries,
    ExtractionConfig,
    SscvTensor,
    banded_covariance,
    devectorize,
    extract_features,
    smooth,
    vectorize,
)

__version__ = "0.1.0"
