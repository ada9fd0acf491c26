"""mtlcap: multi-task Arabic image captioning at desk scale.

A shared convolutional encoder is trained sequentially on action
classification, object classification and caption generation (two-layer
LSTM decoder with additive attention), then captions are scored with
corpus-level BLEU-2/3/4 and METEOR. Pure numpy, hand-written gradients,
reproducible from a single seed.
"""

from .corpus import (
    CaptionRecord,
    LabeledImage,
    SplitSpec,
    convert_flickr_token_file,
    load_caption_manifest,
    load_cifar_batches,
    load_labeled_folder,
    subsample_train,
    write_manifest,
)
from .decoder import (
    AttentionParams,
    AttentionStep,
    DecoderParams,
    attend,
    beam_decode,
    greedy_decode,
    init_attention,
    init_decoder,
    init_state,
    teacher_forced_loss,
)
from .encoder import SharedEncoderParams, encode, init_encoder
from .features import BackboneSpec, FeatureGrid, cache_read, cache_write, extract_features, toy_backbone
from .heads import ClassifierHeadParams, classification_loss, head_forward, init_head
from .metrics import EvalReport, corpus_bleu, evaluate_corpus, meteor_score
from .text import (
    EmbeddingMatrix,
    TokenSequence,
    Vocabulary,
    build_vocabulary,
    encode_caption,
    load_word_vectors,
    normalize_arabic,
    tokenize,
)
from .training import (
    CaptionDataset,
    ClassifierDataset,
    ModelCheckpoint,
    PhaseReport,
    TrainConfig,
    adam_step,
    run_pipeline,
    train_phase,
)

__version__ = "0.1.0"
