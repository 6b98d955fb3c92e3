"""Emotion embeddings: a shared latent space for emotion label formats,
learned from multi-way label mapping, plus content encoders trained
against the frozen prediction heads."""
from .analysis import build_index, jacobi_eigh, pca_fit, pca_project, query_top_k
from .content import (ContentDataset, ContentEncoder, EncoderTrainConfig, encode_content, predict,
                      train_content_encoder, zero_shot_predict)
from .dataio import (generate_synthetic_pair, load_dataset, load_embedding_table, load_model, save_model,
                     split_dataset, synthetic_registry)
from .errors import DivergenceError, EmoError, ValidationError
from .evaluation import (EvalReport, SuiteConfig, evaluate_mapping, evaluate_supervised, evaluate_zero_shot,
                         pearson_r, run_suite)
from .formats import EmotionLabel, FormatRegistry, LabelBatch, LabelFormat, default_registry, normalize
from .mapper import MapperTrainConfig, MappingDataset, MultiWayMapper, train_mapper, translate

__version__ = "0.1.0"
