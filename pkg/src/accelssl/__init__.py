"""Self-supervised pretraining methods and assessment protocols for
wearable accelerometer data."""

from .augment import (TransformKind, TransformParams, apply_transform,
                      sample_contrastive_pair, sample_multitask_batch)
from .data import (ChannelStats, DatasetSchema, FoldPlan, SensorSequence, Window,
                   WindowSet, compute_norm_stats, denormalize, load_dataset,
                   make_user_folds, make_windows, normalize, resample,
                   save_dataset, windows_from_sequences)
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .features import (FeatureMatrix, SimilarityMatrix, implicit_dimensionality,
                       layerwise_similarity, linear_cka, separability_gap,
                       separability_gap_from_features)
from .pretext import (ByolModel, MaskSpec, PretextMethod, build_pretext_model,
                      byol_step, info_nce, masked_mse, multitask_bce,
                      negative_cosine, normalized_mse, nt_xent)
from .protocols import (ImbalanceSpec, ProtocolConfig, imbalance_counts,
                        imbalance_subsets, limited_label_subset, macro_f1,
                        norm_ablation, rate_mismatch_variant, subsample_users,
                        subsample_windows)
from .runner import PreparedDataset, cross_validate, prepare_dataset, run, sweep
from .store import RunRecord, persist, read_records
from .synthetic import SyntheticConfig, generate_sequences, make_synthetic_dataset
from .training import (HyperparamCombo, TrainBudget, draw_combos, finetune,
                       lr_at, pretrain, supervised_train)

__version__ = "0.1.0"
