"""rmvl: two-stage residual-motion video generation.

A single input frame is translated into future frames conditioned on
forecast structure maps, then a spatiotemporal refiner makes the clip
temporally coherent.  Both stages predict gated (mask, content)
residuals and train against conditional Wasserstein critics.
"""

from .conditions import (ForecasterCheckpoint, Pose, PoseSequence,
                         forecast_poses, render_heatmaps, render_sequence,
                         train_pose_forecaster)
from .config import DatasetConfig, TrainConfig
from .corpus import ClipMotion, DatasetManifest, pose_at, synthesize_dataset
from .forecaster import (GMArchitecture, GMCheckpoint, ImageEmbedding,
                         MotionEmbedding, MotionForecaster, analogy_embed,
                         decode_residual, encode_image, encode_motion,
                         forecast_frame)
from .losses import (CriticArchitecture, CriticCheckpoint, LossReport,
                     RandomConvFeatures, critic_image, critic_video,
                     gradient_penalty, loss_critic_image, loss_critic_video,
                     loss_feature_similarity, loss_generator_image,
                     loss_generator_refine, loss_reconstruction,
                     loss_sparsity, toy_feature_extractors)
from .metrics import (FlattenEmbedder, RandomConvEmbedder, acd_content,
                      acd_identity, mse, psnr)
from .refiner import ClipRefiner, GRArchitecture, GRCheckpoint, refine_clip
from .residual import (Frame, MotionMap, MotionMapSequence,
                       ResidualDecomposition, ShapeError,
                       SpatiotemporalResidual, VideoClip, blend, compose_clip,
                       compose_difference, compose_frame, load_clip,
                       load_frame, save_clip, save_frame)
from .training import (evaluate_split, generate_detailed, generate_video,
                       sample_time_jump, train_stage1, train_stage2)

__version__ = "0.1.0"
