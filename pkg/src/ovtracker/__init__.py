"""Open-vocabulary multi-object tracking at the embedding level.

The package covers the full loop on synthetic desk-scale scenarios:
state-prompt attention weighting for classification, self-supervised
consistency training of an association head, an online appearance tracker,
and a localization/classification/association evaluation suite.
"""

from .core import (BoundingBox, Detection, FrameObservations, GroundTruthBox,
                   VideoSequence, iou, iou_matrix, nms)
from .promptattn import (ClassEmbeddingBank, FusionWeights, PiecewiseSchedule,
                         PromptPairSet, attention_weight, class_affinity,
                         fuse_probabilities, image_align_loss, piecewise_reweight,
                         weighted_text_loss)
from .consistency import (AssociationHead, ConsistencyConfig, ConsistencyGroup,
                          assignment_matrix, batch_loss, inter_loss, intra_loss,
                          loss_gradient, margin_loss, pair_consistency, row_softmax,
                          sgd_step, similarity_matrix, total_loss, trip_consistency,
                          triplet_similarity)
from .sampling import (ClusterModel, SamplingPlan, category_groups, enumerate_groups,
                       kmeans_cluster, sample_training_sequence, split_segments)
from .tracker import (Track, TrackerConfig, TrackerState, TrackRow, associate_frame,
                      bisoftmax_similarity, combined_similarity, track_sequence,
                      update_embedding, vote_trajectory_category)
from .metrics import (MatchLedger, MetricReport, assoc_a, cls_a, evaluate_tracking,
                      evaluation_report, loc_a, match_localization, teta)
from .synth import (Scenario, ScenarioConfig, generate_scenario,
                    standard_scenario_config)
from .training import (AblationVariant, TrainingRecord, run_ablation,
                       train_association_head)

__version__ = "0.1.0"
