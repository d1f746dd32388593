"""Cross-domain knowledge tracing.

Trains a knowledge-tracing model on several source domains with causal
sequence normalization, aggregates their concept embeddings into shared
prototypes, and adapts to a data-scarce target domain by training only its
concept table.
"""

from .data import (BatchStream, DataError, DatasetSplit, DomainDataset,
                   DomainSpec, Interaction, InteractionSequence, ingest_csv,
                   load_domain, make_batches, save_domain, split_by_student,
                   window_and_filter)
from .metrics import accuracy, auc, proxy_a_distance
from .pipeline import (TrainConfig, TrainRun, adapt_target,
                       build_model_from_checkpoint, checkpoint_from_model,
                       eval_mode, evaluate, load_checkpoint, save_checkpoint,
                       train_phase1_cfl, train_phase2_refine,
                       train_target_scratch)
from .synth import SyntheticDomainConfig, generate_domain, generate_multisource

__version__ = "0.1.0"
