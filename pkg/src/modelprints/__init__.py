"""modelprints: fingerprint extraction and attribution for image upscalers.

Workhorse entry points are re-exported here; submodules stay importable for
the long tail (layer factories under ``modelprints.nn``, report formatters,
CSV writers).
"""

__version__ = "0.1.0"

from .attribution import (AttributorConfig, evaluate_grouped,
                          extract_embeddings, embedding_ratio_matrix,
                          load_attributor, save_attributor, seed_triplet_eval,
                          train_attributor, unseen_model_eval)
from .errors import DataError, DivergedError, ToolkitError, UsageError
from .image import (bicubic_resample, corpus_stats, degrade, gaussian_blur,
                    grayscale_entropy, lanczos_resample, load_png,
                    png_bits_per_pixel, save_png, to_grayscale)
from .manifest import (Manifest, SourceImage, SplitConfig, ingest_corpus,
                       load_manifest, save_manifest)
from .metrics import (cross_distance, distance_ratio, distance_ratio_matrix,
                      intra_distance)
from .parsing import (ParserTask, default_task_grid, evaluate_parser,
                      load_parser, make_split, save_parser, train_parser)
from .pipeline import (ExperimentConfig, build_dataset,
                       load_experiment_config, run_experiment,
                       save_experiment_config)
from .prnu import (FingerprintDb, PrnuConfig, attribute_nearest,
                   build_fingerprint, load_fingerprint_db, prnu_seed_eval,
                   residual, save_fingerprint_db)
from .srtrain import (LossSpec, build_discriminator, build_sr_generator,
                      composite_loss, resnet_style_perceptual, train_sr_model)
from .tsne import TsneConfig, tsne, tsne_export
from .zoo import ModelSpec, Zoo, ZooGrid, build_zoo
