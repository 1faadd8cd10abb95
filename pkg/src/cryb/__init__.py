"""Infant-cry classification toolkit.

MFCC features, a small residual network trained with a from-scratch
autodiff core, transfer initialization from source tasks, an RBF-SVM
baseline, robustness sweeps, and embedding analysis, all driven by the
``cryb`` command-line tool.
"""

__version__ = "0.1.0"

from .audio import AudioClip, read_wav, resample, write_wav
from .errors import (ArchMismatch, BadConfig, CompatError, ConfigError,
                     CorruptCheckpoint, CrybError, DivergedLoss,
                     ShapeMismatch, TooFewSubjects)
from .features import MelFilterbank, MfccMatrix, ablate_band, mfcc
from .model import (Res8, Res8Config, build_res8, forward_embed,
                    load_checkpoint, predict_labels, save_checkpoint,
                    transfer_load)
from .svm import SvmModel, load_svm, save_svm, smo_train, svm_grid_search
from .synth import CrySpec, Manifest, derive_rng, synth_corpus, synth_cry
from .training import TrainConfig, balanced_sampler, split_subjects, train
from .evaluation import (EvalReport, evaluate, mix_noise, noise_sweep,
                         pca_fit, uar_from_confusion)

__all__ = [
    "__version__",
    "AudioClip", "read_wav", "resample", "write_wav",
    "ArchMismatch", "BadConfig", "CompatError", "ConfigError",
    "CorruptCheckpoint", "CrybError", "DivergedLoss", "ShapeMismatch",
    "TooFewSubjects",
    "MelFilterbank", "MfccMatrix", "ablate_band", "mfcc",
    "Res8", "Res8Config", "build_res8", "forward_embed", "load_checkpoint",
    "predict_labels", "save_checkpoint", "transfer_load",
    "SvmModel", "load_svm", "save_svm", "smo_train", "svm_grid_search",
    "CrySpec", "Manifest", "derive_rng", "synth_corpus", "synth_cry",
    "TrainConfig", "balanced_sampler", "split_subjects", "train",
    "EvalReport", "evaluate", "mix_noise", "noise_sweep", "pca_fit",
    "uar_from_confusion",
]
