"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: configuration/input problems exit 2,
architecture/compatibility problems exit 3, numerical divergence exits 4.
"""


class CrybError(Exception):
    """Base class for all pipeline errors."""


# -- input / configuration problems (exit code 2) --------------------------

class ConfigError(CrybError):
    """Invalid configuration, manifest, or input file."""


class MalformedWav(ConfigError):
    """WAV container is damaged: bad header or truncated data."""


class UnsupportedEncoding(ConfigError):
    """WAV payload is not 16-bit PCM with 1 or 2 channels."""


class UpsamplingRequested(ConfigError):
    """resample() only downsamples; target rate exceeded the source rate."""


class InvalidSpec(ConfigError):
    """A CrySpec or corpus layout violates its invariants."""


class WrongLength(ConfigError):
    """Clip does not have the exact sample count the operation requires."""


class BadBandIndex(ConfigError):
    """Mel band index outside 0..39."""


class BadClassIndex(ConfigError):
    """Class label outside the valid range for the logit vector."""


class BadShape(ConfigError):
    """Tensor shape unsuitable for the requested initialization."""


class BadConfig(ConfigError):
    """Model or training configuration violates its invariants."""


class TooFewSubjects(ConfigError):
    """A class has fewer than three subjects; no disjoint split exists."""


class EmptyClass(ConfigError):
    """A class has no rows available to the balanced sampler."""


class SingleClass(ConfigError):
    """SVM training requires both classes present."""


class EmptySet(ConfigError):
    """Evaluation called on zero rows."""


class SilentSignal(ConfigError):
    """Noise mixing needs a signal with nonzero power."""


class SilentNoise(ConfigError):
    """Noise mixing needs noise with nonzero power."""


class DegenerateData(ConfigError):
    """PCA called on data with zero total variance."""


class MissingArtifacts(ConfigError):
    """Report generation found no experiment outputs to collate."""


# -- architecture / compatibility problems (exit code 3) -------------------

class CompatError(CrybError):
    """Model artifacts incompatible with the requested operation."""


class ShapeMismatch(CompatError):
    """Operand shapes incompatible with the operation."""


class CorruptCheckpoint(CompatError):
    """Checkpoint magic, header, or payload failed validation."""


class ArchMismatch(CompatError):
    """Source checkpoint architecture does not match the target config."""


# -- numerical problems (exit code 4) ---------------------------------------

class DivergedLoss(CrybError):
    """Training loss became NaN or infinite."""


class NoForwardRecorded(CrybError):
    """backward() called on a tensor with no recorded forward graph."""
