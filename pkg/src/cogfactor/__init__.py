"""Multi-study linear decoding with a shared latent space.

Three linear layers: a fixed multi-scale projection built from spatial
dictionaries, a learned embedding shared by all studies (trained with
latent Dropout), and one multinomial head per study.
"""

from cogfactor.errors import CogfactorError
from cogfactor.model import FactoredModel, PlainModel
from cogfactor.projection import Dictionary, ProjectionOperator, assemble_multiscale

__version__ = "0.1.0"

__all__ = [
    "CogfactorError",
    "Dictionary",
    "FactoredModel",
    "PlainModel",
    "ProjectionOperator",
    "assemble_multiscale",
]
