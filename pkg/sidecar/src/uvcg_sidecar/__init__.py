"""Out-of-process host for latent encoders and embedders, speaking the
uvcg length-prefixed binary pipe protocol over stdin/stdout."""

__version__ = "0.1.0"

from .embedders import ConstantEmbedder, HashTextEmbedder, build_embedder
from .encoders import EchoEncoder, ModelFault, TorchScriptEncoder, build_encoder
from .selftest import run_selftest
from .server import serve

__all__ = [
    "__version__",
    "ConstantEmbedder",
    "EchoEncoder",
    "HashTextEmbedder",
    "ModelFault",
    "TorchScriptEncoder",
    "build_embedder",
    "build_encoder",
    "run_selftest",
    "serve",
]
