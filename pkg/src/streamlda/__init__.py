"""Streaming LDA classification engine for extreme class counts.

Submodules:

* ``core``     shared domain types, errors, and the SPD solve
* ``slda``     per-sample streaming training, translation, exact inference
* ``batch``    vectorized batch training with sequential-equivalence contract
* ``convert``  FC-head <-> LDA conversion and the binary posterior identity
* ``ann``      LSH shortlisting of nearest class means for sub-linear inference
* ``io``       XEMB/XMDL binary formats and the synthetic data generator
* ``baseline`` softmax-regression reference head
* ``cli``      command-line surface (train/eval/convert/ablate/bench)

Submodules load lazily so that the CLI can pin BLAS thread counts through
environment variables before numpy initializes.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("core", "slda", "batch", "convert", "ann", "io", "baseline", "cli")

__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_SUBMODULES))
