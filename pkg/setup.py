"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-NumPy fallback is selected
at import time); building it just makes the PGD inner loop faster.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = None
else:
    ext_modules = cythonize(
        [
            Extension(
                "uvcg._kernels",
                ["src/uvcg/_kernels.pyx"],
                # -ffp-contract=off: the fallback must match bit for bit,
                # so FMA contraction of a*b+c is not allowed here.
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
